"""Collaborative trajectory optimization and MPC for robot-partner handover.

A robot arm trajectory and a predicted partner trajectory are optimized
jointly under one shared objective inside a receding-horizon loop, with
bounded per-step meeting rewards solved by iteratively re-weighted least
squares. Includes a simulation benchmark with baseline policies, a partner
model calibration pipeline, a CLI, and a WebSocket sandbox service.
"""

from . import kernels
from .collab import (Anchors, CollaborativeProblem, ReAnchorTargets,
                     RobotAgent, SphereAgent, assemble,
                     equilibrium_consistency_check,
                     predictive_collaborative_cost, solve_joint)
from .config import (AgentWeights, InteractionWeights, MpcConfig, RobotWeights,
                     RunConfig, SimConfig, SolverConfig, config_hash,
                     load_config)
from .costs import (ResidualBlock, interaction_terminal_residual,
                    joint_limit_residual, joint_velocity_residual,
                    obstacle_residual, orientation_residual,
                    smoothness_residuals, sparse_reward, welsch_weight)
from .geometry import (Box, Capsule, GridSdf, ObstacleWorld, Pose, Rotation,
                       Sphere, desired_grasp_rotation, log_so3, signed_distance,
                       so3_exp)
from .kinematics import (SerialChain, SkeletonSphere, forward_kinematics,
                         load_fixture, planar_chain, skeleton_positions,
                         task_jacobian)
from .mpc import (MpcOptions, MpcState, Observation, detect_engage,
                  initial_state, mark_done, mpc_step)
from .problem import Layout, Linearizer, NlsProblem, ProblemContext
from .solver import (CallableSystem, SolveOptions, SolveReport, solve_irls,
                     solve_lm)
from .trajectory import (Clique, Trajectory, cliques, constant_trajectory,
                         linear_trajectory, time_shift_warm_start)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
