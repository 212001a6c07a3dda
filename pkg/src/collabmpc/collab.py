"""Assembly of the two-agent collaborative objective.

The joint objective over the robot trajectory and each partner trajectory is

    C = lam_robot * (robot limits, obstacle, smoothness, orientation)
      + lam_agent * (partner obstacle, smoothness, optional goal)
      + lam_interaction * terminal meeting term
      + lam_reward * per-step bounded meeting rewards

plus strong anchor priors pinning each knot 0 to the latest observation.
Per-step rewards act on the live interaction distance and on the re-anchor
targets (each party rewarded for reaching the other's observed start). The
data model carries a list of partners; handover fixtures use exactly one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .config import ANCHOR_WEIGHT, AgentWeights, InteractionWeights, RobotWeights
from .costs import KERNEL_WELSCH, ResidualBlock, welsch_weight
from .errors import ConfigError, DimensionMismatch
from .geometry import ObstacleWorld, Rotation, desired_grasp_rotation
from .kinematics import SerialChain, forward_kinematics
from .problem import Layout, Linearizer, NlsProblem, ProblemContext
from .solver import SolveOptions, solve_irls
from .trajectory import Trajectory


@dataclass(frozen=True)
class RobotAgent:
    chain: SerialChain
    trajectory: Trajectory
    weights: RobotWeights = field(default_factory=RobotWeights)

    def __post_init__(self):
        if self.trajectory.dim != self.chain.n_joints:
            raise DimensionMismatch("robot trajectory dim != chain joints")


@dataclass(frozen=True)
class SphereAgent:
    """Uncontrolled partner modeled as a floating sphere (hand position)."""

    trajectory: Trajectory
    radius: float = 0.10
    weights: AgentWeights = field(default_factory=AgentWeights)
    goal: np.ndarray | None = None

    def __post_init__(self):
        if self.trajectory.dim != 3:
            raise DimensionMismatch("sphere agent trajectory must be 3-d")
        if self.radius <= 0.0:
            raise ValueError("agent radius must be > 0")
        if self.goal is not None:
            object.__setattr__(self, "goal",
                               np.asarray(self.goal, dtype=float).reshape(3))


@dataclass(frozen=True)
class ReAnchorTargets:
    """Per-cycle observed starting points each party is rewarded to reach."""

    robot_target: np.ndarray  # partner's observed start (pull on the robot)
    agent_target: np.ndarray  # robot's observed end-effector start

    def __post_init__(self):
        object.__setattr__(self, "robot_target",
                           np.asarray(self.robot_target, dtype=float).reshape(3))
        object.__setattr__(self, "agent_target",
                           np.asarray(self.agent_target, dtype=float).reshape(3))


@dataclass(frozen=True)
class Anchors:
    """Latest observed robot configuration and partner positions."""

    robot_q: np.ndarray
    agent_pos: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "robot_q",
                           np.asarray(self.robot_q, dtype=float).reshape(-1))
        object.__setattr__(self, "agent_pos", tuple(
            np.asarray(p, dtype=float).reshape(3) for p in self.agent_pos))


@dataclass(frozen=True)
class CollaborativeProblem:
    robot: RobotAgent
    agents: tuple = ()
    world: ObstacleWorld = field(default_factory=ObstacleWorld)
    interaction: InteractionWeights = field(default_factory=InteractionWeights)

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        iw = self.interaction
        if min(iw.lam_robot, iw.lam_agent, iw.lam_interaction,
               iw.lam_reward) < 0.0:
            raise ConfigError("interaction weights must be >= 0")
        if iw.sigma <= 0.0:
            raise ConfigError("reward sigma must be > 0")
        for a in self.agents:
            if a.trajectory.horizon != self.horizon:
                raise DimensionMismatch("agents must share the robot horizon")
            if abs(a.trajectory.dt - self.dt) > 1e-12:
                raise DimensionMismatch("agents must share the robot dt")

    @property
    def horizon(self) -> int:
        return self.robot.trajectory.horizon

    @property
    def dt(self) -> float:
        return self.robot.trajectory.dt

    def trajectories(self) -> list[Trajectory]:
        return [self.robot.trajectory] + [a.trajectory for a in self.agents]

    def with_trajectories(self, trajs) -> "CollaborativeProblem":
        robot = replace(self.robot, trajectory=trajs[0])
        agents = tuple(replace(a, trajectory=t)
                       for a, t in zip(self.agents, trajs[1:]))
        return replace(self, robot=robot, agents=agents)


def default_anchors(p: CollaborativeProblem) -> Anchors:
    return Anchors(p.robot.trajectory.anchor,
                   tuple(a.trajectory.anchor for a in p.agents))


def default_targets(p: CollaborativeProblem,
                    anchors: Anchors | None = None) -> ReAnchorTargets | None:
    if not p.agents:
        return None
    anchors = anchors or default_anchors(p)
    ee0 = forward_kinematics(p.robot.chain, anchors.robot_q).translation
    return ReAnchorTargets(robot_target=anchors.agent_pos[0], agent_target=ee0)


def assemble(p: CollaborativeProblem, anchors: Anchors,
             targets: ReAnchorTargets | None = None,
             r_hat: Rotation | None = None) -> NlsProblem:
    """Build the stacked residual set for one planning cycle.

    Emits, per robot knot: joint-limit, obstacle and orientation terms; per
    robot clique: velocity (with distance-gated braking), acceleration and
    velocity-limit terms; analogous partner terms; the terminal meeting term;
    per-step rewards on the live distance and on the re-anchor targets; and
    anchor priors at knot 0. Zero-weight terms are skipped.
    """
    if p.robot.chain is None:
        raise ConfigError("robot chain is required")
    rw = p.robot.weights
    iw = p.interaction
    for name, val in (("obstacle", rw.obstacle), ("velocity", rw.velocity),
                      ("acceleration", rw.acceleration), ("joint", rw.joint),
                      ("orientation", rw.orientation), ("brake", rw.brake)):
        if val < 0.0:
            raise ConfigError(f"robot weight {name} must be >= 0")
    if anchors.robot_q.shape[0] != p.robot.chain.n_joints:
        raise DimensionMismatch("anchor config does not match chain")
    if len(anchors.agent_pos) != len(p.agents):
        raise DimensionMismatch("one anchor position per agent required")

    T = p.horizon
    n_knots = T + 2
    dims = [p.robot.chain.n_joints] + [3] * len(p.agents)
    layout = Layout(tuple(dims), n_knots)

    if r_hat is None and p.agents and iw.lam_robot * rw.orientation > 0.0:
        ee0 = forward_kinematics(p.robot.chain, anchors.robot_q).translation
        r_hat = desired_grasp_rotation(ee0, anchors.agent_pos[0])

    # distance-gated braking: velocity penalties stiffen as the observed
    # end-effector-to-partner distance closes, preparing an early stop
    brake_scale = 0.0
    if p.agents and iw.lam_reward > 0.0:
        ee0 = forward_kinematics(p.robot.chain, anchors.robot_q).translation
        d0 = float(np.linalg.norm(ee0 - anchors.agent_pos[0]))
        brake_scale = welsch_weight(d0, iw.sigma)

    blocks: list[ResidualBlock] = []
    lam_r = iw.lam_robot
    who = 0

    blocks.append(ResidualBlock("anchor", ((who, 0),), ANCHOR_WEIGHT,
                                target=anchors.robot_q))
    w_joint = lam_r * rw.joint
    w_obs = lam_r * rw.obstacle
    w_orient = lam_r * rw.orientation
    w_vel = lam_r * (rw.velocity + rw.brake * brake_scale)
    w_acc = lam_r * rw.acceleration
    for t in range(1, T + 2):
        if w_joint > 0.0:
            blocks.append(ResidualBlock("joint_limit", ((who, t),), w_joint))
        if w_obs > 0.0 and not p.world.empty:
            blocks.append(ResidualBlock("obstacle", ((who, t),), w_obs))
    if w_orient > 0.0 and r_hat is not None:
        for t in range(1, T + 1):
            blocks.append(ResidualBlock("orientation", ((who, t),), w_orient))
    for t in range(1, T + 1):
        if w_vel > 0.0:
            blocks.append(ResidualBlock(
                "velocity", ((who, t - 1), (who, t + 1)), w_vel))
        if w_acc > 0.0:
            blocks.append(ResidualBlock(
                "acceleration", ((who, t - 1), (who, t), (who, t + 1)), w_acc))
        if w_joint > 0.0:
            blocks.append(ResidualBlock(
                "joint_vel_limit", ((who, t - 1), (who, t + 1)), w_joint))

    for i, agent in enumerate(p.agents):
        aid = i + 1
        aw = agent.weights
        lam_a = iw.lam_agent
        blocks.append(ResidualBlock("anchor", ((aid, 0),), ANCHOR_WEIGHT,
                                    target=anchors.agent_pos[i]))
        if lam_a * aw.obstacle > 0.0 and not p.world.empty:
            for t in range(1, T + 2):
                blocks.append(ResidualBlock("obstacle", ((aid, t),),
                                            lam_a * aw.obstacle))
        wa_vel = lam_a * (aw.velocity + aw.brake * brake_scale)
        wa_acc = lam_a * aw.acceleration
        for t in range(1, T + 1):
            if wa_vel > 0.0:
                blocks.append(ResidualBlock(
                    "velocity", ((aid, t - 1), (aid, t + 1)), wa_vel))
            if wa_acc > 0.0:
                blocks.append(ResidualBlock(
                    "acceleration", ((aid, t - 1), (aid, t), (aid, t + 1)),
                    wa_acc))
        if agent.goal is not None and lam_a * aw.goal > 0.0:
            blocks.append(ResidualBlock("goal_attraction", ((aid, T + 1),),
                                        lam_a * aw.goal, target=agent.goal))

        if iw.lam_interaction > 0.0:
            blocks.append(ResidualBlock(
                "interaction_terminal", ((who, T + 1), (aid, T + 1)),
                iw.lam_interaction))
        if iw.lam_reward > 0.0:
            for t in range(1, T + 2):
                blocks.append(ResidualBlock(
                    "sparse_reward", ((who, t), (aid, t)), iw.lam_reward,
                    kernel=KERNEL_WELSCH, sigma=iw.sigma))
                if targets is not None:
                    blocks.append(ResidualBlock(
                        "sparse_reward", ((who, t),), iw.lam_reward,
                        kernel=KERNEL_WELSCH, sigma=iw.sigma,
                        target=targets.robot_target))
                    blocks.append(ResidualBlock(
                        "sparse_reward", ((aid, t),), iw.lam_reward,
                        kernel=KERNEL_WELSCH, sigma=iw.sigma,
                        target=targets.agent_target))

    context = ProblemContext(
        dt=p.dt,
        world=p.world,
        chains={0: p.robot.chain},
        point_radius={i + 1: a.radius for i, a in enumerate(p.agents)},
        r_hat=r_hat,
        joint_eps=rw.joint_eps,
        obstacle_margin=max((a.weights.margin for a in p.agents), default=0.0),
    )
    return NlsProblem(layout, tuple(blocks), context)


def solve_joint(p: CollaborativeProblem, opts: SolveOptions = SolveOptions(),
                anchors: Anchors | None = None,
                targets: ReAnchorTargets | None = None,
                linearizer: Linearizer | None = None):
    """Solve the joint objective from the problem's stored trajectories."""
    anchors = anchors or default_anchors(p)
    targets = targets if targets is not None else default_targets(p, anchors)
    nls = assemble(p, anchors, targets)
    lin = linearizer.rebind(nls) if linearizer is not None else Linearizer(nls)
    x0 = nls.layout.pack([t.knots for t in p.trajectories()])
    x, report = solve_irls(lin, x0, opts)
    trajs = [Trajectory(k, p.dt) for k in nls.layout.unpack(x)]
    return p.with_trajectories(trajs), report, lin


def predictive_collaborative_cost(p: CollaborativeProblem, agent_index: int,
                                  fixed_trajectory: Trajectory,
                                  opts: SolveOptions = SolveOptions()) -> float:
    """Cost of one agent's trajectory after the others respond optimally.

    Freezes agent agent_index (0 is the robot) at fixed_trajectory, optimizes
    every other trajectory conditioned on it, and returns the resulting joint
    objective value.
    """
    trajs = p.trajectories()
    if fixed_trajectory.dim != trajs[agent_index].dim:
        raise DimensionMismatch("fixed trajectory has wrong dimension")
    trajs = list(trajs)
    trajs[agent_index] = fixed_trajectory
    anchors = default_anchors(p.with_trajectories(trajs))
    targets = default_targets(p, anchors)
    nls = assemble(p, anchors, targets).with_fixed({agent_index})
    x0 = nls.layout.pack([t.knots for t in trajs])
    lin = Linearizer(nls)
    x, report = solve_irls(lin, x0, opts)
    return report.final_cost


@dataclass(frozen=True)
class ConsistencyReport:
    """Per-agent deviation between conditional re-solves and the joint solve."""

    deviations: tuple
    tol: float

    @property
    def max_deviation(self) -> float:
        return max(self.deviations)

    @property
    def consistent(self) -> bool:
        return self.max_deviation < self.tol


def equilibrium_consistency_check(p: CollaborativeProblem, joint_trajs,
                                  tol: float = 1e-6,
                                  opts: SolveOptions = SolveOptions()) -> ConsistencyReport:
    """Fixed-point check of the joint solution.

    For each agent: freeze it at the joint solution, re-optimize everyone
    else (warm-started at the joint solution), and measure how far the
    re-solve moves. Deviations are reported, not asserted, since multimodal
    instances legitimately violate them.
    """
    joint_x = None
    deviations = []
    p_joint = p.with_trajectories(joint_trajs)
    anchors = default_anchors(p_joint)
    targets = default_targets(p_joint, anchors)
    for i in range(1 + len(p.agents)):
        nls = assemble(p_joint, anchors, targets).with_fixed({i})
        layout = nls.layout
        x0 = layout.pack([t.knots for t in joint_trajs])
        if joint_x is None:
            joint_x = x0.copy()
        x, _ = solve_irls(Linearizer(nls), x0, opts)
        dev = 0.0
        for a in range(layout.n_agents):
            if a == i:
                continue
            dev = max(dev, float(np.max(np.abs(
                layout.agent_view(x, a) - layout.agent_view(joint_x, a)))))
        deviations.append(dev)
    return ConsistencyReport(tuple(deviations), tol)
