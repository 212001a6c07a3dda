"""Receding-horizon loop: observe, re-anchor, warm-start, solve, command.

Each cycle re-anchors both trajectories at the latest observation, shifts the
previous solution one step as the warm start, recomputes the grasp target
orientation once, solves within budget, and emits the first post-anchor robot
knot as the command. Commands are clamped to the per-joint velocity limits so
consecutive commands never jump.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .collab import Anchors, CollaborativeProblem, ReAnchorTargets, assemble
from .errors import DegenerateDirection
from .geometry import Rotation, desired_grasp_rotation
from .kinematics import forward_kinematics
from .problem import Linearizer
from .solver import SolveOptions, solve_irls
from .trajectory import Trajectory, constant_trajectory, time_shift_warm_start

APPROACHING, ENGAGED, DONE = "approaching", "engaged", "done"


@dataclass(frozen=True)
class Observation:
    robot_q: np.ndarray
    agent_pos: np.ndarray
    stamp: float
    valid: bool = True

    def __post_init__(self):
        object.__setattr__(self, "robot_q",
                           np.asarray(self.robot_q, dtype=float).reshape(-1))
        object.__setattr__(self, "agent_pos",
                           np.asarray(self.agent_pos, dtype=float).reshape(3))


@dataclass(frozen=True)
class MpcOptions:
    engage_threshold: float = 0.10
    disengage_factor: float = 2.0   # engaged reverts past factor * threshold
    stale_after: float = 0.5
    budget_s: float | None = None
    inner_iters: int = 25
    outer_iters: int = 4
    # per-cycle solves stop at control precision, not solver-default precision
    g_tol: float = 1e-6
    s_tol: float = 1e-7
    freeze_agents: bool = False     # partner model pinned at its observation


@dataclass(frozen=True)
class MpcState:
    problem: CollaborativeProblem
    r_hat: Rotation | None = None
    phase: str = APPROACHING
    steps: int = 0
    last_command: np.ndarray | None = None
    stale_count: int = 0
    targets: ReAnchorTargets | None = None
    linearizer: Linearizer | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.last_command is None:
            object.__setattr__(self, "last_command",
                               self.problem.robot.trajectory.anchor.copy())


def initial_state(problem: CollaborativeProblem) -> MpcState:
    return MpcState(problem=problem)


def mark_done(state: MpcState) -> MpcState:
    return replace(state, phase=DONE)


def detect_engage(ee, agent, threshold: float = 0.10) -> bool:
    """True iff the end effector is strictly within threshold of the partner."""
    if threshold <= 0.0:
        raise ValueError("threshold must be > 0")
    ee = np.asarray(ee, dtype=float)
    agent = np.asarray(agent, dtype=float)
    return bool(np.linalg.norm(ee - agent) < threshold)


@dataclass(frozen=True)
class MpcDiagnostics:
    cycle: int
    phase: str
    distance: float
    cost_initial: float
    cost_final: float
    iterations: int
    outer_iterations: int
    solve_ms: float
    stale: bool = False

    def to_json(self) -> str:
        return json.dumps({
            "cycle": self.cycle, "phase": self.phase,
            "distance": round(self.distance, 6),
            "cost_initial": self.cost_initial, "cost_final": self.cost_final,
            "iterations": self.iterations,
            "outer_iterations": self.outer_iterations,
            "solve_ms": round(self.solve_ms, 3), "stale": self.stale,
        })


def _hold(state: MpcState, distance: float) -> tuple[np.ndarray, MpcState, MpcDiagnostics]:
    new_state = replace(state, steps=state.steps + 1,
                        stale_count=state.stale_count + 1)
    diag = MpcDiagnostics(cycle=state.steps, phase=state.phase,
                          distance=distance, cost_initial=float("nan"),
                          cost_final=float("nan"), iterations=0,
                          outer_iterations=0, solve_ms=0.0, stale=True)
    return state.last_command.copy(), new_state, diag


def mpc_step(state: MpcState, obs: Observation,
             options: MpcOptions = MpcOptions(),
             now: float | None = None):
    """One replan-execute cycle; returns (command, new state, diagnostics).

    Invalid or stale observations produce a zero-velocity hold (the previous
    command) and leave the plan untouched.
    """
    p = state.problem
    chain = p.robot.chain
    age = 0.0 if now is None else max(0.0, now - obs.stamp)
    if (not obs.valid) or age > options.stale_after or state.phase == DONE:
        return _hold(state, float("nan"))

    t0 = time.perf_counter()
    ee0 = forward_kinematics(chain, obs.robot_q).translation
    agent_obs = obs.agent_pos
    distance = float(np.linalg.norm(ee0 - agent_obs))

    anchors = Anchors(obs.robot_q, (agent_obs,))
    targets = ReAnchorTargets(robot_target=agent_obs, agent_target=ee0)
    try:
        r_hat = desired_grasp_rotation(ee0, agent_obs)
    except DegenerateDirection:
        r_hat = state.r_hat  # keep facing the previous target direction

    robot_traj = time_shift_warm_start(p.robot.trajectory, obs.robot_q)
    agent_trajs = []
    for agent in p.agents:
        if options.freeze_agents:
            agent_trajs.append(constant_trajectory(agent_obs, p.horizon, p.dt))
        else:
            agent_trajs.append(time_shift_warm_start(agent.trajectory, agent_obs))
    p = p.with_trajectories([robot_traj] + agent_trajs)

    nls = assemble(p, anchors, targets, r_hat)
    if options.freeze_agents:
        nls = nls.with_fixed(range(1, 1 + len(p.agents)))
    if state.linearizer is not None:
        lin = state.linearizer.rebind(nls)
    else:
        lin = Linearizer(nls)
    opts = SolveOptions(max_iters=options.inner_iters,
                        outer_max=options.outer_iters,
                        budget_s=options.budget_s,
                        g_tol=options.g_tol, s_tol=options.s_tol)
    x, report = solve_irls(lin, nls.layout.pack([t.knots for t in p.trajectories()]), opts)
    trajs = [Trajectory(k, p.dt) for k in nls.layout.unpack(x)]
    p = p.with_trajectories(trajs)

    # emit the first post-anchor knot, clamped to the velocity limits
    command = trajs[0].knots[1].copy()
    max_step = chain.velocity_limits * p.dt
    command = np.clip(command, state.last_command - max_step,
                      state.last_command + max_step)
    command = np.clip(command, chain.joint_limits[:, 0],
                      chain.joint_limits[:, 1])

    phase = state.phase
    if phase == APPROACHING and detect_engage(ee0, agent_obs,
                                              options.engage_threshold):
        phase = ENGAGED
    elif phase == ENGAGED and distance > options.disengage_factor * options.engage_threshold:
        phase = APPROACHING

    new_state = MpcState(problem=p, r_hat=r_hat, phase=phase,
                         steps=state.steps + 1, last_command=command,
                         stale_count=state.stale_count, targets=targets,
                         linearizer=lin)
    diag = MpcDiagnostics(cycle=state.steps, phase=phase, distance=distance,
                          cost_initial=report.initial_cost,
                          cost_final=report.final_cost,
                          iterations=report.iterations,
                          outer_iterations=report.outer_iterations,
                          solve_ms=(time.perf_counter() - t0) * 1e3)
    return command, new_state, diag
