"""Scenario generation, baseline policies, metrics, benchmark and calibration.

A trial replays an independently planned partner hand trajectory (start and
goal on opposite sides of a randomized non-convex obstacle) against one robot
policy and scores the handover: success means the end effector comes within
the engage threshold of the partner's actual position in at most twice the
replay length. Policies share one MPC implementation and differ only in how
the partner is modeled:

  ours        full collaborative replanning over both trajectories
  robot_only  partner model pinned at its currently observed position
  attractor   the same planner with a very short horizon

Trials are deterministic given their seed; observation noise, obstacle
shapes, and endpoints all derive from per-trial child seeds.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .collab import (Anchors, CollaborativeProblem, RobotAgent, SphereAgent,
                     assemble)
from .config import AgentWeights, RunConfig
from .errors import DimensionMismatch, InfeasibleScenario
from .geometry import Box, Capsule, ObstacleWorld
from .kinematics import SerialChain, fk_batch, forward_kinematics, load_fixture
from .mpc import MpcOptions, Observation, initial_state, mpc_step
from .problem import Linearizer
from .solver import SolveOptions, solve_irls
from .trajectory import Trajectory, constant_trajectory, linear_trajectory

POLICIES = ("ours", "robot_only", "attractor")

HOME_CONFIG = np.array([0.0, -np.pi / 4, 0.0, -3 * np.pi / 4, 0.0,
                        np.pi / 2, np.pi / 4])


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    world: ObstacleWorld
    agent_start: np.ndarray
    agent_goal: np.ndarray
    robot_q0: np.ndarray
    bounds: np.ndarray  # (2, 3) workspace box


@dataclass(frozen=True)
class TrialResult:
    policy: str
    success: bool
    t_uncontrolled: int
    t_success: int | None
    handover_time_normalized: float | None
    trajectory_length_error: float | None
    mean_acceleration: float | None  # cm/s^2
    mean_jerk: float | None          # cm/s^3
    seed: int

    def __post_init__(self):
        if self.success:
            assert self.t_success is not None
            assert self.t_success <= 2 * self.t_uncontrolled


@lru_cache(maxsize=4)
def _reach_shell(chain_name: str) -> tuple[float, float]:
    """Radial reach band of the fixture chain, from sampled FK."""
    chain = load_fixture(chain_name)
    rng = np.random.default_rng(987654321)
    q = rng.uniform(chain.joint_limits[:, 0], chain.joint_limits[:, 1],
                    size=(2000, chain.n_joints))
    radii = np.linalg.norm(fk_batch(chain, q).ee_t, axis=1)
    return float(np.percentile(radii, 10)), float(np.percentile(radii, 90))


def _sample_obstacles(rng, anchor_a, anchor_b):
    """Non-convex wall-like cluster between a and b: one large box roughly
    perpendicular to the approach line plus 1..3 overlapping extras."""
    direction = anchor_b - anchor_a
    direction = direction / np.linalg.norm(direction)
    mid = anchor_a + rng.uniform(0.40, 0.60) * (anchor_b - anchor_a)
    center = mid + np.append(rng.uniform(-0.06, 0.06, 2),
                             rng.uniform(-0.08, 0.08))
    # wall: thin along the approach direction, wide across it
    across = 1.0 - np.abs(direction)
    half = 0.05 + across * rng.uniform(0.14, 0.26, 3)
    prims = [Box(center, half)]
    for _ in range(rng.integers(1, 4)):
        c = center + rng.uniform(-0.12, 0.12, 3)
        if rng.random() < 0.5:
            prims.append(Box(c, rng.uniform(0.04, 0.11, 3)))
        else:
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            half_len = rng.uniform(0.05, 0.13)
            prims.append(Capsule(c - half_len * axis, c + half_len * axis,
                                 rng.uniform(0.03, 0.06)))
    return ObstacleWorld(tuple(prims))


def generate_scenario(seed: int, cfg: RunConfig) -> ScenarioConfig:
    """Sample a handover scenario; endpoints clear of obstacles, goal reachable."""
    chain_name = cfg.sim.chain
    lo_r, hi_r = _reach_shell(chain_name)
    chain = load_fixture(chain_name)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11CE]))
    ee0 = forward_kinematics(chain, HOME_CONFIG).translation
    for _ in range(cfg.sim.max_scenario_draws):
        az = rng.uniform(-1.0, 1.0)
        start = np.array([np.cos(az), np.sin(az), 0.0]) * rng.uniform(0.78, 0.95)
        start[2] = rng.uniform(0.25, 0.65)
        az_g = rng.uniform(-0.9, 0.9)
        goal = np.array([np.cos(az_g), np.sin(az_g), 0.0]) * rng.uniform(
            max(0.38, lo_r * 0.9), min(0.68, hi_r * 0.9))
        goal[2] = rng.uniform(0.25, 0.60)
        if np.linalg.norm(goal - start) < 0.25:
            continue
        world = _sample_obstacles(rng, ee0, start)
        clear = min(world.signed_distance(start), world.signed_distance(goal))
        if clear < 0.13:
            continue
        if world.signed_distance(ee0) < 0.13:
            continue
        # keep the robot's starting posture out of collision
        from .kinematics import skeleton_positions
        sk = skeleton_positions(chain, HOME_CONFIG)
        centers = np.array([c for c, _ in sk])
        radii = np.array([r for _, r in sk])
        if np.any(world.signed_distance_batch(centers) < radii + 0.01):
            continue
        bounds = np.array([[-1.1, -1.1, 0.0], [1.1, 1.1, 1.2]])
        return ScenarioConfig(seed=seed, world=world, agent_start=start,
                              agent_goal=goal, robot_q0=HOME_CONFIG.copy(),
                              bounds=bounds)
    raise InfeasibleScenario(f"no valid scenario after "
                             f"{cfg.sim.max_scenario_draws} draws (seed {seed})")


def _agent_only_problem(start, goal, horizon, dt, world, weights: AgentWeights,
                        goal_weight: float = 1e4):
    """Point-agent reach problem: strong endpoint pins, smoothness, obstacle."""
    from .costs import ResidualBlock
    from .problem import Layout, NlsProblem, ProblemContext
    from .config import ANCHOR_WEIGHT

    layout = Layout((3,), horizon + 2)
    blocks = [ResidualBlock("anchor", ((0, 0),), ANCHOR_WEIGHT, target=start)]
    for t in range(1, horizon + 1):
        blocks.append(ResidualBlock("velocity", ((0, t - 1), (0, t + 1)),
                                    weights.velocity))
        blocks.append(ResidualBlock("acceleration",
                                    ((0, t - 1), (0, t), (0, t + 1)),
                                    weights.acceleration))
    if not world.empty and weights.obstacle > 0.0:
        for t in range(1, horizon + 2):
            blocks.append(ResidualBlock("obstacle", ((0, t),), weights.obstacle))
    blocks.append(ResidualBlock("goal_attraction", ((0, horizon + 1),),
                                goal_weight, target=goal))
    ctx = ProblemContext(dt=dt, world=world, chains={},
                         point_radius={0: 0.10},
                         obstacle_margin=weights.margin)
    return NlsProblem(layout, tuple(blocks), ctx)


def generate_uncontrolled_trajectory(sc: ScenarioConfig, cfg: RunConfig,
                                     rng=None, noise: bool = True) -> Trajectory:
    """Independently planned partner hand path from start to goal.

    Minimizes the same velocity, acceleration and obstacle terms used for the
    partner model, with strong endpoint pins, then adds per-knot uniform
    noise to de-bias it from the planner. Raises InfeasibleScenario when the
    plan keeps more than the tolerated obstacle penetration.
    """
    dt = cfg.mpc.dt
    dist = float(np.linalg.norm(sc.agent_goal - sc.agent_start))
    steps = int(round(dist / (cfg.sim.agent_speed * dt))) + 1
    steps = int(np.clip(steps, cfg.sim.min_plan_steps, cfg.sim.max_plan_steps))
    horizon = steps - 1
    problem = _agent_only_problem(sc.agent_start, sc.agent_goal, horizon, dt,
                                  sc.world, cfg.agent)
    init = linear_trajectory(sc.agent_start, sc.agent_goal, horizon, dt)
    x0 = problem.layout.pack([init.knots])
    x, _ = solve_irls(Linearizer(problem), x0,
                      SolveOptions(max_iters=60, s_tol=1e-8))
    knots = problem.layout.unpack(x)[0]
    if not sc.world.empty:
        pen = -float(sc.world.signed_distance_batch(knots).min())
        if pen > cfg.sim.penetration_tol:
            raise InfeasibleScenario(
                f"uncontrolled plan keeps {pen * 100:.1f} cm penetration")
    if noise and cfg.sim.plan_noise > 0.0:
        rng = rng or np.random.default_rng(np.random.SeedSequence([sc.seed, 7]))
        knots = knots + rng.uniform(-cfg.sim.plan_noise, cfg.sim.plan_noise,
                                    knots.shape)
    return Trajectory(knots, dt)


def compute_metrics(ee_path: np.ndarray, t_uncontrolled: int, t_success: int,
                    dt: float) -> dict:
    """Timing and smoothness metrics of one executed end-effector path.

    Normalized handover time is t_success / t_uncontrolled and the length
    error its distance from 1. Acceleration and jerk are second and third
    central differences of the executed path, mean magnitudes in cm units.
    """
    norm_time = t_success / t_uncontrolled
    length_error = abs(1.0 - norm_time)
    p = np.asarray(ee_path)
    if p.shape[0] >= 3:
        acc = (p[2:] - 2.0 * p[1:-1] + p[:-2]) / dt**2
        mean_acc = float(np.linalg.norm(acc, axis=1).mean()) * 100.0
    else:
        mean_acc = 0.0
    if p.shape[0] >= 5:
        jerk = (p[4:] - 2.0 * p[3:-1] + 2.0 * p[1:-3] - p[:-4]) / (2.0 * dt**3)
        mean_jerk = float(np.linalg.norm(jerk, axis=1).mean()) * 100.0
    else:
        mean_jerk = 0.0
    return {
        "handover_time_normalized": norm_time,
        "trajectory_length_error": length_error,
        "mean_acceleration": mean_acc,
        "mean_jerk": mean_jerk,
    }


def _policy_options(policy: str, cfg: RunConfig) -> tuple[int, MpcOptions]:
    horizon = cfg.mpc.horizon
    if policy == "attractor":
        horizon = cfg.sim.attractor_horizon
    opts = MpcOptions(
        engage_threshold=cfg.mpc.engage_threshold,
        disengage_factor=cfg.mpc.disengage_factor,
        stale_after=cfg.mpc.stale_after,
        budget_s=None if cfg.solver.budget_ms is None
        else cfg.solver.budget_ms / 1e3,
        inner_iters=cfg.solver.max_iters,
        outer_iters=cfg.solver.outer_iters,
        s_tol=cfg.solver.s_tol,
        g_tol=cfg.solver.g_tol,
        freeze_agents=(policy == "robot_only"),
    )
    return horizon, opts


def run_trial(sc: ScenarioConfig, policy: str, noise_sigma_cm: float,
              cfg: RunConfig, replay: Trajectory | None = None,
              collect_paths: bool = False):
    """Replay the uncontrolled trajectory against one robot policy.

    The partner follows its precomputed path and then pauses at its final
    knot. Observations of the partner carry i.i.d. Gaussian noise per axis;
    success is judged against the actual position.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    chain = load_fixture(cfg.sim.chain)
    dt = cfg.mpc.dt
    if replay is None:
        replay = generate_uncontrolled_trajectory(sc, cfg)
    replay_pts = replay.knots
    t_unc = replay_pts.shape[0] - 1
    horizon, opts = _policy_options(policy, cfg)
    obs_rng = np.random.default_rng(
        np.random.SeedSequence([sc.seed, 11, POLICIES.index(policy)]))
    sigma_m = noise_sigma_cm / 100.0

    problem = CollaborativeProblem(
        robot=RobotAgent(chain, constant_trajectory(sc.robot_q0, horizon, dt),
                         cfg.robot),
        agents=(SphereAgent(constant_trajectory(replay_pts[0], horizon, dt),
                            radius=cfg.sim.agent_radius, weights=cfg.agent),),
        world=sc.world,
        interaction=cfg.interaction,
    )
    state = initial_state(problem)
    q = sc.robot_q0.copy()
    ee_path = [forward_kinematics(chain, q).translation]
    agent_path = [replay_pts[0]]
    max_steps = 2 * t_unc
    t_success = None
    for k in range(max_steps):
        actual = replay_pts[min(k, t_unc)]
        observed = actual if sigma_m == 0.0 else actual + obs_rng.normal(
            0.0, sigma_m, 3)
        obs = Observation(q, observed, stamp=k * dt)
        cmd, state, diag = mpc_step(state, obs, opts)
        q = cmd
        ee = forward_kinematics(chain, q).translation
        ee_path.append(ee)
        actual_next = replay_pts[min(k + 1, t_unc)]
        agent_path.append(actual_next)
        if np.linalg.norm(ee - actual_next) < cfg.mpc.engage_threshold:
            t_success = k + 1
            break
    success = t_success is not None
    metrics = (compute_metrics(np.asarray(ee_path), t_unc, t_success, dt)
               if success else {})
    result = TrialResult(
        policy=policy, success=success, t_uncontrolled=t_unc,
        t_success=t_success,
        handover_time_normalized=metrics.get("handover_time_normalized"),
        trajectory_length_error=metrics.get("trajectory_length_error"),
        mean_acceleration=metrics.get("mean_acceleration"),
        mean_jerk=metrics.get("mean_jerk"),
        seed=sc.seed)
    if collect_paths:
        return result, {"ee": np.asarray(ee_path),
                        "agent": np.asarray(agent_path),
                        "replay": replay_pts}
    return result


def _scenario_with_plan(trial_seed: int, cfg: RunConfig):
    """Draw scenarios until one admits a feasible uncontrolled plan."""
    ss = np.random.SeedSequence([cfg.seed, trial_seed])
    for attempt, child in enumerate(ss.spawn(cfg.sim.max_scenario_draws)):
        seed = int(child.generate_state(1)[0] % (2**31 - 1))
        try:
            sc = generate_scenario(seed, cfg)
            replay = generate_uncontrolled_trajectory(sc, cfg)
            return sc, replay
        except InfeasibleScenario:
            continue
    raise InfeasibleScenario(f"trial {trial_seed}: no feasible scenario")


def run_benchmark(n_trials: int, policies, seed: int, cfg: RunConfig,
                  progress=None):
    """Replay each trial's uncontrolled trajectory under every policy.

    Returns (per-trial results, aggregate). Metric means are taken over the
    trials where all compared policies succeeded, matching the evaluation
    protocol; success rates cover all trials.
    """
    if n_trials < 1:
        raise ValueError("need at least one trial")
    cfg = replace(cfg, seed=seed)
    rows = []
    for i in range(n_trials):
        sc, replay = _scenario_with_plan(i, cfg)
        per_policy = {}
        for policy in policies:
            per_policy[policy] = run_trial(sc, policy, 0.0, cfg, replay=replay)
        rows.append(per_policy)
        if progress is not None:
            progress(i + 1, n_trials)
    aggregate = aggregate_benchmark(rows, policies)
    return rows, aggregate


def aggregate_benchmark(rows, policies) -> dict:
    mutual = [row for row in rows if all(row[p].success for p in policies)]
    agg = {"n_trials": len(rows), "n_mutual_success": len(mutual),
           "policies": {}}
    for p in policies:
        succ = sum(1 for row in rows if row[p].success)
        entry = {"success_rate": succ / len(rows)}
        for metric in ("handover_time_normalized", "trajectory_length_error",
                       "mean_acceleration", "mean_jerk"):
            vals = [getattr(row[p], metric) for row in mutual]
            entry[metric] = {
                "mean": float(np.mean(vals)) if vals else None,
                "std": float(np.std(vals)) if vals else None,
            }
        agg["policies"][p] = entry
    return agg


def run_noise_sweep(sigmas_cm, n_per_sigma: int, seed: int, cfg: RunConfig,
                    progress=None):
    """Success rate of the full policy under observation noise.

    The scenario pool is validated on noiseless runs first (a handover that
    cannot be completed without noise says nothing about noise robustness),
    then each noise level runs on the same pool.
    """
    cfg = replace(cfg, seed=seed)
    pool = []
    i = 0
    guard = 0
    while len(pool) < n_per_sigma and guard < 50 * n_per_sigma:
        guard += 1
        try:
            sc, replay = _scenario_with_plan(100000 + i, cfg)
        except InfeasibleScenario:
            i += 1
            continue
        i += 1
        res = run_trial(sc, "ours", 0.0, cfg, replay=replay)
        if res.success:
            pool.append((sc, replay))
    if len(pool) < n_per_sigma:
        raise InfeasibleScenario("could not build a noiseless-feasible pool")
    table = []
    for si, sigma in enumerate(sigmas_cm):
        succ = 0
        for sc, replay in pool:
            res = run_trial(sc, "ours", float(sigma), cfg, replay=replay)
            succ += int(res.success)
        table.append({"sigma_cm": float(sigma),
                      "success_rate": succ / len(pool)})
        if progress is not None:
            progress(si + 1, len(sigmas_cm))
    return table


# --- partner-model calibration ------------------------------------------------

CALIBRATION_PARAMS = ("velocity", "acceleration", "obstacle", "goal",
                      "reward", "sigma", "brake", "margin")


def default_grid() -> dict:
    """8 parameters x 3 values each (6561 configurations)."""
    return {
        "velocity": (1.0, 2.0, 4.0),
        "acceleration": (0.5, 1.0, 2.0),
        "obstacle": (20.0, 50.0, 100.0),
        "goal": (1e3, 1e4, 1e5),
        "reward": (0.0, 1.0, 2.0),
        "sigma": (0.1, 0.2, 0.4),
        "brake": (0.0, 1.0, 2.0),
        "margin": (0.0, 0.02, 0.05),
    }


def predict_reach(pos, goal, remaining: int, params: dict, world, dt: float):
    """Predicted hand positions for the next `remaining` steps (pos excluded)."""
    if remaining < 2:
        raise DimensionMismatch("need at least two remaining steps")
    from .costs import ResidualBlock, welsch_weight
    weights = AgentWeights(obstacle=params["obstacle"],
                           velocity=params["velocity"],
                           acceleration=params["acceleration"],
                           margin=params["margin"])
    brake = params["brake"] * welsch_weight(float(np.linalg.norm(
        np.asarray(goal) - np.asarray(pos))), params["sigma"])
    weights = replace(weights, velocity=weights.velocity + brake)
    horizon = remaining - 1
    problem = _agent_only_problem(np.asarray(pos), np.asarray(goal),
                                  horizon, dt, world, weights,
                                  goal_weight=params["goal"])
    if params["reward"] > 0.0:
        from .problem import NlsProblem
        blocks = list(problem.blocks)
        for t in range(1, horizon + 2):
            blocks.append(ResidualBlock(
                "sparse_reward", ((0, t),), params["reward"],
                kernel="welsch", sigma=params["sigma"],
                target=np.asarray(goal, dtype=float)))
        problem = NlsProblem(problem.layout, tuple(blocks), problem.context)
    init = linear_trajectory(pos, goal, horizon, dt)
    x, _ = solve_irls(Linearizer(problem), problem.layout.pack([init.knots]),
                      SolveOptions(max_iters=30, outer_max=4, s_tol=1e-6))
    knots = problem.layout.unpack(x)[0]
    return knots[1:]


def prediction_loss(predicted_by_step: dict, measured: np.ndarray) -> float:
    """RMS distance (cm) between predicted and measured future positions.

    predicted_by_step maps replan step t to the predicted positions for
    steps t+1..T; each contributes the mean squared deviation over its own
    future steps, the step means are averaged, and the result is reported
    as a root-mean-square distance in centimeters.
    """
    measured = np.asarray(measured, dtype=float)
    T = measured.shape[0] - 1
    per_step = []
    for t, pred in sorted(predicted_by_step.items()):
        if t > T - 2:
            continue
        pred = np.asarray(pred, dtype=float)
        future = measured[t + 1:]
        if pred.shape != future.shape:
            raise DimensionMismatch(
                f"replan {t}: predicted {pred.shape} vs measured {future.shape}")
        per_step.append(float(np.mean(np.sum((pred - future) ** 2, axis=1))))
    if not per_step:
        raise DimensionMismatch("no usable replan steps")
    return float(np.sqrt(np.mean(per_step))) * 100.0


def make_reach_dataset(n: int, params: dict, seed: int, cfg: RunConfig,
                       noise_m: float = 0.0):
    """Synthetic reach recordings generated by the partner model itself."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xCAFE]))
    data = []
    for _ in range(n):
        start = rng.uniform([-0.6, -0.6, 0.2], [0.6, 0.6, 0.7])
        goal = rng.uniform([-0.6, -0.6, 0.2], [0.6, 0.6, 0.7])
        while np.linalg.norm(goal - start) < 0.3:
            goal = rng.uniform([-0.6, -0.6, 0.2], [0.6, 0.6, 0.7])
        world = ObstacleWorld()
        steps = 14
        path = predict_reach(start, goal, steps, params, world, cfg.mpc.dt)
        measured = np.vstack([start[None, :], path])
        if noise_m > 0.0:
            measured = measured + rng.normal(0.0, noise_m, measured.shape)
        data.append({"measured": measured, "goal": goal, "world": world})
    return data


def evaluate_params(params: dict, dataset, dt: float,
                    replan_every: int = 4) -> float:
    """Mean prediction loss of one parameter set over recorded reaches."""
    losses = []
    for rec in dataset:
        measured = rec["measured"]
        T = measured.shape[0] - 1
        preds = {}
        for t in range(0, T - 1, replan_every):
            preds[t] = predict_reach(measured[t], rec["goal"], T - t,
                                     params, rec["world"], dt)
        losses.append(prediction_loss(preds, measured))
    return float(np.mean(losses))


def grid_search_tune(grid: dict, dataset, dt: float, progress=None):
    """Exhaustive search over the parameter grid; returns (best, leaderboard)."""
    if not grid:
        raise ValueError("empty parameter grid")
    names = list(grid.keys())
    leaderboard = []
    combos = list(itertools.product(*(grid[n] for n in names)))
    for idx, combo in enumerate(combos):
        params = dict(zip(names, combo))
        for missing in CALIBRATION_PARAMS:
            params.setdefault(missing, default_grid()[missing][0])
        loss = evaluate_params(params, dataset, dt)
        leaderboard.append((loss, params))
        if progress is not None:
            progress(idx + 1, len(combos))
    leaderboard.sort(key=lambda pair: pair[0])
    return leaderboard[0][1], leaderboard
