"""Discrete trajectories with second-order cliques and finite differences.

A trajectory stores T + 2 knots: one anchored past knot (the latest
observation), T interior knots, and one terminal knot. Velocities are central
differences, accelerations second central differences, both exact for linear
and quadratic signals.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, TooShort

# Anchor knots are pinned to the latest observation through a prior residual
# with this weight; strong enough that solutions stay within 1e-4 of it.
ANCHOR_WEIGHT = 1e6


@dataclass(frozen=True)
class Trajectory:
    knots: np.ndarray  # (T + 2, dim)
    dt: float

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if knots.ndim == 1:
            knots = knots[:, None]
        if knots.ndim != 2:
            raise DimensionMismatch("knots must be a (T+2, dim) array")
        if knots.shape[0] < 2:
            raise TooShort("a trajectory needs at least an anchor and a knot")
        if self.dt <= 0.0:
            raise ValueError("dt must be > 0")
        knots = knots.copy()
        knots.flags.writeable = False
        object.__setattr__(self, "knots", knots)

    @property
    def horizon(self) -> int:
        """Number of interior (optimized) steps T."""
        return self.knots.shape[0] - 2

    @property
    def dim(self) -> int:
        return self.knots.shape[1]

    @property
    def anchor(self) -> np.ndarray:
        return self.knots[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.knots[-1]

    def with_knots(self, knots) -> "Trajectory":
        return Trajectory(knots, self.dt)


@dataclass(frozen=True)
class Clique:
    """Three consecutive knots; derivatives are always recomputed."""

    q_prev: np.ndarray
    q_cur: np.ndarray
    q_next: np.ndarray
    dt: float

    @property
    def vel(self) -> np.ndarray:
        return (self.q_next - self.q_prev) / (2.0 * self.dt)

    @property
    def acc(self) -> np.ndarray:
        return (self.q_next - 2.0 * self.q_cur + self.q_prev) / self.dt**2


def cliques(traj: Trajectory) -> list[Clique]:
    """One clique per interior knot; boundary knots appear only as neighbors."""
    if traj.horizon < 1:
        raise TooShort("need horizon >= 1 for cliques")
    k = traj.knots
    return [Clique(k[t - 1], k[t], k[t + 1], traj.dt)
            for t in range(1, traj.horizon + 1)]


def time_shift_warm_start(prev: Trajectory, observed_q0) -> Trajectory:
    """Shift one step forward: drop the first knot, duplicate the last,
    and overwrite the new anchor with the observation."""
    observed_q0 = np.asarray(observed_q0, dtype=float).reshape(-1)
    if observed_q0.shape[0] != prev.dim:
        raise DimensionMismatch("observation dimension does not match")
    knots = np.vstack([prev.knots[1:], prev.knots[-1:]])
    knots[0] = observed_q0
    return Trajectory(knots, prev.dt)


def constant_trajectory(q, horizon: int, dt: float) -> Trajectory:
    q = np.asarray(q, dtype=float).reshape(-1)
    return Trajectory(np.tile(q, (horizon + 2, 1)), dt)


def linear_trajectory(start, end, horizon: int, dt: float) -> Trajectory:
    start = np.asarray(start, dtype=float).reshape(-1)
    end = np.asarray(end, dtype=float).reshape(-1)
    alphas = np.linspace(0.0, 1.0, horizon + 2)[:, None]
    return Trajectory(start[None, :] * (1 - alphas) + end[None, :] * alphas, dt)


def write_csv(traj: Trajectory, path) -> None:
    """Dump as (step, time, q_0..q_{d-1}) rows for plotting and fixtures."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "time"] + [f"q{i}" for i in range(traj.dim)])
        for t, knot in enumerate(traj.knots):
            writer.writerow([t, f"{t * traj.dt:.6f}"]
                            + [f"{v:.17g}" for v in knot])
