"""Residual catalog for the collaborative objective.

Every cost is a residual block r(.) with a weight, contributing
weight * ||r||^2 under the squared kernel or
weight * (1 - exp(-||r||^2 / (2 sigma^2))) under the robust reward kernel.
The block list plus a variable layout forms the least-squares problem the
solver consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .geometry import Rotation, log_so3

KINDS = (
    "joint_limit",
    "joint_vel_limit",
    "obstacle",
    "velocity",
    "acceleration",
    "orientation",
    "anchor",
    "interaction_terminal",
    "sparse_reward",
    "goal_attraction",
)

KERNEL_SQUARED = "squared"
KERNEL_WELSCH = "welsch"


def hinge(x, lo, hi, eps) -> tuple[np.ndarray, np.ndarray]:
    """Two-sided hinge residual and its slope sign.

    Zero inside [lo + eps, hi - eps], growing linearly outside; continuous at
    both breakpoints. Returns (residual, slope) with slope in {-1, 0, +1}.
    """
    x = np.asarray(x, dtype=float)
    low = lo + eps - x
    high = x - hi + eps
    r = np.where(low > 0.0, low, np.where(high > 0.0, high, 0.0))
    s = np.where(low > 0.0, -1.0, np.where(high > 0.0, 1.0, 0.0))
    return r, s


def joint_limit_residual(q, limits, eps) -> np.ndarray:
    """Per-joint hinge against the joint limits with tolerance eps."""
    q = np.asarray(q, dtype=float)
    limits = np.asarray(limits, dtype=float)
    if limits.shape != (q.shape[0], 2):
        raise DimensionMismatch("limits must be (n, 2) matching q")
    r, _ = hinge(q, limits[:, 0], limits[:, 1], eps)
    return r


def joint_velocity_residual(qdot, vel_limits, eps) -> np.ndarray:
    """Same hinge with symmetric bounds (-v_max, v_max) on joint velocity."""
    qdot = np.asarray(qdot, dtype=float)
    vel_limits = np.asarray(vel_limits, dtype=float)
    if vel_limits.shape != qdot.shape:
        raise DimensionMismatch("velocity limits must match q̇")
    r, _ = hinge(qdot, -vel_limits, vel_limits, eps)
    return r


def obstacle_residual(world, spheres) -> np.ndarray:
    """Per-sphere clearance violation max(0, radius - d) at the sphere center."""
    if not spheres:
        return np.zeros(0)
    centers = np.asarray([c for c, _ in spheres], dtype=float)
    radii = np.asarray([r for _, r in spheres], dtype=float)
    d = world.signed_distance_batch(centers)
    return np.maximum(0.0, radii - d)


def smoothness_residuals(clique) -> tuple[np.ndarray, np.ndarray]:
    """Finite-difference velocity and acceleration, both driven toward zero."""
    return clique.vel, clique.acc


def orientation_residual(r_actual: Rotation, r_desired: Rotation) -> np.ndarray:
    """Axis-angle error log(R_desired^-1 R_actual)."""
    return log_so3(r_desired.m.T @ r_actual.m)


def interaction_terminal_residual(t_r, t_a) -> np.ndarray:
    """Difference of the two final-step positions in the world frame."""
    return np.asarray(t_r, dtype=float) - np.asarray(t_a, dtype=float)


def sparse_reward(t_r, t_a, sigma: float) -> float:
    """Bounded meeting cost 1 - exp(-d^2 / (2 sigma^2)), zero at coincidence.

    Also usable against a fixed target by passing the target as t_a. Strictly
    increasing in distance and saturating at 1, so approaching the partner
    pays off at every step without punishing early separation.
    """
    if sigma <= 0.0:
        raise ValueError("sigma must be > 0")
    diff = np.asarray(t_r, dtype=float) - np.asarray(t_a, dtype=float)
    return float(1.0 - np.exp(-(diff @ diff) / (2.0 * sigma**2)))


def welsch_weight(r: float, sigma: float) -> float:
    """Reweighting factor exp(-r^2 / (2 sigma^2)) for the robust reward."""
    if sigma <= 0.0:
        raise ValueError("sigma must be > 0")
    return float(np.exp(-(float(r) ** 2) / (2.0 * sigma**2)))


@dataclass(frozen=True)
class ResidualBlock:
    """Immutable descriptor of one residual term.

    vars lists the (agent, knot) pairs the residual touches, in the order its
    Jacobian blocks are laid out. target carries the kind-specific constant:
    the anchor configuration, a reward/goal target point, or None when the
    residual couples two trajectories directly.
    """

    kind: str
    vars: tuple[tuple[int, int], ...]
    weight: float
    kernel: str = KERNEL_SQUARED
    sigma: float = 0.0
    target: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown residual kind {self.kind!r}")
        if self.weight < 0.0:
            raise ValueError("block weight must be >= 0")
        if self.kernel == KERNEL_WELSCH and self.sigma <= 0.0:
            raise ValueError("welsch kernel needs sigma > 0")
        if self.target is not None:
            t = np.asarray(self.target, dtype=float).copy()
            t.flags.writeable = False
            object.__setattr__(self, "target", t)


@dataclass(frozen=True)
class CostEvaluation:
    """Residual, Jacobian blocks per touched knot, and the cost contribution."""

    residual: np.ndarray
    jacobians: dict
    cost: float


def block_cost(block: ResidualBlock, residual: np.ndarray) -> float:
    """Scalar objective contribution of one block at the given residual."""
    sq = float(residual @ residual)
    if block.kernel == KERNEL_WELSCH:
        return block.weight * (1.0 - np.exp(-sq / (2.0 * block.sigma**2)))
    return block.weight * sq
