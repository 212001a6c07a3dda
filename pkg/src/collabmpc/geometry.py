"""Rigid-body math and signed-distance queries over obstacle worlds.

Rotations are validated 3x3 orthonormal matrices, poses pair a rotation with
a translation in meters. Obstacle worlds hold sphere, axis-aligned box, and
capsule primitives with exact signed distances plus an optional sampled voxel
grid for discretized queries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DegenerateDirection
from . import kernels

# Distance reported for queries against a world with no primitives. Large
# enough that every clearance-based cost is exactly zero.
EMPTY_WORLD_DISTANCE = 1.0e9

_ORTHONORMAL_TOL = 1e-9


def _vec3(v) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape(3)


def hat(w) -> np.ndarray:
    """Skew-symmetric matrix such that hat(w) @ v == cross(w, v)."""
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def so3_exp(w) -> np.ndarray:
    """Exponential map: axis-angle vector (radians) to rotation matrix."""
    w = _vec3(w)
    theta = float(np.linalg.norm(w))
    K = hat(w)
    if theta < 1e-8:
        # second-order series in the full (unnormalized) generator
        return np.eye(3) + K + 0.5 * (K @ K)
    K = K / theta
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def log_so3(r) -> np.ndarray:
    """Logarithmic map: rotation to axis-angle vector with norm <= pi.

    Continuous away from angle pi. At angle pi the axis sign is fixed by
    making its largest-magnitude component positive.
    """
    m = r.m if isinstance(r, Rotation) else np.asarray(r, dtype=float)
    trace = np.clip((np.trace(m) - 1.0) * 0.5, -1.0, 1.0)
    theta = float(np.arccos(trace))
    # vee of the antisymmetric part, equals 2 sin(theta) * axis
    s = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    if theta < 1e-7:
        return 0.5 * s
    if theta < np.pi - 1e-5:
        return (theta / (2.0 * np.sin(theta))) * s
    # Near pi the antisymmetric part is ill-conditioned; recover the axis from
    # the symmetric part instead: (S - cos(theta) I) / (1 - cos(theta)) = a a^T.
    sym = 0.5 * (m + m.T)
    cos_t = np.cos(theta)
    aat = (sym - cos_t * np.eye(3)) / (1.0 - cos_t)
    diag = np.clip(np.diag(aat), 0.0, None)
    axis = np.sqrt(diag)
    k = int(np.argmax(diag))
    # off-diagonal products fix relative signs against the dominant component
    for i in range(3):
        if i != k and aat[k, i] < 0.0:
            axis[i] = -axis[i]
    axis /= np.linalg.norm(axis)
    # overall sign: follow the antisymmetric part if it still carries
    # information, otherwise apply the largest-component-positive convention
    if np.linalg.norm(s) > 1e-12:
        if float(s @ axis) < 0.0:
            axis = -axis
    elif axis[k] < 0.0:
        axis = -axis
    return theta * axis


def so3_left_jacobian_inverse(phi) -> np.ndarray:
    """Inverse left Jacobian of SO(3), used to chain-rule through log_so3."""
    phi = _vec3(phi)
    theta = float(np.linalg.norm(phi))
    K = hat(phi)
    if theta < 1e-6:
        return np.eye(3) - 0.5 * K + (1.0 / 12.0) * (K @ K)
    coeff = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) - 0.5 * K + coeff * (K @ K)


def log_so3_batch(ms: np.ndarray) -> np.ndarray:
    """log_so3 over a stack of rotation matrices (angles >= pi - 1e-5 fall
    back to the scalar branch)."""
    tr = np.clip((np.einsum("gii->g", ms) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(tr)
    s = np.stack([ms[:, 2, 1] - ms[:, 1, 2],
                  ms[:, 0, 2] - ms[:, 2, 0],
                  ms[:, 1, 0] - ms[:, 0, 1]], axis=1)
    sin_t = np.sin(theta)
    factor = np.where(theta < 1e-7, 0.5,
                      theta / np.maximum(2.0 * sin_t, 1e-300))
    out = factor[:, None] * s
    near_pi = theta > np.pi - 1e-5
    if np.any(near_pi):
        for i in np.nonzero(near_pi)[0]:
            out[i] = log_so3(ms[i])
    return out


def so3_left_jacobian_inverse_batch(phis: np.ndarray) -> np.ndarray:
    """so3_left_jacobian_inverse over a stack of axis-angle vectors."""
    g = phis.shape[0]
    theta = np.linalg.norm(phis, axis=1)
    K = np.zeros((g, 3, 3))
    K[:, 0, 1] = -phis[:, 2]
    K[:, 0, 2] = phis[:, 1]
    K[:, 1, 0] = phis[:, 2]
    K[:, 1, 2] = -phis[:, 0]
    K[:, 2, 0] = -phis[:, 1]
    K[:, 2, 1] = phis[:, 0]
    KK = K @ K
    safe = np.maximum(theta, 1e-12)
    coeff = np.where(
        theta < 1e-6, 1.0 / 12.0,
        1.0 / safe**2 - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)))
    return np.eye(3)[None] - 0.5 * K + coeff[:, None, None] * KK


@dataclass(frozen=True)
class Rotation:
    """3x3 rotation matrix, orthonormal with det +1 (checked to 1e-9)."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float).reshape(3, 3).copy()
        err = float(np.abs(m.T @ m - np.eye(3)).max())
        if err >= _ORTHONORMAL_TOL:
            raise ValueError(f"not orthonormal: |R^T R - I|_inf = {err:.3e}")
        det = float(np.linalg.det(m))
        if abs(det - 1.0) >= 1e-9:
            raise ValueError(f"det(R) = {det!r}, expected +1")
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.eye(3))

    @staticmethod
    def from_axis_angle(w) -> "Rotation":
        return Rotation(so3_exp(w))

    @staticmethod
    def from_rpy(roll: float, pitch: float, yaw: float) -> "Rotation":
        """Extrinsic x-y-z rotation: Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
        rx = so3_exp([roll, 0.0, 0.0])
        ry = so3_exp([0.0, pitch, 0.0])
        rz = so3_exp([0.0, 0.0, yaw])
        return Rotation(rz @ ry @ rx)

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return Rotation(self.m @ other.m)

    def inverse(self) -> "Rotation":
        return Rotation(self.m.T)

    def apply(self, v) -> np.ndarray:
        return self.m @ _vec3(v)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation plus translation in meters."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        t = _vec3(self.translation).copy()
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(Rotation.identity(), np.zeros(3))

    @staticmethod
    def from_xyz_rpy(xyz, rpy=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(Rotation.from_rpy(*rpy), _vec3(xyz))

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation,
                    self.translation + self.rotation.apply(other.translation))

    def apply(self, v) -> np.ndarray:
        return self.rotation.apply(v) + self.translation

    def inverse(self) -> "Pose":
        rinv = self.rotation.inverse()
        return Pose(rinv, -rinv.apply(self.translation))

    def as_matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation.m
        out[:3, 3] = self.translation
        return out


def desired_grasp_rotation(ee, hand, world_up=(0.0, 0.0, 1.0)) -> Rotation:
    """Gripper target orientation for a handover.

    The z column points from the end effector toward the partner's hand; the
    x column is the unit vector in the plane perpendicular to z that points
    most downward (minimum dot with world_up); y completes the right-handed
    frame as z cross x.

    Raises DegenerateDirection when the hand direction is parallel to
    world_up within 1e-6 or the hand coincides with the end effector.
    """
    ee = _vec3(ee)
    hand = _vec3(hand)
    up = _vec3(world_up)
    up = up / np.linalg.norm(up)
    v = hand - ee
    n = float(np.linalg.norm(v))
    if n <= 1e-6:
        raise DegenerateDirection("hand coincides with end effector")
    z = v / n
    down = -up
    x = down - float(down @ z) * z
    nx = float(np.linalg.norm(x))
    if nx <= 1e-6:
        raise DegenerateDirection("hand direction parallel to world up")
    x = x / nx
    y = np.cross(z, x)
    return Rotation(np.column_stack([x, y, z]))


# --- obstacle primitives -----------------------------------------------------

# type codes shared with the kernel backends
SPHERE, BOX, CAPSULE = 0, 1, 2


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center))
        if self.radius <= 0.0:
            raise ValueError("sphere radius must be > 0")

    def encode(self) -> tuple[int, np.ndarray]:
        p = np.zeros(7)
        p[:3] = self.center
        p[3] = self.radius
        return SPHERE, p


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by center and half-extents."""

    center: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center))
        object.__setattr__(self, "half_extents", _vec3(self.half_extents))
        if not np.all(self.half_extents > 0.0):
            raise ValueError("box half-extents must be > 0")

    def encode(self) -> tuple[int, np.ndarray]:
        p = np.zeros(7)
        p[:3] = self.center
        p[3:6] = self.half_extents
        return BOX, p


@dataclass(frozen=True)
class Capsule:
    """Capsule: segment from p0 to p1 inflated by radius."""

    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "p0", _vec3(self.p0))
        object.__setattr__(self, "p1", _vec3(self.p1))
        if self.radius <= 0.0:
            raise ValueError("capsule radius must be > 0")

    def encode(self) -> tuple[int, np.ndarray]:
        p = np.zeros(7)
        p[:3] = self.p0
        p[3:6] = self.p1
        p[6] = self.radius
        return CAPSULE, p


@dataclass(frozen=True)
class GridSdf:
    """Signed distances sampled on a regular voxel grid.

    Queries use trilinear interpolation; gradients are central differences of
    the interpolant with step half a voxel.
    """

    origin: np.ndarray
    voxel: float
    values: np.ndarray  # shape (nx, ny, nz)

    def __post_init__(self):
        object.__setattr__(self, "origin", _vec3(self.origin))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.voxel <= 0.0:
            raise ValueError("voxel size must be > 0")
        if self.values.ndim != 3:
            raise ValueError("grid values must be a 3-d array")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    def interpolate(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        rel = (pts - self.origin) / self.voxel
        hi = np.array(self.values.shape, dtype=float) - 1.0
        rel = np.clip(rel, 0.0, hi - 1e-9)
        i0 = np.floor(rel).astype(int)
        i0 = np.minimum(i0, np.array(self.values.shape) - 2)
        f = rel - i0
        v = self.values
        ix, iy, iz = i0[:, 0], i0[:, 1], i0[:, 2]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
        c000 = v[ix, iy, iz]
        c100 = v[ix + 1, iy, iz]
        c010 = v[ix, iy + 1, iz]
        c110 = v[ix + 1, iy + 1, iz]
        c001 = v[ix, iy, iz + 1]
        c101 = v[ix + 1, iy, iz + 1]
        c011 = v[ix, iy + 1, iz + 1]
        c111 = v[ix + 1, iy + 1, iz + 1]
        c00 = c000 * (1 - fx) + c100 * fx
        c10 = c010 * (1 - fx) + c110 * fx
        c01 = c001 * (1 - fx) + c101 * fx
        c11 = c011 * (1 - fx) + c111 * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        return c0 * (1 - fz) + c1 * fz

    def gradient(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        h = 0.5 * self.voxel
        grad = np.empty_like(pts)
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            grad[:, axis] = (self.interpolate(pts + step)
                             - self.interpolate(pts - step)) / (2.0 * h)
        return grad


@dataclass(frozen=True)
class ObstacleWorld:
    """Collection of obstacle primitives with exact signed-distance queries."""

    primitives: tuple = ()
    grid: GridSdf | None = None

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))

    @property
    def empty(self) -> bool:
        return len(self.primitives) == 0

    @cached_property
    def _arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if self.empty:
            return np.zeros(0, dtype=np.int64), np.zeros((0, 7))
        encoded = [p.encode() for p in self.primitives]
        types = np.array([code for code, _ in encoded], dtype=np.int64)
        params = np.ascontiguousarray([p for _, p in encoded], dtype=float)
        return types, params

    def signed_distance(self, p) -> float:
        """Minimum over primitives of the exact signed distance, negative inside."""
        return float(self.signed_distance_batch(np.atleast_2d(_vec3(p)))[0])

    def signed_distance_batch(self, pts) -> np.ndarray:
        pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=float)
        if self.empty:
            return np.full(pts.shape[0], EMPTY_WORLD_DISTANCE)
        types, params = self._arrays
        d, _ = kernels.sdf_batch(types, params, pts)
        return d

    def distance_and_gradient(self, pts) -> tuple[np.ndarray, np.ndarray]:
        """Signed distance and its gradient (unit outward away from surface)."""
        pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=float)
        if self.empty:
            return (np.full(pts.shape[0], EMPTY_WORLD_DISTANCE),
                    np.zeros_like(pts))
        types, params = self._arrays
        return kernels.sdf_batch(types, params, pts)

    def with_sampled_grid(self, voxel: float, padding: float = 0.3) -> "ObstacleWorld":
        """Return a copy carrying a voxel grid sampled from the exact field."""
        if self.empty:
            raise ValueError("cannot sample a grid over an empty world")
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        for prim in self.primitives:
            if isinstance(prim, Sphere):
                lo = np.minimum(lo, prim.center - prim.radius)
                hi = np.maximum(hi, prim.center + prim.radius)
            elif isinstance(prim, Box):
                lo = np.minimum(lo, prim.center - prim.half_extents)
                hi = np.maximum(hi, prim.center + prim.half_extents)
            else:
                lo = np.minimum(lo, np.minimum(prim.p0, prim.p1) - prim.radius)
                hi = np.maximum(hi, np.maximum(prim.p0, prim.p1) + prim.radius)
        lo -= padding
        hi += padding
        dims = np.ceil((hi - lo) / voxel).astype(int) + 1
        ax = [lo[i] + voxel * np.arange(dims[i]) for i in range(3)]
        gx, gy, gz = np.meshgrid(*ax, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
        values = self.signed_distance_batch(pts).reshape(dims)
        return ObstacleWorld(self.primitives, GridSdf(lo, voxel, values))

    def to_json(self) -> str:
        prims = []
        for p in self.primitives:
            if isinstance(p, Sphere):
                prims.append({"type": "sphere", "center": list(p.center),
                              "radius": p.radius})
            elif isinstance(p, Box):
                prims.append({"type": "box", "center": list(p.center),
                              "half_extents": list(p.half_extents)})
            else:
                prims.append({"type": "capsule", "p0": list(p.p0),
                              "p1": list(p.p1), "radius": p.radius})
        return json.dumps({"unit": "m", "primitives": prims})

    @staticmethod
    def from_json(text: str) -> "ObstacleWorld":
        doc = json.loads(text)
        prims = []
        for spec in doc.get("primitives", []):
            kind = spec["type"]
            if kind == "sphere":
                prims.append(Sphere(spec["center"], spec["radius"]))
            elif kind == "box":
                prims.append(Box(spec["center"], spec["half_extents"]))
            elif kind == "capsule":
                prims.append(Capsule(spec["p0"], spec["p1"], spec["radius"]))
            else:
                raise ValueError(f"unknown primitive type {kind!r}")
        return ObstacleWorld(tuple(prims))


def signed_distance(world: ObstacleWorld, p) -> float:
    return world.signed_distance(p)
