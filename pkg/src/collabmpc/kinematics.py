"""Serial-chain robot model: forward kinematics, skeleton placement, Jacobians.

A chain is an ordered list of revolute joints. Each joint applies a fixed
transform followed by a rotation about a unit axis in the post-transform
frame; a final fixed offset locates the end effector. Collision geometry is
a skeleton of spheres rigidly attached to link frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources

import numpy as np

from . import kernels
from .errors import DimensionMismatch
from .geometry import Pose, Rotation


@dataclass(frozen=True)
class Link:
    """Fixed transform to the joint frame plus the revolute axis in it."""

    fixed: Pose
    axis: np.ndarray

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        n = np.linalg.norm(axis)
        if n < 1e-9:
            raise ValueError("joint axis must be nonzero")
        object.__setattr__(self, "axis", axis / n)


@dataclass(frozen=True)
class SkeletonSphere:
    """Collision sphere rigidly attached to a link frame."""

    link: int
    offset: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "offset",
                           np.asarray(self.offset, dtype=float).reshape(3))
        if self.radius <= 0.0:
            raise ValueError("skeleton sphere radius must be > 0")


@dataclass(frozen=True)
class SerialChain:
    links: tuple[Link, ...]
    ee_offset: Pose
    joint_limits: np.ndarray  # (n, 2) radians
    velocity_limits: np.ndarray  # (n,) rad/s
    skeleton: tuple[SkeletonSphere, ...]
    name: str = "chain"

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "skeleton", tuple(self.skeleton))
        lims = np.asarray(self.joint_limits, dtype=float).reshape(-1, 2)
        vels = np.asarray(self.velocity_limits, dtype=float).reshape(-1)
        n = len(self.links)
        if lims.shape[0] != n or vels.shape[0] != n:
            raise DimensionMismatch("limit arrays must match joint count")
        if not np.all(lims[:, 0] < lims[:, 1]):
            raise ValueError("joint limits must satisfy min < max")
        if not np.all(vels > 0.0):
            raise ValueError("velocity limits must be > 0")
        if not self.skeleton:
            raise ValueError("skeleton must be non-empty")
        for s in self.skeleton:
            if not 0 <= s.link < n:
                raise ValueError(f"skeleton sphere references link {s.link}")
        lims.flags.writeable = False
        vels.flags.writeable = False
        object.__setattr__(self, "joint_limits", lims)
        object.__setattr__(self, "velocity_limits", vels)

    @property
    def n_joints(self) -> int:
        return len(self.links)

    @property
    def n_spheres(self) -> int:
        return len(self.skeleton)

    @cached_property
    def _arrays(self):
        n = self.n_joints
        fixed_r = np.empty((n + 1, 3, 3))
        fixed_t = np.empty((n + 1, 3))
        axes = np.empty((n, 3))
        for i, link in enumerate(self.links):
            fixed_r[i] = link.fixed.rotation.m
            fixed_t[i] = link.fixed.translation
            axes[i] = link.axis
        fixed_r[n] = self.ee_offset.rotation.m
        fixed_t[n] = self.ee_offset.translation
        sph_link = np.array([s.link for s in self.skeleton], dtype=np.int64)
        sph_off = np.ascontiguousarray([s.offset for s in self.skeleton],
                                       dtype=float)
        sph_rad = np.array([s.radius for s in self.skeleton], dtype=float)
        for a in (fixed_r, fixed_t, axes, sph_link, sph_off, sph_rad):
            a.flags.writeable = False
        return fixed_r, fixed_t, axes, sph_link, sph_off, sph_rad

    @property
    def sphere_radii(self) -> np.ndarray:
        return self._arrays[5]

    def check_config(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape[0] != self.n_joints:
            raise DimensionMismatch(
                f"config has {q.shape[0]} joints, chain has {self.n_joints}")
        return q

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "links": [
                {"xyz": list(l.fixed.translation),
                 "rpy": _rpy_of(l.fixed.rotation),
                 "axis": list(l.axis)}
                for l in self.links
            ],
            "ee_offset": {"xyz": list(self.ee_offset.translation),
                          "rpy": _rpy_of(self.ee_offset.rotation)},
            "joint_limits": [list(row) for row in self.joint_limits],
            "velocity_limits": list(self.velocity_limits),
            "skeleton": [
                {"link": s.link, "offset": list(s.offset), "radius": s.radius}
                for s in self.skeleton
            ],
        }

    @staticmethod
    def from_dict(doc: dict) -> "SerialChain":
        links = tuple(
            Link(Pose.from_xyz_rpy(spec["xyz"], spec.get("rpy", (0, 0, 0))),
                 spec.get("axis", (0, 0, 1)))
            for spec in doc["links"]
        )
        ee = doc.get("ee_offset", {"xyz": [0, 0, 0]})
        skeleton = tuple(
            SkeletonSphere(s["link"], s["offset"], s["radius"])
            for s in doc["skeleton"]
        )
        return SerialChain(
            links=links,
            ee_offset=Pose.from_xyz_rpy(ee["xyz"], ee.get("rpy", (0, 0, 0))),
            joint_limits=doc["joint_limits"],
            velocity_limits=doc["velocity_limits"],
            skeleton=skeleton,
            name=doc.get("name", "chain"),
        )

    @staticmethod
    def from_file(path) -> "SerialChain":
        with open(path) as fh:
            return SerialChain.from_dict(json.load(fh))


def _rpy_of(rot: Rotation) -> list[float]:
    # inverse of Rotation.from_rpy (Rz(y) Ry(p) Rx(r)), gimbal branch clamped
    m = rot.m
    pitch = float(np.arcsin(np.clip(-m[2, 0], -1.0, 1.0)))
    if abs(m[2, 0]) < 1.0 - 1e-12:
        roll = float(np.arctan2(m[2, 1], m[2, 2]))
        yaw = float(np.arctan2(m[1, 0], m[0, 0]))
    else:
        roll = float(np.arctan2(-m[1, 2], m[1, 1]))
        yaw = 0.0
    return [roll, pitch, yaw]


@dataclass(frozen=True)
class FkBatch:
    """Per-knot kinematic quantities shared by the cost evaluations."""

    link_r: np.ndarray   # (m, n, 3, 3)
    link_t: np.ndarray   # (m, n, 3)
    org: np.ndarray      # (m, n, 3) joint origins
    axw: np.ndarray      # (m, n, 3) world joint axes
    ee_r: np.ndarray     # (m, 3, 3)
    ee_t: np.ndarray     # (m, 3)


def fk_batch(chain: SerialChain, q_batch) -> FkBatch:
    q_batch = np.ascontiguousarray(np.atleast_2d(q_batch), dtype=float)
    if q_batch.shape[1] != chain.n_joints:
        raise DimensionMismatch("config batch width does not match chain")
    fixed_r, fixed_t, axes, _, _, _ = chain._arrays
    out = kernels.fk_batch(fixed_r, fixed_t, axes, q_batch)
    return FkBatch(*out)


def forward_kinematics(chain: SerialChain, q) -> Pose:
    """End-effector pose in the world frame."""
    q = chain.check_config(q)
    fk = fk_batch(chain, q[None, :])
    return Pose(Rotation(fk.ee_r[0]), fk.ee_t[0])


def skeleton_positions(chain: SerialChain, q) -> list[tuple[np.ndarray, float]]:
    """World centers and radii of every skeleton sphere at configuration q."""
    q = chain.check_config(q)
    fk = fk_batch(chain, q[None, :])
    _, _, _, sph_link, sph_off, sph_rad = chain._arrays
    centers = kernels.sphere_centers(fk.link_r, fk.link_t, sph_link, sph_off)[0]
    return [(centers[i].copy(), float(sph_rad[i]))
            for i in range(len(sph_rad))]


def skeleton_centers_batch(chain: SerialChain, fk: FkBatch) -> np.ndarray:
    _, _, _, sph_link, sph_off, _ = chain._arrays
    return kernels.sphere_centers(fk.link_r, fk.link_t, sph_link, sph_off)


def skeleton_jacobians_batch(chain: SerialChain, fk: FkBatch,
                             centers: np.ndarray) -> np.ndarray:
    _, _, _, sph_link, _, _ = chain._arrays
    return kernels.sphere_jacobians(fk.org, fk.axw, centers, sph_link)


def ee_point_jacobian_batch(fk: FkBatch) -> np.ndarray:
    return kernels.point_jacobian(fk.org, fk.axw, fk.ee_t)


def ee_rotation_jacobian_batch(fk: FkBatch) -> np.ndarray:
    return kernels.rotation_jacobian(fk.axw)


def task_jacobian(chain: SerialChain, q, point="ee") -> np.ndarray:
    """Geometric Jacobian at configuration q.

    point="ee" gives the 6 x n end-effector Jacobian (position rows first,
    then orientation rows); an integer selects a skeleton sphere and gives
    its 3 x n position Jacobian.
    """
    q = chain.check_config(q)
    fk = fk_batch(chain, q[None, :])
    if point == "ee":
        jp = ee_point_jacobian_batch(fk)[0]
        jw = ee_rotation_jacobian_batch(fk)[0]
        return np.vstack([jp, jw])
    idx = int(point)
    if not 0 <= idx < chain.n_spheres:
        raise DimensionMismatch(f"skeleton index {idx} out of range")
    centers = skeleton_centers_batch(chain, fk)
    return skeleton_jacobians_batch(chain, fk, centers)[0, idx]


# --- fixtures ---------------------------------------------------------------

def planar_chain(lengths=(0.4, 0.3, 0.2), limit: float = 2.6,
                 vel_limit: float = 2.5, name: str = "planar") -> SerialChain:
    """Planar chain of revolute z joints with links along local x.

    Used as the small analytic fixture: FK and Jacobians are easy to verify
    by hand in the xy plane.
    """
    links = []
    skeleton = []
    prev = 0.0
    for i, length in enumerate(lengths):
        links.append(Link(Pose.from_xyz_rpy([prev, 0.0, 0.0]), [0.0, 0.0, 1.0]))
        skeleton.append(SkeletonSphere(i, [length / 3.0, 0.0, 0.0], 0.05))
        skeleton.append(SkeletonSphere(i, [2.0 * length / 3.0, 0.0, 0.0], 0.05))
        prev = length
    n = len(lengths)
    return SerialChain(
        links=tuple(links),
        ee_offset=Pose.from_xyz_rpy([lengths[-1], 0.0, 0.0]),
        joint_limits=[[-limit, limit]] * n,
        velocity_limits=[vel_limit] * n,
        skeleton=tuple(skeleton),
        name=name,
    )


_FIXTURES = {"planar3": "planar3.json", "franka7": "franka7.json"}


def load_fixture(name: str) -> SerialChain:
    """Load one of the chains shipped with the package."""
    try:
        fname = _FIXTURES[name]
    except KeyError:
        raise KeyError(f"unknown chain fixture {name!r}; have {sorted(_FIXTURES)}")
    text = resources.files("collabmpc.fixtures").joinpath(fname).read_text()
    return SerialChain.from_dict(json.loads(text))
