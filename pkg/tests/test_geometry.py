import numpy as np
import pytest
from scipy.spatial.transform import Rotation as ScipyRotation

from collabmpc.errors import DegenerateDirection
from collabmpc.geometry import (Box, Capsule, GridSdf, ObstacleWorld, Pose,
                                Rotation, Sphere, desired_grasp_rotation,
                                log_so3, signed_distance, so3_exp,
                                EMPTY_WORLD_DISTANCE)


def test_log_identity():
    assert np.allclose(log_so3(Rotation.identity()), 0.0)


def test_log_quarter_turn_z():
    r = Rotation.from_axis_angle([0.0, 0.0, np.pi / 2])
    assert np.allclose(log_so3(r), [0.0, 0.0, np.pi / 2], atol=1e-12)


def test_log_exp_round_trip_against_scipy():
    # oracle: an independent exponential map (scipy Rotation.from_rotvec)
    rng = np.random.default_rng(4)
    for _ in range(300):
        w = rng.normal(size=3)
        w *= rng.uniform(0.0, np.pi - 1e-3) / np.linalg.norm(w)
        m = ScipyRotation.from_rotvec(w).as_matrix()
        assert np.abs(log_so3(m) - w).max() < 1e-9
        assert np.abs(so3_exp(w) - m).max() < 1e-12


def test_log_exp_small_angles():
    rng = np.random.default_rng(5)
    for scale in (1e-10, 1e-8, 1e-6):
        w = rng.normal(size=3)
        w *= scale / np.linalg.norm(w)
        assert np.abs(log_so3(so3_exp(w)) - w).max() < 1e-12


def test_log_angle_pi_sign_convention():
    # axis component with the largest magnitude comes out positive
    axis = np.array([0.6, -0.64, 0.48])
    axis /= np.linalg.norm(axis)
    m = ScipyRotation.from_rotvec(axis * np.pi).as_matrix()
    w = log_so3(m)
    assert np.isclose(np.linalg.norm(w), np.pi, atol=1e-9)
    k = np.argmax(np.abs(w))
    assert w[k] > 0
    assert np.abs(np.abs(w) - np.abs(axis) * np.pi).max() < 1e-7


def test_rotation_validation():
    with pytest.raises(ValueError):
        Rotation(np.eye(3) * 1.001)
    with pytest.raises(ValueError):
        Rotation(-np.eye(3))  # det -1


def test_pose_compose_apply():
    a = Pose.from_xyz_rpy([1.0, 0.0, 0.0], [0.0, 0.0, np.pi / 2])
    b = Pose.from_xyz_rpy([1.0, 0.0, 0.0])
    assert np.allclose((a @ b).translation, [1.0, 1.0, 0.0])
    assert np.allclose(a.apply([1.0, 0.0, 0.0]), [1.0, 1.0, 0.0])
    ai = a.inverse()
    assert np.allclose((a @ ai).translation, 0.0, atol=1e-12)


class TestDesiredGraspRotation:
    def test_hand_along_y(self):
        r = desired_grasp_rotation([0, 0, 0], [0, 1, 0], [0, 0, 1])
        assert np.allclose(r.m[:, 0], [0, 0, -1], atol=1e-12)
        assert np.allclose(r.m[:, 1], [-1, 0, 0], atol=1e-12)
        assert np.allclose(r.m[:, 2], [0, 1, 0], atol=1e-12)
        assert np.isclose(np.linalg.det(r.m), 1.0)

    def test_hand_along_x(self):
        r = desired_grasp_rotation([0, 0, 0], [1, 0, 0])
        assert np.allclose(r.m[:, 0], [0, 0, -1], atol=1e-12)
        assert np.allclose(r.m[:, 1], [0, 1, 0], atol=1e-12)
        assert np.allclose(r.m[:, 2], [1, 0, 0], atol=1e-12)

    def test_x_column_is_most_downward(self):
        # oracle: brute force over sampled unit vectors in the plane normal to z
        rng = np.random.default_rng(11)
        up = np.array([0.0, 0.0, 1.0])
        for _ in range(20):
            hand = rng.normal(size=3)
            if abs(hand[2]) / np.linalg.norm(hand) > 0.98:
                continue
            r = desired_grasp_rotation([0, 0, 0], hand, up)
            x, z = r.m[:, 0], r.m[:, 2]
            e1 = np.cross(z, up)
            e1 /= np.linalg.norm(e1)
            e2 = np.cross(z, e1)
            best = min(float((np.cos(a) * e1 + np.sin(a) * e2) @ up)
                       for a in np.linspace(0.0, 2 * np.pi, 1000, endpoint=False))
            assert float(x @ up) <= best + 1e-5

    def test_rotation_valid_for_random_directions(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            hand = rng.normal(size=3)
            if abs(hand[2]) / np.linalg.norm(hand) > 0.999:
                continue
            r = desired_grasp_rotation([0, 0, 0], hand)
            assert np.abs(r.m.T @ r.m - np.eye(3)).max() < 1e-9
            assert abs(np.linalg.det(r.m) - 1.0) < 1e-9

    def test_degenerate_direction(self):
        with pytest.raises(DegenerateDirection):
            desired_grasp_rotation([0, 0, 0], [0, 0, 1])
        with pytest.raises(DegenerateDirection):
            desired_grasp_rotation([0, 0, 0], [1e-9, 0, 0])


class TestSignedDistance:
    def test_sphere_outside_and_center(self):
        w = ObstacleWorld((Sphere([0, 0, 0], 0.5),))
        assert np.isclose(signed_distance(w, [1, 0, 0]), 0.5)
        assert np.isclose(signed_distance(w, [0, 0, 0]), -0.5)

    def test_box_face(self):
        w = ObstacleWorld((Box([0, 0, 0], [0.1, 0.1, 0.1]),))
        assert np.isclose(signed_distance(w, [0.2, 0, 0]), 0.1)
        assert np.isclose(signed_distance(w, [0, 0, 0]), -0.1)

    def test_capsule(self):
        w = ObstacleWorld((Capsule([0, 0, 0], [1, 0, 0], 0.2),))
        assert np.isclose(signed_distance(w, [0.5, 0.5, 0.0]), 0.3)
        assert np.isclose(signed_distance(w, [-0.3, 0, 0]), 0.1)

    def test_min_over_primitives(self):
        w = ObstacleWorld((Sphere([0, 0, 0], 0.5), Sphere([2, 0, 0], 0.5)))
        assert np.isclose(signed_distance(w, [1.2, 0, 0]), 0.3)

    def test_empty_world_sentinel(self):
        w = ObstacleWorld()
        assert signed_distance(w, [0, 0, 0]) == EMPTY_WORLD_DISTANCE

    def test_gradient_matches_finite_differences(self):
        w = ObstacleWorld((Sphere([0.2, 0, 0], 0.3),
                           Box([-0.5, 0.1, 0.0], [0.2, 0.15, 0.1]),
                           Capsule([0, 0.5, 0], [0.3, 0.8, 0.2], 0.12)))
        rng = np.random.default_rng(21)
        pts = rng.uniform(-1.2, 1.2, size=(200, 3))
        d, g = w.distance_and_gradient(pts)
        h = 1e-6
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            fd = (w.signed_distance_batch(pts + step)
                  - w.signed_distance_batch(pts - step)) / (2 * h)
            # skip points near the non-smooth medial surfaces
            smooth = np.abs(fd - g[:, axis]) < 1e-4
            assert smooth.mean() > 0.95
            assert np.abs(fd[smooth] - g[smooth, axis]).max() < 1e-4

    def test_lipschitz(self):
        w = ObstacleWorld((Sphere([0.2, 0, 0], 0.3),
                           Box([-0.5, 0.1, 0.0], [0.2, 0.15, 0.1]),
                           Capsule([0, 0.5, 0], [0.3, 0.8, 0.2], 0.12)))
        rng = np.random.default_rng(22)
        p = rng.uniform(-1.5, 1.5, size=(500, 3))
        q = p + rng.normal(scale=0.2, size=(500, 3))
        dp = w.signed_distance_batch(p)
        dq = w.signed_distance_batch(q)
        gap = np.linalg.norm(p - q, axis=1)
        assert np.all(np.abs(dp - dq) <= gap + 1e-9)


class TestGridSdf:
    def test_grid_matches_exact_within_voxel_bound(self):
        w = ObstacleWorld((Sphere([0.1, 0.0, 0.2], 0.3),
                           Box([-0.4, 0.2, 0.0], [0.2, 0.1, 0.15]),
                           Capsule([0.2, -0.4, 0], [0.5, -0.1, 0.3], 0.1)))
        voxel = 0.05
        wg = w.with_sampled_grid(voxel, padding=0.25)
        rng = np.random.default_rng(23)
        lo = wg.grid.origin + voxel
        hi = wg.grid.origin + (np.array(wg.grid.dims) - 2) * voxel
        pts = rng.uniform(lo, hi, size=(10_000, 3))
        exact = w.signed_distance_batch(pts)
        interp = wg.grid.interpolate(pts)
        assert np.abs(exact - interp).max() < 1.5 * voxel

    def test_grid_gradient_unit_scale(self):
        w = ObstacleWorld((Sphere([0.0, 0.0, 0.0], 0.3),))
        wg = w.with_sampled_grid(0.04, padding=0.3)
        g = wg.grid.gradient(np.array([[0.45, 0.0, 0.0]]))[0]
        assert np.allclose(g, [1.0, 0.0, 0.0], atol=0.05)

    def test_voxel_validation(self):
        with pytest.raises(ValueError):
            GridSdf([0, 0, 0], 0.0, np.zeros((2, 2, 2)))


def test_world_json_round_trip():
    w = ObstacleWorld((Sphere([0.1, 0.2, 0.3], 0.4),
                       Box([0, 0, 0], [0.1, 0.2, 0.3]),
                       Capsule([0, 0, 0], [1, 1, 1], 0.2)))
    w2 = ObstacleWorld.from_json(w.to_json())
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1, 2, size=(50, 3))
    assert np.array_equal(w.signed_distance_batch(pts),
                          w2.signed_distance_batch(pts))


def test_primitive_validation():
    with pytest.raises(ValueError):
        Sphere([0, 0, 0], 0.0)
    with pytest.raises(ValueError):
        Box([0, 0, 0], [0.1, -0.1, 0.1])
    with pytest.raises(ValueError):
        Capsule([0, 0, 0], [1, 0, 0], -0.5)
