import math

import numpy as np
import pytest

from mapvins.geometry import RigidTransform, Rotation, yaw_rotation
from mapvins.metrics import (
    DegenerateGeometryError,
    MetricError,
    Trajectory,
    align_se3,
    alignment_error,
    associate,
    load_point_cloud,
    load_trajectory,
    local_trajectory_error,
    map_trajectory_error,
    mapping_keyframe_error,
    mapping_point_error,
    save_point_cloud,
    save_trajectory,
)


def make_traj(positions, rotations=None, t0=0.0, dt=0.1, frame="x"):
    positions = np.atleast_2d(positions)
    n = len(positions)
    rotations = rotations or [Rotation.identity()] * n
    poses = tuple(RigidTransform(r, p) for r, p in zip(rotations, positions))
    return Trajectory(t0 + dt * np.arange(n), poses, frame)


def random_traj(rng, n=20):
    positions = np.cumsum(rng.normal(0, 0.5, size=(n, 3)), axis=0)
    rotations = [Rotation(rng.normal(size=4)) for _ in range(n)]
    return make_traj(positions, rotations)


def transform_traj(traj, t: RigidTransform):
    poses = tuple(t @ p for p in traj.poses)
    return Trajectory(traj.times, poses, traj.frame)


class TestAlignSE3:
    def test_identity_for_identical(self):
        traj = random_traj(np.random.default_rng(1))
        out = align_se3(traj, traj)
        assert out.rotation.angle() < 1e-12
        assert np.linalg.norm(out.translation) < 1e-12

    def test_recovers_known_offset(self):
        traj = random_traj(np.random.default_rng(2))
        offset = RigidTransform(Rotation.from_rotvec([0.2, -0.4, 0.9]), [1.0, -2.0, 3.0])
        out = align_se3(traj, transform_traj(traj, offset))
        assert out.rotation.angle_to(offset.rotation) < 1e-9
        assert np.linalg.norm(out.translation - offset.translation) < 1e-9

    def test_noisy_recovery_within_bounds(self):
        # Oracle: the known generator; noise sigma=0.01 m
        rng = np.random.default_rng(3)
        traj = random_traj(rng, n=200)
        offset = RigidTransform(Rotation.from_rotvec([0.1, 0.3, -0.2]), [0.5, 0.1, -0.7])
        noisy = Trajectory(traj.times,
                           tuple(RigidTransform(p.rotation,
                                                p.translation + rng.normal(0, 0.01, 3))
                                 for p in transform_traj(traj, offset).poses),
                           traj.frame)
        out = align_se3(traj, noisy)
        assert np.linalg.norm(out.translation - offset.translation) < 0.03
        assert out.rotation.angle_to(offset.rotation) < 0.03

    def test_too_few_pairs(self):
        traj = make_traj([[0, 0, 0], [1, 0, 0]])
        with pytest.raises(MetricError):
            align_se3(traj, traj)

    def test_collinear_reported(self):
        traj = make_traj([[float(i), 0.0, 0.0] for i in range(10)])
        with pytest.raises(DegenerateGeometryError):
            align_se3(traj, traj)


class TestMappingKeyframeError:
    def test_identical_zero(self):
        traj = random_traj(np.random.default_rng(4))
        assert mapping_keyframe_error(traj, traj) < 1e-12

    def test_alternating_perturbation_gives_exact_rmse(self):
        # Hand-constructed so the optimal alignment is the identity: zero-sum
        # perturbations orthogonal to the trajectory with zero cross moment.
        base = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                         [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
        signs = np.array([1.0, -1.0, -1.0, 1.0])
        est = base.copy()
        gt = base.copy()
        gt[:, 2] += 0.1 * signs
        # also break collinearity symmetrically (same offsets in both)
        est[:, 1] += np.array([0.0, 1.0, -1.0, 0.0])
        gt[:, 1] += np.array([0.0, 1.0, -1.0, 0.0])
        err = mapping_keyframe_error(make_traj(est), make_traj(gt))
        assert err == pytest.approx(0.1, abs=1e-9)

    def test_single_keyframe_errors(self):
        traj = make_traj([[0.0, 0.0, 0.0]])
        with pytest.raises(MetricError):
            mapping_keyframe_error(traj, traj)


class TestMappingPointError:
    def test_identical_zero(self):
        rng = np.random.default_rng(5)
        cloud = rng.uniform(-5, 5, size=(300, 3))
        res = mapping_point_error(cloud, cloud)
        assert res.rmse < 1e-9

    def test_small_rigid_motion_recovered(self):
        rng = np.random.default_rng(6)
        cloud = rng.uniform(-5, 5, size=(500, 3))
        offset = RigidTransform(Rotation.from_rotvec([0.02, -0.015, 0.03]),
                                [0.05, -0.04, 0.06])
        moved = cloud @ offset.rotation.as_matrix().T + offset.translation
        res = mapping_point_error(moved, cloud)
        assert res.rmse < 0.01
        assert res.converged

    def test_radial_noise_rmse_matches_scale(self):
        # Oracle: known perturbation statistics (uniform radial, 0.05 m)
        rng = np.random.default_rng(7)
        cloud = rng.uniform(-10, 10, size=(1000, 3))
        dirs = rng.normal(size=(1000, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        noisy = cloud + 0.05 * dirs
        res = mapping_point_error(noisy, cloud)
        assert res.rmse == pytest.approx(0.05, rel=0.25)

    def test_empty_cloud_rejected(self):
        with pytest.raises(MetricError):
            mapping_point_error(np.zeros((0, 3)), np.ones((4, 3)))


class TestAlignmentError:
    def test_identical(self):
        t = RigidTransform(yaw_rotation(0.3), [1, 2, 3])
        assert alignment_error(t, t) == (0.0, 0.0)

    def test_ninety_degree_yaw(self):
        a = RigidTransform(Rotation.identity(), np.zeros(3))
        b = RigidTransform(yaw_rotation(math.pi / 2), np.zeros(3))
        dt, dr = alignment_error(a, b)
        assert dt == 0.0
        assert dr == pytest.approx(math.pi / 2, abs=1e-12)

    def test_matches_quaternion_angle_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            a = RigidTransform(Rotation(rng.normal(size=4)), rng.normal(size=3))
            b = RigidTransform(Rotation(rng.normal(size=4)), rng.normal(size=3))
            dt, dr = alignment_error(a, b)
            assert dr == pytest.approx(a.rotation.angle_to(b.rotation), abs=1e-10)
            assert dt == pytest.approx(np.linalg.norm(a.translation - b.translation))

    def test_symmetric_in_rotation(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            a = RigidTransform(Rotation(rng.normal(size=4)), rng.normal(size=3))
            b = RigidTransform(Rotation(rng.normal(size=4)), rng.normal(size=3))
            assert alignment_error(a, b)[1] == pytest.approx(alignment_error(b, a)[1],
                                                             abs=1e-12)


class TestLocalTrajectoryError:
    def test_identical_zero(self):
        # first-pose self-alignment leaves only float rounding
        traj = random_traj(np.random.default_rng(10))
        assert local_trajectory_error(traj, traj) < 1e-12

    def test_rigidly_transformed_estimate_is_zero(self):
        # first-frame alignment removes any global rigid offset exactly
        traj = random_traj(np.random.default_rng(11))
        offset = RigidTransform(Rotation.from_rotvec([0.4, 0.1, -0.3]), [5.0, -1.0, 2.0])
        assert local_trajectory_error(transform_traj(traj, offset), traj) < 1e-9

    def test_linear_drift_matches_direct_sum(self):
        # Oracle: direct summation of the drift magnitudes
        n = 100
        drift = 0.01
        base = np.column_stack([np.arange(n, dtype=float), np.zeros(n), np.zeros(n)])
        est = base.copy()
        est[:, 1] += drift * np.arange(n)
        expected = math.sqrt(sum((drift * k) ** 2 for k in range(1, n)) / (n - 1))
        err = local_trajectory_error(make_traj(est), make_traj(base))
        assert err == pytest.approx(expected, abs=1e-12)

    def test_invariant_under_global_transform_of_both(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            est = random_traj(rng)
            gt = transform_traj(est, RigidTransform(Rotation(rng.normal(size=4)),
                                                    rng.normal(size=3)))
            gt = Trajectory(gt.times,
                            tuple(RigidTransform(p.rotation,
                                                 p.translation + rng.normal(0, 0.1, 3))
                                  for p in gt.poses), "gt")
            base = local_trajectory_error(est, gt)
            world = RigidTransform(Rotation(rng.normal(size=4)), rng.normal(size=3))
            moved = local_trajectory_error(transform_traj(est, world),
                                           transform_traj(gt, world))
            assert moved == pytest.approx(base, abs=1e-9)

    def test_singleton_rejected(self):
        traj = make_traj([[0.0, 0.0, 0.0]])
        with pytest.raises(MetricError):
            local_trajectory_error(traj, traj)


class TestMapTrajectoryError:
    def test_identical_zero(self):
        traj = random_traj(np.random.default_rng(13))
        assert map_trajectory_error(traj, traj) == 0.0

    def test_constant_offset_is_345(self):
        traj = random_traj(np.random.default_rng(14))
        moved = Trajectory(traj.times,
                           tuple(RigidTransform(p.rotation,
                                                p.translation + np.array([3.0, 4.0, 0.0]))
                                 for p in traj.poses), traj.frame)
        assert map_trajectory_error(moved, traj) == pytest.approx(5.0, abs=1e-12)

    def test_not_alignment_invariant(self):
        rng = np.random.default_rng(15)
        est = random_traj(rng)
        gt = transform_traj(est, RigidTransform(Rotation.identity(), [0.5, 0, 0]))
        base = map_trajectory_error(est, gt)
        world = RigidTransform(yaw_rotation(1.0), [3.0, -2.0, 1.0])
        moved = map_trajectory_error(transform_traj(est, world), gt)
        assert abs(moved - base) > 0.1  # moving only the estimate changes it

    def test_empty_association(self):
        a = make_traj([[0, 0, 0], [1, 0, 0]], t0=0.0)
        b = make_traj([[0, 0, 0], [1, 0, 0]], t0=100.0)
        with pytest.raises(MetricError):
            map_trajectory_error(a, b)


class TestFiles:
    def test_trajectory_roundtrip(self, tmp_path):
        traj = random_traj(np.random.default_rng(16))
        path = tmp_path / "traj.txt"
        save_trajectory(traj, path)
        again = load_trajectory(path)
        assert np.array_equal(again.times, traj.times)
        for a, b in zip(again.poses, traj.poses):
            assert np.array_equal(a.translation, b.translation)
            assert np.array_equal(a.rotation.quaternion, b.rotation.quaternion)

    def test_point_cloud_roundtrip(self, tmp_path):
        cloud = np.random.default_rng(17).uniform(-3, 3, size=(50, 3))
        path = tmp_path / "cloud.xyz"
        save_point_cloud(cloud, path)
        assert np.array_equal(load_point_cloud(path), cloud)

    def test_association_tolerance(self):
        a = make_traj([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dt=0.1)
        b = Trajectory(np.array([0.004, 0.1, 0.5]),
                       tuple(RigidTransform(Rotation.identity(), [i, 0, 0])
                             for i in range(3)), "b")
        pairs = associate(a, b, tolerance=0.01)
        assert pairs == [(0, 0), (1, 1)]
