import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asterhop import shapes
from asterhop.errors import DegenerateGeometry, NonConvergence
from asterhop.localization import (PointCloud, RigidTransform, ScanConfig, best_rigid_transform,
                                   brute_force_hits, chain_poses, drift, icp, read_pose_csv,
                                   scan_trajectory, simulate_scan, write_cloud_csv,
                                   write_pose_csv)

from .conftest import random_rotation
from .oracles import kabsch_reference


@pytest.fixture(scope="module")
def plate():
    return shapes.box(200.0, 200.0, 2.0)


def _random_transform(rng, max_deg=10.0, max_t=1.0):
    R = random_rotation(rng, math.radians(max_deg))
    t = rng.normal(size=3)
    t *= rng.uniform(0, max_t) / np.linalg.norm(t)
    return RigidTransform(R, t)


def _scan(lumpy, n=2000, seed=0):
    cfg = ScanConfig(240, 120, max_range=400.0)
    cloud = simulate_scan(lumpy, RigidTransform(np.eye(3), [320.0, 20.0, 30.0]), cfg)
    idx = np.random.default_rng(seed).choice(len(cloud), n, replace=False)
    return cloud.points[idx]


class TestRigidTransform:
    def test_rejects_reflection(self):
        with pytest.raises(ValueError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]))

    def test_compose_inverse(self, rng):
        a, b = _random_transform(rng, 90, 5), _random_transform(rng, 90, 5)
        p = rng.normal(size=(10, 3))
        np.testing.assert_allclose(a.compose(b).apply(p), a.apply(b.apply(p)), atol=1e-12)
        ident = a.compose(a.inverse())
        np.testing.assert_allclose(ident.R, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(ident.t, 0, atol=1e-12)

    def test_quaternion_roundtrip(self, rng):
        a = _random_transform(rng, 180, 3)
        q = a.quaternion()
        assert q[0] >= 0 and np.linalg.norm(q) == pytest.approx(1.0)
        b = RigidTransform.from_quaternion(q, a.t)
        np.testing.assert_allclose(b.R, a.R, atol=1e-12)


class TestScan:
    def test_nadir_point(self, plate):
        cfg = ScanConfig(4, 2, elevation_range=(-90.0, -89.999))
        cloud = simulate_scan(plate, RigidTransform(np.eye(3), [0, 0, 5.0]), cfg)
        # plate top at z = 1, sensor altitude 4
        np.testing.assert_allclose(cloud.points, np.tile([0, 0, -4.0], (len(cloud), 1)),
                                   atol=1e-4)

    def test_identical_poses_identical_clouds(self, lumpy):
        pose = RigidTransform(np.eye(3), [320.0, 0, 0])
        cfg = ScanConfig(60, 30)
        a, b = simulate_scan(lumpy, pose, cfg), simulate_scan(lumpy, pose, cfg)
        np.testing.assert_array_equal(a.points, b.points)

    def test_hit_count_matches_brute_force(self, lumpy):
        pose = RigidTransform(random_rotation(np.random.default_rng(3)), [300.0, 40.0, -20.0])
        cfg = ScanConfig(40, 20, max_range=250.0)
        assert len(simulate_scan(lumpy, pose, cfg)) == brute_force_hits(lumpy, pose, cfg)

    def test_ranges_bounded(self, lumpy):
        cfg = ScanConfig(60, 30, max_range=120.0, noise=0.0)
        cloud = simulate_scan(lumpy, RigidTransform(np.eye(3), [300.0, 0, 0]), cfg)
        assert len(cloud) > 0
        assert np.linalg.norm(cloud.points, axis=1).max() <= 120.0

    def test_inside_origin_rejected(self, lumpy):
        with pytest.raises(ValueError):
            simulate_scan(lumpy, RigidTransform(), ScanConfig(10, 10))

    def test_noise_needs_rng(self, lumpy):
        with pytest.raises(ValueError):
            simulate_scan(lumpy, RigidTransform(np.eye(3), [300.0, 0, 0]),
                          ScanConfig(10, 10, noise=0.01))

    def test_config_validation(self):
        for bad in (dict(n_azimuth=1), dict(frequency=0), dict(max_range=0), dict(noise=-1),
                    dict(elevation_range=(10, -10))):
            with pytest.raises(ValueError):
                ScanConfig(**bad)

    def test_scan_times_at_frequency(self, plate):
        times = np.linspace(0, 10, 11)
        P = np.column_stack([times * 0.1, np.zeros(11), np.full(11, 5.0)])
        scans = scan_trajectory(plate, times, P, ScanConfig(10, 5))
        assert [s.time for s in scans] == [0.0, 2.0, 4.0, 6.0, 8.0, 10.0]
        np.testing.assert_allclose(scans[2].pose.t, [0.4, 0, 5.0])


class TestAlignment:
    def test_matches_quaternion_oracle(self, rng):
        P = rng.normal(size=(50, 3))
        T = _random_transform(rng, 120, 10)
        Q = T.apply(P) + 0.01 * rng.normal(size=P.shape)
        est = best_rigid_transform(P, Q)
        R_ref, t_ref = kabsch_reference(P, Q)
        np.testing.assert_allclose(est.R, R_ref, atol=1e-10)
        np.testing.assert_allclose(est.t, t_ref, atol=1e-10)

    def test_reflection_corrected(self, rng):
        P = rng.normal(size=(30, 3))
        Q = P * np.array([1.0, 1.0, -1.0])
        est = best_rigid_transform(P, Q)
        assert np.linalg.det(est.R) == pytest.approx(1.0)

    def test_collinear_rejected(self):
        P = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
        with pytest.raises(DegenerateGeometry):
            best_rigid_transform(P, P + 1.0)
        with pytest.raises(DegenerateGeometry):
            best_rigid_transform(P[:2], P[:2])


class TestICP:
    def test_identity(self, lumpy):
        D = _scan(lumpy)
        res = icp(PointCloud(D), PointCloud(D))
        np.testing.assert_array_equal(res.transform.R, np.eye(3))
        np.testing.assert_array_equal(res.transform.t, np.zeros(3))
        assert res.mse == 0.0

    def test_exact_recovery_and_monotone(self, lumpy):
        D = _scan(lumpy)
        rng = np.random.default_rng(11)
        for _ in range(5):
            T = _random_transform(rng)
            res = icp(PointCloud(D), PointCloud(T.apply(D)), max_iter=200, tol=1e-20)
            ang, dt = res.transform.distance(T)
            assert ang < 1e-6 and dt < 1e-6
            assert np.all(np.diff(res.history) <= 0)

    def test_noisy_translation(self, lumpy):
        cfg = ScanConfig(180, 90, max_range=400.0)
        base = simulate_scan(lumpy, RigidTransform(np.eye(3), [320.0, 20.0, 30.0]), cfg).points
        errs = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            D = base[rng.choice(len(base), 5000, replace=len(base) < 5000)]
            T = _random_transform(rng, 5, 1)
            M = T.apply(D) + rng.normal(0, 0.01, D.shape)
            Dn = D + rng.normal(0, 0.01, D.shape)
            res = icp(PointCloud(Dn), PointCloud(M), max_iter=200)
            errs.append(np.linalg.norm(res.transform.t - T.t))
        assert max(errs) < 0.05

    def test_equivariance(self, lumpy, rng):
        D = _scan(lumpy, 800)
        T = _random_transform(rng, 5, 0.5)
        M = T.apply(D)
        S = _random_transform(rng, 180, 50)
        a = icp(PointCloud(D), PointCloud(M), max_iter=200, tol=1e-20).transform
        b = icp(PointCloud(S.apply(D)), PointCloud(S.apply(M)), max_iter=200,
                tol=1e-20).transform
        # b = S a S^-1
        c = S.compose(a).compose(S.inverse())
        ang, dt = b.distance(c)
        assert ang < 1e-9 and dt < 1e-9

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_history_non_increasing_and_rotation_valid(self, seed):
        rng = np.random.default_rng(seed)
        D = rng.normal(size=(300, 3)) * [10, 5, 2]
        T = _random_transform(rng, 20, 3)
        M = T.apply(D[rng.permutation(300)[:250]]) + rng.normal(0, 0.05, (250, 3))
        res = icp(PointCloud(D), PointCloud(M), max_iter=30)
        assert np.all(np.diff(res.history) <= 1e-12 * res.history[0])
        R = res.transform.R
        assert np.allclose(R.T @ R, np.eye(3), atol=1e-9)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)

    def test_too_few_points(self):
        with pytest.raises(DegenerateGeometry):
            icp(PointCloud(np.zeros((2, 3))), PointCloud(np.ones((5, 3))))

    def test_unpacks(self, rng):
        D = rng.normal(size=(20, 3))
        T, mse = icp(PointCloud(D), PointCloud(D))
        assert mse == 0.0


class TestChain:
    def test_static(self, lumpy):
        cloud = PointCloud(_scan(lumpy, 500))
        init = RigidTransform(np.eye(3), [1.0, 2.0, 3.0])
        poses = chain_poses([cloud] * 4, init=init)
        for p in poses:
            np.testing.assert_array_equal(p.t, init.t)

    def test_straight_line_over_plate(self, plate):
        cfg = ScanConfig(90, 45, elevation_range=(-90.0, -10.0))
        step = np.array([0.0, 0.0, 0.2])
        truth = [RigidTransform(np.eye(3), [0, 0, 6.0] + k * step) for k in range(6)]
        scans = [simulate_scan(plate, p, cfg) for p in truth]
        est = chain_poses(scans, init=truth[0], max_iter=200, tol=1e-14)
        for k in range(1, 6):
            assert np.linalg.norm((est[k].t - est[k - 1].t) - step) < 1e-4

    def test_strict_nonconvergence(self, lumpy):
        D = _scan(lumpy, 500)
        T = RigidTransform.from_rotvec([0, 0, 0.1], [0.5, 0, 0])
        with pytest.raises(NonConvergence):
            chain_poses([PointCloud(D), PointCloud(T.apply(D))], max_iter=1, strict=True)

    def test_needs_two(self, lumpy):
        with pytest.raises(ValueError):
            chain_poses([PointCloud(_scan(lumpy, 10))])

    def test_drift_metric(self):
        truth = [RigidTransform(np.eye(3), [k, 0, 0]) for k in range(5)]
        est = [RigidTransform(np.eye(3), [k, 0.1 * k, 0]) for k in range(5)]
        d = drift(truth, est)
        assert d["path_length"] == pytest.approx(4.0)
        assert d["terminal_error"] == pytest.approx(0.4)
        assert d["terminal_fraction"] == pytest.approx(0.1)


class TestFiles:
    def test_pose_roundtrip(self, tmp_path, rng):
        poses = [_random_transform(rng, 180, 10) for _ in range(4)]
        p = tmp_path / "poses.csv"
        write_pose_csv(p, [0.0, 2.0, 4.0, 6.0], poses)
        assert p.read_text().splitlines()[0] == "t,tx,ty,tz,qw,qx,qy,qz"
        t, back = read_pose_csv(p)
        np.testing.assert_array_equal(t, [0, 2, 4, 6])
        for a, b in zip(poses, back):
            ang, dt = a.distance(b)
            assert ang < 1e-12 and dt < 1e-12

    def test_cloud_csv(self, tmp_path):
        p = tmp_path / "c.csv"
        write_cloud_csv(p, PointCloud([[1.0, 2.0, 3.0], [0.1, 0.2, 0.3]]))
        lines = p.read_text().splitlines()
        assert lines[0] == "x,y,z" and lines[2] == "0.1,0.2,0.3"
