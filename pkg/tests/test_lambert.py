import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asterhop import lambert
from asterhop.dynamics import Environment, RoverState, end_state, propagate
from asterhop.errors import SingularSTM
from asterhop.lambert import (LambertDegenerate, ShootingConfig, solve_hop, stm_columns,
                              two_body_guess)
from asterhop.mesh import launch_point, project_to_surface

from .oracles import point_mass_rk4


FAST = ShootingConfig(stm="variational", steps=200, max_dt=None)


def _hop_period(env, R=100.0):
    return 2 * math.pi * math.sqrt(R ** 3 / env.mu)


class TestTwoBodyGuess:
    def test_quarter_circle(self):
        mu, R = 3.5, 250.0
        T = 2 * math.pi * math.sqrt(R ** 3 / mu)
        v = two_body_guess(mu, [R, 0, 0], [0, R, 0], T / 4)
        assert np.linalg.norm(v) == pytest.approx(math.sqrt(mu / R), rel=1e-9)
        np.testing.assert_allclose(v / np.linalg.norm(v), [0, 1, 0], atol=1e-9)

    def test_zero_mu_is_straight_line(self):
        r0, rf = np.array([1.0, 2, 3]), np.array([-4.0, 5, 0.5])
        np.testing.assert_array_equal(two_body_guess(0.0, r0, rf, 7.0), (rf - r0) / 7.0)

    def test_small_mu_limit(self):
        r0, rf = np.array([100.0, 0, 0]), np.array([0, 120.0, 10])
        straight = (rf - r0) / 100.0
        errs = [np.abs(two_body_guess(mu, r0, rf, 100.0) - straight).max()
                for mu in (1e-2, 1e-4, 1e-6, 1e-8, 1e-12)]
        assert errs[0] > errs[1] > errs[2]
        assert max(errs[2:]) < 1e-7

    def test_degenerate_warns(self):
        r0, rf = np.array([100.0, 0, 0]), np.array([-100.0, 0, 0])
        with pytest.warns(LambertDegenerate):
            v = two_body_guess(1.0, r0, rf, 50.0)
        np.testing.assert_array_equal(v, (rf - r0) / 50.0)

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            two_body_guess(1.0, [1, 0, 0], [0, 1, 0], 0.0)

    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.2, 2.8), st.floats(-0.5, 0.5), st.floats(0.8, 1.5), st.floats(0.1, 0.9))
    def test_propagated_guess_hits_target(self, ang, incl, r2_scale, frac):
        mu, R = 0.5, 150.0
        r0 = np.array([R, 0.0, 0.0])
        rf = r2_scale * R * np.array([math.cos(ang) * math.cos(incl),
                                      math.sin(ang) * math.cos(incl), math.sin(incl)])
        tau = frac * 2 * math.pi * math.sqrt(R ** 3 / mu)
        v = two_body_guess(mu, r0, rf, tau)
        end, _ = point_mass_rk4(mu, r0, v, tau, 4000)
        assert np.linalg.norm(end - rf) < 1e-6


class TestSTM:
    def test_free_space_identity(self, sphere_field):
        env = Environment(sphere_field, gravity=False)
        Phi = stm_columns(env, [300.0, 0, 0], [0.1, 0.2, 0.0], 500.0, fd_step=1e-3)
        np.testing.assert_allclose(Phi, 500.0 * np.eye(3), rtol=1e-12, atol=1e-6)

    def test_weak_field_near_identity(self, sphere_field):
        env = Environment(sphere_field)
        tau = 100.0
        Phi = stm_columns(env, [2000.0, 0, 0], [0.0, 0.01, 0.0], tau)
        # gravity gradient ~ mu / r^3 gives a relative tau^2 correction
        bound = 10 * env.mu / 2000.0 ** 3 * tau ** 2
        assert np.abs(Phi / tau - np.eye(3)).max() < bound

    def test_central_matches_forward_and_variational(self, sphere_env, sphere):
        r0 = launch_point(sphere, project_to_surface(sphere, [100.0, 10, 5]))
        v0 = 0.03 * r0 / np.linalg.norm(r0) + np.array([0.0, 0.03, 0.01])
        tau, n = 1500.0, 600
        c = stm_columns(sphere_env, r0, v0, tau, n_steps=n)
        f = stm_columns(sphere_env, r0, v0, tau, n_steps=n, scheme="forward")
        assert np.abs(c - f).max() < 1e-4 * np.abs(c).max()
        var = end_state(sphere_env, r0, v0, tau, n, with_stm=True)[2]
        assert np.abs(c - var).max() < 1e-5 * np.abs(c).max()

    def test_unknown_scheme(self, sphere_env):
        with pytest.raises(ValueError):
            stm_columns(sphere_env, [200.0, 0, 0], [0, 0.01, 0], 10.0, scheme="sideways")


def _pair(sphere, rng):
    while True:
        a = project_to_surface(sphere, rng.normal(size=3))
        b = project_to_surface(sphere, rng.normal(size=3))
        ang = math.degrees(math.acos(np.clip(a.position @ b.position / 1e4, -1, 1)))
        if 5 < ang < 60:
            return a, b


class TestSolveHop:
    def test_zero_gravity_one_iteration(self, sphere_field, sphere):
        env = Environment(sphere_field, gravity=False)
        a = project_to_surface(sphere, [100.0, 13.0, 7.0])
        b = project_to_surface(sphere, [21.0, 100.0, -9.0])
        res = solve_hop(env, a, b, 1000.0)
        assert res.converged and res.iterations == 1
        aim = launch_point(sphere, b, 1e-2 * ShootingConfig().tol)
        np.testing.assert_allclose(res.v0, (aim - res.launch) / 1000.0, rtol=1e-12)

    def test_matches_two_body_on_sphere(self, sphere_env, sphere):
        rng = np.random.default_rng(7)
        T = _hop_period(sphere_env)
        for _ in range(2):
            a, b = _pair(sphere, rng)
            res = solve_hop(sphere_env, a, b, 0.5 * T, FAST)
            assert res.converged
            ref = two_body_guess(sphere_env.mu, res.launch, b.position, 0.5 * T)
            assert np.linalg.norm(res.v0 - ref) < 5e-3 * np.linalg.norm(ref)

    @pytest.mark.parametrize("stm", ["central", "variational"])
    def test_certificate(self, sphere_field, sphere, stm):
        env = Environment(sphere_field, [0, 0, 2 * math.pi / 43680])
        a, b = _pair(sphere, np.random.default_rng(1))
        cfg = ShootingConfig(stm=stm, steps=150, max_dt=None)
        tau = 0.7 * _hop_period(env)
        res = solve_hop(env, a, b, tau, cfg)
        assert res.converged and res.final_error <= cfg.tol
        assert min(res.errors) <= cfg.tol
        fresh = propagate(env, RoverState(res.launch, res.v0), tau, stop_on_impact=False,
                          dt=tau / cfg.n_steps(tau))
        assert np.linalg.norm(fresh.positions[-1] - b.position) <= cfg.tol
        assert res.trajectory.theta_launch is not None

    def test_deterministic(self, sphere_env, sphere):
        a, b = _pair(sphere, np.random.default_rng(2))
        r1 = solve_hop(sphere_env, a, b, 3000.0, FAST)
        r2 = solve_hop(sphere_env, a, b, 3000.0, FAST)
        np.testing.assert_array_equal(r1.v0, r2.v0)
        assert r1.errors == r2.errors

    def test_error_decay(self, sphere_env, sphere):
        a, b = _pair(sphere, np.random.default_rng(4))
        res = solve_hop(sphere_env, a, b, 3000.0,
                        ShootingConfig(tol=1e-9, max_iter=6, stm="variational", steps=200,
                                       max_dt=None),
                        v_guess=np.zeros(3) + 0.01)
        e = np.array(res.errors)
        assert np.all(np.diff(e[:4]) < 0)

    def test_unconverged_returns_best(self, sphere_env, sphere):
        a, b = _pair(sphere, np.random.default_rng(5))
        res = solve_hop(sphere_env, a, b, 3000.0, ShootingConfig(tol=1e-12, max_iter=2, steps=200,
                                                                  max_dt=None))
        assert not res.converged
        assert min(res.errors) > 0.99e-12
        assert res.final_error == pytest.approx(min(res.errors), abs=2e-14)

    def test_singular_stm(self, sphere_env, sphere, monkeypatch):
        monkeypatch.setattr(lambert, "stm_columns", lambda *a, **k: np.diag([1.0, 1.0, 1e-13]))
        a, b = _pair(sphere, np.random.default_rng(6))
        with pytest.raises(SingularSTM):
            solve_hop(sphere_env, a, b, 3000.0)

    def test_target_on_vertex(self, sphere_env, sphere):
        # landing exactly on a mesh vertex: aiming just above it keeps the arc regular
        a = project_to_surface(sphere, sphere.vertices[5] + [3.0, 2.0, 1.0])
        b = project_to_surface(sphere, sphere.vertices[17] * 1.2)
        np.testing.assert_array_equal(b.position, sphere.vertices[17])
        res = solve_hop(sphere_env, a, b, 3000.0, FAST)
        assert res.converged and res.final_error <= 1e-3
        assert res.final_error == pytest.approx(
            np.linalg.norm(res.trajectory.positions[-1] - b.position))

    def test_coincident_rejected(self, sphere_env):
        with pytest.raises(ValueError):
            solve_hop(sphere_env, [200.0, 0, 0], [200.0, 0, 0], 100.0)

    def test_config_validation(self):
        for bad in (dict(tol=0), dict(max_iter=0), dict(damping=0), dict(damping=1.5),
                    dict(stm="magic")):
            with pytest.raises(ValueError):
                ShootingConfig(**bad)
