import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asterhop import shapes
from asterhop.errors import MeshError, SingularEvaluation
from asterhop.gravity import (G_DEFAULT, build_field, escape_speed, evaluate, evaluate_many,
                              is_inside, write_field_csv)
from asterhop.mesh import Containment, ShapeModel, contains

from .conftest import RHO, random_rotation

FOUR_PI_G_RHO = 4 * math.pi * G_DEFAULT * RHO


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


class TestBuild:
    def test_cube_mass(self, cube):
        f = build_field(cube, 2000.0)
        assert f.mass == pytest.approx(2000.0, rel=1e-14)
        assert f.mu == pytest.approx(G_DEFAULT * 2000.0, rel=1e-14)

    def test_face_dyads_idempotent_rank_one(self, sphere_field):
        F = sphere_field.face_dyads
        np.testing.assert_allclose(F @ F, F, atol=1e-12)
        np.testing.assert_allclose(F, np.transpose(F, (0, 2, 1)), atol=0)
        assert np.all(np.linalg.matrix_rank(F, tol=1e-9) == 1)

    def test_edge_dyads_symmetric(self, lumpy):
        E = build_field(lumpy, RHO).edge_dyads
        np.testing.assert_allclose(E, np.transpose(E, (0, 2, 1)), atol=1e-12)

    def test_sphere_mu(self, sphere, sphere_field):
        exact = G_DEFAULT * RHO * 4 / 3 * math.pi * 100.0 ** 3
        assert sphere_field.mu == pytest.approx(G_DEFAULT * RHO * sphere.volume, rel=1e-14)
        assert sphere_field.mu == pytest.approx(exact, rel=0.01)

    def test_rejects_bad_density(self, cube):
        with pytest.raises(ValueError):
            build_field(cube, 0.0)
        with pytest.raises(ValueError):
            build_field(cube, -5.0)

    def test_rejects_open_shape(self, cube):
        # bypass loader validation to model a broken caller
        broken = ShapeModel(cube.vertices, cube.faces[:-1], cube.normals[:-1], cube.areas[:-1],
                            cube.edges, cube.edge_faces, cube.volume, cube.center_of_mass,
                            cube.bounding_radius, 2, cube.bvh)
        with pytest.raises(MeshError):
            build_field(broken, RHO)


class TestEvaluate:
    def test_far_field_sphere(self, sphere_field):
        s = evaluate(sphere_field, [1000.0, 0, 0])
        mu = sphere_field.mu
        assert np.linalg.norm(s.g) == pytest.approx(mu / 1000.0 ** 2, rel=0.005)
        assert s.U == pytest.approx(mu / 1000.0, rel=0.005)

    def test_sign_convention(self, sphere_field):
        # U > 0 outside and g = +grad U points toward the body
        r = np.array([300.0, 40.0, -70.0])
        s = evaluate(sphere_field, r)
        assert s.U > 0
        assert s.g @ r < 0
        np.testing.assert_allclose(unit(s.g), -unit(r), atol=5e-3)

    def test_cube_center(self, cube):
        f = build_field(cube, RHO)
        s = evaluate(f, [0.0, 0.0, 0.0])
        assert np.linalg.norm(s.g) < 1e-20
        assert s.laplacian == pytest.approx(-FOUR_PI_G_RHO, rel=1e-6)

    def test_exterior_laplacian_zero(self, lumpy):
        f = build_field(lumpy, RHO)
        for r in ([400.0, 10, 0], [0, 300, 100], [-200, -150, 150]):
            assert abs(evaluate(f, r).laplacian) < 1e-6 * FOUR_PI_G_RHO

    def test_hessian_symmetric_and_trace(self, lumpy, rng):
        f = build_field(lumpy, RHO)
        P = rng.uniform(-320, 320, size=(40, 3))
        out = evaluate_many(f, P, hessian=True)
        H = out["grad_g"]
        scale = np.abs(H).max(axis=(1, 2))[:, None, None]
        assert np.all(np.abs(H - np.transpose(H, (0, 2, 1))) <= 1e-10 * scale)
        tr = np.trace(H, axis1=1, axis2=2)
        # inside, trace equals -4 pi G rho; outside, 0
        np.testing.assert_allclose(tr, out["laplacian"], atol=1e-8 * FOUR_PI_G_RHO)

    def test_far_field_decay(self, ellipsoid):
        f = build_field(ellipsoid, RHO)
        d = unit([0.3, -0.5, 0.8]) * ellipsoid.bounding_radius
        for k, tol in ((5, 0.01), (10, 0.003), (20, 0.001)):
            g = np.linalg.norm(evaluate(f, k * d).g)
            assert g * k ** 2 == pytest.approx(f.mu / (d @ d), rel=tol)

    def test_rotational_equivariance(self, lumpy, rng):
        f = build_field(lumpy, RHO)
        R = random_rotation(rng)
        rot = ShapeModel.from_arrays(lumpy.vertices @ R.T, lumpy.faces)
        fr = build_field(rot, RHO)
        for _ in range(5):
            r = rng.normal(size=3) * 350
            a = evaluate(f, r)
            b = evaluate(fr, R @ r)
            assert b.U == pytest.approx(a.U, rel=1e-10)
            np.testing.assert_allclose(b.g, R @ a.g, rtol=0, atol=1e-10 * np.linalg.norm(a.g))

    def test_vertex_is_singular(self, cube):
        f = build_field(cube, RHO)
        with pytest.raises(SingularEvaluation):
            evaluate(f, cube.vertices[0])
        with pytest.raises(SingularEvaluation, match="row 1"):
            evaluate_many(f, [[3.0, 0, 0], cube.vertices[3]])

    def test_face_interior_is_legal(self, cube):
        f = build_field(cube, RHO)
        s = evaluate(f, [0.5, 0.1, 0.2])
        assert np.all(np.isfinite(s.g)) and math.isfinite(s.U)

    def test_batch_matches_single(self, sphere_field, rng):
        P = rng.uniform(-300, 300, size=(10, 3))
        out = evaluate_many(sphere_field, P, hessian=True)
        for k, p in enumerate(P):
            s = evaluate(sphere_field, p)
            assert out["U"][k] == s.U
            np.testing.assert_array_equal(out["g"][k], s.g)
            np.testing.assert_array_equal(out["grad_g"][k], s.grad_g)

    def test_is_inside(self, sphere_field):
        assert is_inside(sphere_field, [10.0, 0, 0])
        assert not is_inside(sphere_field, [150.0, 0, 0])

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.5, 4.0), st.lists(st.floats(-1, 1), min_size=3, max_size=3))
    def test_potential_linear_in_density(self, factor, d):
        f1 = _field()
        f2 = f1.with_density(f1.density * factor)
        d = np.array(d) + np.array([1e-3, 0, 0])
        r = 3.0 * d / max(np.linalg.norm(d), 1e-6) + np.array([0.01, 0.02, 0.03])
        a, b = evaluate(f1, r), evaluate(f2, r)
        assert b.U == pytest.approx(factor * a.U, rel=1e-12)
        np.testing.assert_allclose(b.g, factor * a.g, rtol=1e-12, atol=1e-30)


_fields = {}


def _field():
    if "f" not in _fields:
        _fields["f"] = build_field(shapes.lumpy_asteroid(1.0, 0.8, 0.6, 2, seed=9), RHO)
    return _fields["f"]


class TestEscapeSpeed:
    def test_sphere_surface(self, sphere, sphere_field):
        p = sphere.centroids[100]
        ve = escape_speed(sphere_field, p)
        assert ve == pytest.approx(math.sqrt(2 * sphere_field.mu / np.linalg.norm(p)), rel=0.01)

    def test_monotone_decreasing(self, sphere_field):
        radii = [120, 200, 400, 800, 1600, 3200]
        v = [escape_speed(sphere_field, [r, 0, 0]) for r in radii]
        assert all(a > b for a, b in zip(v, v[1:]))
        assert v[-1] < 0.2 * v[0]

    def test_density_scaling(self, sphere_field):
        r = [150.0, 20.0, 0.0]
        v1 = escape_speed(sphere_field, r)
        v2 = escape_speed(sphere_field.with_density(2 * sphere_field.density), r)
        assert v2 == pytest.approx(math.sqrt(2) * v1, rel=1e-12)


class TestLaplacianClassification:
    def test_agrees_with_containment(self, lumpy, rng):
        f = build_field(lumpy, RHO)
        lo, hi = lumpy.vertices.min(0), lumpy.vertices.max(0)
        P = rng.uniform(lo, hi, size=(200, 3))
        lap = evaluate_many(f, P)["laplacian"]
        for p, l in zip(P, lap):
            c = contains(lumpy, p)
            if c is Containment.ON_SURFACE:
                continue
            expected = -FOUR_PI_G_RHO if c is Containment.INSIDE else 0.0
            assert abs(l - expected) < 1e-6 * FOUR_PI_G_RHO


def test_field_csv(tmp_path, sphere_field):
    P = np.array([[200.0, 0, 0], [0, 0, 300.0]])
    out = evaluate_many(sphere_field, P)
    path = tmp_path / "f.csv"
    write_field_csv(path, P, out)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,z,U,gx,gy,gz,laplacian"
    row = [float(x) for x in lines[1].split(",")]
    assert row[3] == out["U"][0]  # round-trip precision
    assert row[4:7] == list(out["g"][0])
