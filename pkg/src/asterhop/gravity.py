"""Constant-density polyhedron gravity (Werner-Scheeres edge/face sums).

Sign convention: the potential ``U`` is positive outside the body and the
acceleration is ``g = +grad U``, so ``g`` points toward the body. Far from the
body ``U -> mu/r`` and ``|g| -> mu/r**2``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import MeshError, SingularEvaluation
from .mesh import ShapeModel

G_DEFAULT = 6.67430e-11  # m^3 kg^-1 s^-2
SINGULAR_GUARD = 1e-9  # fraction of bounding radius


@dataclass(frozen=True)
class FieldSample:
    U: float
    g: np.ndarray
    grad_g: np.ndarray
    laplacian: float


@dataclass(frozen=True, eq=False)
class GravityField:
    """Gravity of a constant-density shape, with per-edge/face dyads precomputed."""

    shape: ShapeModel
    density: float
    G: float
    edge_dyads: np.ndarray = field(repr=False)
    edge_lengths: np.ndarray = field(repr=False)

    @property
    def mass(self) -> float:
        return self.density * self.shape.volume

    @property
    def mu(self) -> float:
        return self.G * self.mass

    @property
    def G_rho(self) -> float:
        return self.G * self.density

    @property
    def guard(self) -> float:
        return SINGULAR_GUARD * self.shape.bounding_radius

    @property
    def face_dyads(self) -> np.ndarray:
        """F_f = n_f n_f^T for each facet (the kernel uses the normals directly)."""
        n = self.shape.normals
        return np.einsum("fi,fj->fij", n, n)

    def kernel_args(self):
        s = self.shape
        return (s.vertices, s.faces, s.normals, s.edges, self.edge_lengths,
                self.edge_dyads, self.G_rho, self.guard)

    def with_density(self, density: float) -> "GravityField":
        return build_field(self.shape, density, self.G)


def _edge_dyads(shape: ShapeModel) -> np.ndarray:
    """E_e = n_A (t_e x n_A)^T + n_B (t_e' x n_B)^T for each edge.

    ``t_e`` is the edge direction as traversed by the owning facet, so
    ``t_e x n`` is the in-plane edge normal pointing out of that facet.
    """
    V, N = shape.vertices, shape.normals
    i, j = shape.edges[:, 0], shape.edges[:, 1]
    fa, fb = shape.edge_faces[:, 0], shape.edge_faces[:, 1]
    t = V[j] - V[i]
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    na, nb = N[fa], N[fb]
    # facet A runs i -> j, facet B runs j -> i
    ea = np.cross(t, na)
    eb = np.cross(-t, nb)
    return np.einsum("ei,ej->eij", na, ea) + np.einsum("ei,ej->eij", nb, eb)


def build_field(shape: ShapeModel, density: float, G: float = G_DEFAULT) -> GravityField:
    if not density > 0.0:
        raise ValueError("density must be positive")
    if not G > 0.0:
        raise ValueError("gravitational constant must be positive")
    if len(shape.edges) * 2 != 3 * shape.n_faces:
        raise MeshError("gravity field needs a watertight shape")
    V = shape.vertices
    lengths = np.linalg.norm(V[shape.edges[:, 1]] - V[shape.edges[:, 0]], axis=1)
    dyads = np.ascontiguousarray(_edge_dyads(shape))
    lengths = np.ascontiguousarray(lengths)
    dyads.setflags(write=False)
    lengths.setflags(write=False)
    return GravityField(shape, float(density), float(G), dyads, lengths)


def evaluate(field: GravityField, r) -> FieldSample:
    """Potential, acceleration, gradient matrix and Laplacian at ``r``."""
    p = np.asarray(r, dtype=float)
    U, g, H, lap, bad = K.field_batch(p.reshape(1, 3), *field.kernel_args(), True)
    if bad[0]:
        raise SingularEvaluation(f"field point {p.tolist()} lies on a mesh edge or vertex")
    return FieldSample(float(U[0]), g[0], H[0], float(lap[0]))


def evaluate_many(field: GravityField, points, hessian: bool = False):
    """Batch evaluation. Returns dict of arrays U, g, grad_g (if asked), laplacian.

    Raises SingularEvaluation naming the first offending point.
    """
    P = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    U, g, H, lap, bad = K.field_batch(P, *field.kernel_args(), hessian)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise SingularEvaluation(f"field point {P[k].tolist()} (row {k}) lies on a mesh "
                                 "edge or vertex")
    out = {"U": U, "g": g, "laplacian": lap}
    if hessian:
        out["grad_g"] = H
    return out


def acceleration(field: GravityField, r) -> np.ndarray:
    return evaluate(field, r).g


def is_inside(field: GravityField, r) -> bool:
    """Laplacian branch test: -4 pi G rho inside, 0 outside."""
    return evaluate(field, r).laplacian < -2.0 * math.pi * field.G_rho


def escape_speed(field: GravityField, r, omega=None) -> float:
    """sqrt(2 U(r)) from the non-rotating potential.

    ``omega`` is accepted for interface stability; the centrifugal term is not
    included in this definition.
    """
    U = evaluate(field, r).U
    return math.sqrt(max(2.0 * U, 0.0))


def write_field_csv(path, points, samples: dict) -> None:
    """Rows ``x,y,z,U,gx,gy,gz,laplacian`` at full round-trip precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "z", "U", "gx", "gy", "gz", "laplacian"])
        for p, U, g, lap in zip(points, samples["U"], samples["g"], samples["laplacian"]):
            w.writerow([repr(float(v)) for v in (*p, U, *g, lap)])
