"""Synthetic test bodies: tetrahedron, box, icosphere, ellipsoid, lumpy asteroid."""

from __future__ import annotations

import numpy as np

from .mesh import ShapeModel


def tetrahedron(edge: float = 1.0) -> ShapeModel:
    """Regular tetrahedron centered on the origin."""
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    v *= edge / (2.0 * np.sqrt(2.0))
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return ShapeModel.from_arrays(v, f)


def box(lx: float = 1.0, ly: float = 1.0, lz: float = 1.0) -> ShapeModel:
    """Axis-aligned box centered on the origin, two triangles per face."""
    hx, hy, hz = lx / 2, ly / 2, lz / 2
    v = np.array([[-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
                  [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz]])
    f = np.array([
        [0, 2, 1], [0, 3, 2],  # -z
        [4, 5, 6], [4, 6, 7],  # +z
        [0, 1, 5], [0, 5, 4],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [1, 2, 6], [1, 6, 5],  # +x
        [0, 4, 7], [0, 7, 3],  # -x
    ])
    return ShapeModel.from_arrays(v, f)


def cube(side: float = 1.0) -> ShapeModel:
    return box(side, side, side)


def _icosahedron():
    t = (1.0 + 5 ** 0.5) / 2.0
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
                  [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
                  [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=float)
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    return v / np.linalg.norm(v, axis=1, keepdims=True), np.array(f)


def unit_icosphere(subdivisions: int):
    """Vertices on the unit sphere and faces; 20 * 4**subdivisions facets."""
    v, f = _icosahedron()
    verts = list(v)
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (i, j) if i < j else (j, i)
            k = cache.get(key)
            if k is None:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                k = cache[key] = len(verts) - 1
            return k

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        f = np.array(nf)
    return np.array(verts), f


def icosphere(radius: float = 1.0, subdivisions: int = 3) -> ShapeModel:
    v, f = unit_icosphere(subdivisions)
    return ShapeModel.from_arrays(v * radius, f)


def ellipsoid(a: float, b: float, c: float, subdivisions: int = 2) -> ShapeModel:
    """Triaxial ellipsoid with semi-axes (a, b, c), built from a scaled icosphere."""
    v, f = unit_icosphere(subdivisions)
    return ShapeModel.from_arrays(v * np.array([a, b, c]), f)


def lumpy_asteroid(a: float, b: float, c: float, subdivisions: int = 3,
                   n_bumps: int = 12, amplitude: float = 0.08, seed: int = 0,
                   roughness: float = 0.0) -> ShapeModel:
    """Ellipsoid with smooth random radial bumps and dents (star-shaped).

    Bumps are Gaussian caps on the unit sphere with angular width ~0.4 rad;
    ``amplitude`` is the peak relative radial change. ``roughness`` (m) pushes
    every vertex inward by an independent uniform draw from [0, roughness],
    giving boulder-scale texture that never rises above the smooth body.
    """
    rng = np.random.default_rng(seed)
    v, f = unit_icosphere(subdivisions)
    centers = rng.normal(size=(n_bumps, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    heights = rng.uniform(-1.0, 1.0, n_bumps) * amplitude
    widths = rng.uniform(0.25, 0.55, n_bumps)
    ang = np.arccos(np.clip(v @ centers.T, -1.0, 1.0))
    scale = 1.0 + (heights * np.exp(-0.5 * (ang / widths) ** 2)).sum(axis=1)
    verts = v * scale[:, None] * np.array([a, b, c])
    model = ShapeModel.from_arrays(verts, f, warn_offset=False)
    shift = model.center_of_mass
    if roughness > 0:
        r = np.linalg.norm(verts, axis=1)
        dent = rng.random(len(verts)) * roughness
        verts = verts * (1.0 - dent / r)[:, None]
        model = ShapeModel.from_arrays(verts, f, warn_offset=False)
    # shift by the smooth body's center so rough and smooth variants coincide
    return ShapeModel.from_arrays(model.vertices - shift, f, warn_offset=False)
