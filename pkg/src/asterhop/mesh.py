"""Closed triangular shape models and surface queries.

A :class:`ShapeModel` is the world every other module queries: the gravity
model reads its edge/face topology, the planners sample and project onto its
surface, and the scan simulator casts rays against it.
"""

from __future__ import annotations

import enum
import functools
import io
import logging
import math
import os
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Optional, TextIO, Union

import numpy as np

from . import _kernels as K
from .errors import MeshError

log = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12  # m^2
LEAF_SIZE = 4


class Containment(enum.Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"
    ON_SURFACE = "on_surface"


@dataclass(frozen=True)
class SurfacePoint:
    """A point on the mesh: position, owning facet, barycentric weights."""

    position: np.ndarray
    facet: int
    barycentric: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "barycentric", np.asarray(self.barycentric, dtype=float))


@dataclass(frozen=True)
class _BVH:
    bmin: np.ndarray
    bmax: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray

    def arrays(self):
        return (self.bmin, self.bmax, self.left, self.right, self.start, self.count,
                self.order)


def _build_bvh(tri: np.ndarray) -> _BVH:
    """Median-split BVH over triangle centroids (tri has shape (F, 3, 3))."""
    cent = tri.mean(axis=1)
    lo_t = tri.min(axis=1)
    hi_t = tri.max(axis=1)
    order = np.arange(len(tri))
    bmin, bmax, left, right, start, count = [], [], [], [], [], []

    def new_node(lo, hi, s, c):
        bmin.append(lo)
        bmax.append(hi)
        left.append(-1)
        right.append(-1)
        start.append(s)
        count.append(c)
        return len(bmin) - 1

    # iterative to avoid recursion limits on big meshes
    root = new_node(lo_t.min(axis=0), hi_t.max(axis=0), 0, len(tri))
    todo = [root]
    while todo:
        node = todo.pop()
        s, c = start[node], count[node]
        if c <= LEAF_SIZE:
            continue
        idx = order[s:s + c]
        ext = cent[idx].max(axis=0) - cent[idx].min(axis=0)
        axis = int(np.argmax(ext))
        srt = idx[np.argsort(cent[idx, axis], kind="stable")]
        order[s:s + c] = srt
        half = c // 2
        a_idx, b_idx = srt[:half], srt[half:]
        la = new_node(lo_t[a_idx].min(axis=0), hi_t[a_idx].max(axis=0), s, half)
        lb = new_node(lo_t[b_idx].min(axis=0), hi_t[b_idx].max(axis=0), s + half, c - half)
        left[node], right[node] = la, lb
        todo.extend([la, lb])

    return _BVH(np.array(bmin, dtype=float), np.array(bmax, dtype=float),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(start, dtype=np.int64), np.array(count, dtype=np.int64),
                order.astype(np.int64))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ShapeModel:
    """Validated watertight triangle mesh in the body-fixed frame (meters).

    Attributes
    ----------
    vertices, faces : arrays of shape (V, 3) and (F, 3)
    normals : outward unit facet normals, (F, 3)
    areas : facet areas, (F,)
    edges : canonical (min, max) vertex pairs, (E, 2)
    edge_faces : adjacent facets per edge, (E, 2); the facet whose winding
        runs min -> max comes first
    volume, center_of_mass, bounding_radius, euler_characteristic
    """

    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray
    areas: np.ndarray
    edges: np.ndarray
    edge_faces: np.ndarray
    volume: float
    center_of_mass: np.ndarray
    bounding_radius: float
    euler_characteristic: int
    bvh: _BVH = field(repr=False)

    @classmethod
    def from_arrays(cls, vertices, faces, *, warn_offset: bool = True) -> "ShapeModel":
        """Validate raw arrays and precompute topology. Raises MeshError."""
        V = np.asarray(vertices, dtype=float)
        F = np.asarray(faces)
        if V.ndim != 2 or V.shape[1] != 3 or len(V) == 0:
            raise MeshError("vertices must be a non-empty (V, 3) array")
        if F.ndim != 2 or F.shape[1] != 3 or len(F) == 0:
            raise MeshError("faces must be a non-empty (F, 3) array of triangles")
        if not np.all(np.isfinite(V)):
            raise MeshError("non-finite vertex coordinate")
        F = F.astype(np.int64)
        if F.min() < 0 or F.max() >= len(V):
            raise MeshError("face references a vertex index out of range")

        tri = V[F]
        cr = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        dbl = np.linalg.norm(cr, axis=1)
        areas = 0.5 * dbl
        bad = np.flatnonzero(areas < DEGENERATE_AREA)
        if bad.size:
            raise MeshError(f"degenerate facet {int(bad[0])} (area {areas[bad[0]]:.3g} m^2)")
        normals = cr / dbl[:, None]

        # directed half-edges: each must appear exactly once, its twin exactly once
        nf = len(F)
        a = F.reshape(-1)
        b = F[:, [1, 2, 0]].reshape(-1)
        owner = np.repeat(np.arange(nf), 3)
        directed = a * len(V) + b
        uniq, counts = np.unique(directed, return_counts=True)
        if np.any(counts > 1):
            d = int(uniq[np.argmax(counts > 1)])
            raise MeshError(f"inconsistent winding: edge ({d // len(V)}, {d % len(V)}) "
                            "traversed twice in the same direction")
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        key = lo * len(V) + hi
        srt = np.lexsort((a > b, key))  # min->max traversal first within each edge
        key_s = key[srt]
        ukey, first, ecount = np.unique(key_s, return_index=True, return_counts=True)
        if np.any(ecount != 2):
            k = int(ukey[np.argmax(ecount != 2)])
            raise MeshError(f"open mesh: edge ({k // len(V)}, {k % len(V)}) has "
                            f"{int(ecount[np.argmax(ecount != 2)])} adjacent facets")
        pair = srt[first[:, None] + np.arange(2)]
        fwd, bwd = pair[:, 0], pair[:, 1]
        if np.any(a[fwd] > b[fwd]) or np.any(a[bwd] < b[bwd]):
            raise MeshError("inconsistent winding between adjacent facets")
        edges = np.stack([lo[fwd], hi[fwd]], axis=1)
        edge_faces = np.stack([owner[fwd], owner[bwd]], axis=1)

        # divergence theorem: sum of signed tetrahedra against the origin
        six_vol = np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2]))
        volume = float(six_vol.sum() / 6.0)
        if not volume > 0.0:
            raise MeshError("facets are wound inward (signed volume is not positive)")
        com = (six_vol[:, None] * tri.sum(axis=1)).sum(axis=0) / (24.0 * volume)

        radius = float(np.linalg.norm(V, axis=1).max())
        used = np.unique(F)
        euler = len(used) - len(edges) + nf
        if euler != 2:
            log.warning("mesh Euler characteristic is %d (genus %g)", euler, (2 - euler) / 2)
        if warn_offset and np.linalg.norm(com) > 0.01 * radius:
            log.warning("center of mass offset %.4g m exceeds 1%% of bounding radius; "
                        "consider recentering", np.linalg.norm(com))

        return cls(_frozen(V), _frozen(F), _frozen(normals), _frozen(areas),
                   _frozen(edges), _frozen(edge_faces), volume, _frozen(com), radius,
                   int(euler), _build_bvh(tri))

    # -- convenience ------------------------------------------------------------

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def surface_area(self) -> float:
        return float(self.areas.sum())

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)

    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    @functools.cached_property
    def area_cdf(self) -> np.ndarray:
        """Normalized cumulative facet areas (for area-uniform sampling)."""
        cdf = np.cumsum(self.areas)
        return _frozen(cdf / cdf[-1])

    def recentered(self) -> "ShapeModel":
        """Copy translated so the center of mass sits at the origin."""
        return ShapeModel.from_arrays(self.vertices - self.center_of_mass, self.faces,
                                      warn_offset=False)

    def scaled(self, factor: float) -> "ShapeModel":
        return ShapeModel.from_arrays(self.vertices * factor, self.faces)

    def surface_point(self, position, facet: int) -> SurfacePoint:
        """Wrap a point known to lie on ``facet`` with its barycentric weights."""
        p = np.asarray(position, dtype=float)
        return SurfacePoint(p, int(facet), _barycentric(self.vertices[self.faces[facet]], p))


def _barycentric(tri: np.ndarray, p: np.ndarray) -> np.ndarray:
    a, b, c = tri
    v0, v1, v2 = b - a, c - a, p - a
    d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
    d20, d21 = v2 @ v0, v2 @ v1
    den = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    bc = np.clip(np.array([1.0 - v - w, v, w]), 0.0, 1.0)
    return bc / bc.sum()


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def parse_obj(text: Iterable[str]):
    """Parse ``v``/``f`` records; returns (vertices, faces, n_ignored)."""
    verts, faces = [], []
    ignored = 0
    for lineno, raw in enumerate(text, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise MeshError(f"line {lineno}: vertex needs 3 coordinates")
            try:
                verts.append([float(x) for x in parts[1:4]])
            except ValueError as exc:
                raise MeshError(f"line {lineno}: malformed vertex record") from exc
        elif tag == "f":
            if len(parts) != 4:
                raise MeshError(f"line {lineno}: non-triangular face "
                                f"({len(parts) - 1} vertices)")
            idx = []
            for tok in parts[1:]:
                try:
                    k = int(tok.split("/")[0])
                except ValueError as exc:
                    raise MeshError(f"line {lineno}: malformed face record") from exc
                if k == 0:
                    raise MeshError(f"line {lineno}: OBJ indices are 1-based")
                idx.append(k - 1 if k > 0 else len(verts) + k)
            faces.append(idx)
        else:
            ignored += 1
    if not verts or not faces:
        raise MeshError("OBJ contains no vertex or no face records")
    return np.array(verts, dtype=float), np.array(faces, dtype=np.int64), ignored


def load_shape(source: Union[str, os.PathLike, BinaryIO, TextIO], format: str = "OBJ",
               scale: float = 1.0, recenter: bool = False) -> ShapeModel:
    """Load a closed triangle mesh from a path or stream.

    ``scale`` multiplies every coordinate (1000 converts km models to meters).
    """
    if format.upper() != "OBJ":
        raise MeshError(f"unsupported shape format {format!r}")
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    else:
        data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    V, F, ignored = parse_obj(io.StringIO(data))
    if ignored:
        log.warning("ignored %d unsupported OBJ records", ignored)
    model = ShapeModel.from_arrays(V * float(scale), F, warn_offset=not recenter)
    return model.recentered() if recenter else model


def write_obj(model: ShapeModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in model.vertices:
            fh.write("v " + " ".join(repr(float(x)) for x in v) + "\n")
        for f in model.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------

def project_to_surface(model: ShapeModel, point) -> SurfacePoint:
    """Closest point on the mesh (ties go to the lowest facet id)."""
    p = np.asarray(point, dtype=float)
    q, f, _ = K.bvh_closest(p, model.vertices, model.faces, *model.bvh.arrays())
    return model.surface_point(q, int(f))


def distance_to_surface(model: ShapeModel, point) -> float:
    p = np.asarray(point, dtype=float)
    return float(K.bvh_closest(p, model.vertices, model.faces, *model.bvh.arrays())[2])


def closest_points(model: ShapeModel, points):
    """Vectorized closest-point query: returns (points, facet ids, distances)."""
    P = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    return K.bvh_closest_batch(P, model.vertices, model.faces, *model.bvh.arrays())


def winding_number(model: ShapeModel, point) -> float:
    """Summed signed solid angle over 4*pi: 1 inside, 0 outside."""
    p = np.asarray(point, dtype=float)
    return K.solid_angle_sum(p, model.vertices, model.faces) / (4.0 * math.pi)


def contains(model: ShapeModel, point, tol: Optional[float] = None) -> Containment:
    """Classify a point against the closed surface."""
    p = np.asarray(point, dtype=float)
    if tol is None:
        tol = 1e-6 * model.bounding_radius
    if distance_to_surface(model, p) < tol:
        return Containment.ON_SURFACE
    return Containment.INSIDE if winding_number(model, p) > 0.5 else Containment.OUTSIDE


def ray_intersect(model: ShapeModel, origin, direction):
    """Nearest hit along a ray: ``(distance, facet)`` or ``None``."""
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    t, f = K.bvh_ray(o, d, model.vertices, model.faces, *model.bvh.arrays())
    if f < 0:
        return None
    return float(t), int(f)


def ray_intersect_many(model: ShapeModel, origins, directions):
    """Batch rays; misses come back as ``inf`` distance and facet -1."""
    D = np.ascontiguousarray(np.atleast_2d(np.asarray(directions, dtype=float)))
    O = np.ascontiguousarray(np.broadcast_to(np.asarray(origins, dtype=float), D.shape))
    return K.bvh_ray_batch(O, D, model.vertices, model.faces, *model.bvh.arrays())


def sample_surface(model: ShapeModel, rng: np.random.Generator, size: Optional[int] = None):
    """Area-uniform random surface point(s).

    With ``size=None`` a single :class:`SurfacePoint` is returned; otherwise a
    tuple ``(positions, facets, barycentric)`` of arrays.
    """
    n = 1 if size is None else int(size)
    cdf = model.area_cdf
    fid = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(cdf) - 1)
    u = rng.random((n, 2))
    flip = u.sum(axis=1) > 1.0
    u[flip] = 1.0 - u[flip]
    bc = np.column_stack([1.0 - u[:, 0] - u[:, 1], u[:, 0], u[:, 1]])
    tri = model.vertices[model.faces[fid]]
    pos = np.einsum("ni,nij->nj", bc, tri)
    if size is None:
        return SurfacePoint(pos[0], int(fid[0]), bc[0])
    return pos, fid, bc


def launch_point(model: ShapeModel, sp: SurfacePoint, offset: float = 1e-3) -> np.ndarray:
    """Surface point nudged along its facet's outward normal (default 1 mm)."""
    return sp.position + offset * model.normals[sp.facet]
