"""LiDAR-style scan synthesis and scan-to-scan ICP odometry.

Poses map sensor-frame coordinates into the body-fixed frame:
``x_body = R @ x_sensor + t``. Consecutive scans are registered with
point-to-point ICP and the incremental transforms are chained.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .errors import DegenerateGeometry, NonConvergence
from .mesh import Containment, ShapeModel, contains, ray_intersect_many

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# rigid transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RigidTransform:
    """x -> R x + t with R a proper rotation."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        if not (np.allclose(R.T @ R, np.eye(3), atol=1e-9) and abs(np.linalg.det(R) - 1) < 1e-9):
            raise ValueError("R is not a proper rotation matrix")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_quaternion(cls, q, t=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """From a scalar-first unit quaternion ``(qw, qx, qy, qz)``."""
        qw, qx, qy, qz = q
        return cls(Rotation.from_quat([qx, qy, qz, qw]).as_matrix(), t)

    @classmethod
    def from_rotvec(cls, rotvec, t=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), t)

    def quaternion(self) -> np.ndarray:
        """Scalar-first unit quaternion with ``qw >= 0``."""
        x, y, z, w = Rotation.from_matrix(self.R).as_quat()
        q = np.array([w, x, y, z])
        return -q if q[0] < 0 else q

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.R.T + self.t

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self o other``: apply ``other`` first."""
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.R.T, -self.R.T @ self.t)

    @property
    def angle(self) -> float:
        """Rotation angle in radians."""
        return float(np.linalg.norm(Rotation.from_matrix(self.R).as_rotvec()))

    def distance(self, other: "RigidTransform"):
        """(rotation angle between, translation gap)."""
        d = self.inverse().compose(other)
        return d.angle, float(np.linalg.norm(self.t - other.t))


def _project_rotation(R: np.ndarray) -> np.ndarray:
    """Nearest proper rotation (re-orthonormalizes drift from composition)."""
    U, _, Vt = np.linalg.svd(R)
    S = np.eye(3)
    S[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    return U @ S @ Vt


# ---------------------------------------------------------------------------
# scans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanConfig:
    """Sensor model: an azimuth x elevation ray grid (full sphere by default).

    Elevation is measured from the sensor x-y plane; ``elevation_range``
    restricts the grid to a band, e.g. ``(-90, -50)`` for a downward cone.

    ``jitter`` places each ray uniformly at random inside its grid cell
    (stratified sampling), so successive scans do not sample the ground with
    the same sensor-fixed pattern. A fixed pattern moves with the sensor and
    makes sliding over smooth terrain nearly invisible to point-to-point ICP.
    """

    n_azimuth: int = 180
    n_elevation: int = 90
    max_range: float = 500.0
    noise: float = 0.0
    frequency: float = 0.5
    jitter: bool = False
    elevation_range: Tuple[float, float] = (-90.0, 90.0)  # degrees

    def __post_init__(self):
        if self.n_azimuth < 2 or self.n_elevation < 2:
            raise ValueError("angular grid counts must be >= 2")
        if not self.frequency > 0:
            raise ValueError("scan frequency must be positive")
        if not self.max_range > 0:
            raise ValueError("max range must be positive")
        if self.noise < 0:
            raise ValueError("range noise must be non-negative")
        lo, hi = self.elevation_range
        if not -90.0 <= lo < hi <= 90.0:
            raise ValueError("elevation range must satisfy -90 <= lo < hi <= 90 degrees")

    @property
    def period(self) -> float:
        return 1.0 / self.frequency

    def directions(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Unit ray directions, sensor frame, one per grid cell.

        Cell centers by default; uniformly random within each cell when a
        generator is given.
        """
        shape = (self.n_azimuth, self.n_elevation)
        ia, ie = np.meshgrid(np.arange(self.n_azimuth), np.arange(self.n_elevation),
                             indexing="ij")
        if rng is None:
            fa = fe = 0.5
        else:
            fa, fe = rng.random(shape), rng.random(shape)
        A = (ia + fa) * (2.0 * math.pi / self.n_azimuth)
        lo, hi = np.radians(self.elevation_range)
        E = lo + (ie + fe) * ((hi - lo) / self.n_elevation)
        ce = np.cos(E)
        return np.column_stack([(ce * np.cos(A)).ravel(), (ce * np.sin(A)).ravel(),
                                np.sin(E).ravel()])


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Scan points in the sensor frame; ``pose`` is the generating truth if known."""

    points: np.ndarray
    pose: Optional[RigidTransform] = None
    time: float = 0.0

    def __post_init__(self):
        P = np.array(self.points, dtype=float).reshape(-1, 3)
        P.setflags(write=False)
        object.__setattr__(self, "points", P)

    def __len__(self) -> int:
        return len(self.points)


def simulate_scan(model: ShapeModel, pose: RigidTransform, cfg: ScanConfig,
                  rng: Optional[np.random.Generator] = None, time: float = 0.0) -> PointCloud:
    """Cast the sensor's ray grid at the mesh; hits within max range become points."""
    origin = pose.t
    if contains(model, origin) is not Containment.OUTSIDE:
        raise ValueError(f"sensor origin {origin.tolist()} is not outside the shape")
    need_rng = cfg.jitter or cfg.noise > 0
    if need_rng and rng is None:
        raise ValueError("a random generator is needed for jitter or range noise")
    d_sensor = cfg.directions(rng if cfg.jitter else None)
    d_body = np.ascontiguousarray(d_sensor @ pose.R.T)
    t, _ = ray_intersect_many(model, origin, d_body)
    hit = t <= cfg.max_range
    rng_ = t[hit]
    if cfg.noise > 0:
        rng_ = rng_ + rng.normal(0.0, cfg.noise, rng_.shape)
    return PointCloud(d_sensor[hit] * rng_[:, None], pose, time)


def brute_force_hits(model: ShapeModel, pose: RigidTransform, cfg: ScanConfig) -> int:
    """Hit count of an un-jittered scan, testing every ray against every facet."""
    d = cfg.directions() @ pose.R.T
    tri = model.triangles()
    o = pose.t
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    count = 0
    for di in d:
        p = np.cross(di, e2)
        det = np.einsum("ij,ij->i", e1, p)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = o - tri[:, 0]
        u = np.einsum("ij,ij->i", s, p) * inv
        q = np.cross(s, e1)
        v = (q @ di) * inv
        tt = np.einsum("ij,ij->i", e2, q) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (tt > 0)
        if hit.any() and tt[hit].min() <= cfg.max_range:
            count += 1
    return count


# ---------------------------------------------------------------------------
# ICP
# ---------------------------------------------------------------------------

def best_rigid_transform(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares R, t minimizing sum |dst - (R src + t)|^2 (reflection-corrected)."""
    if len(src) < 3:
        raise DegenerateGeometry("need at least 3 matched pairs")
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, S, Vt = np.linalg.svd(H)
    if S[1] <= 1e-12 * max(S[0], 1e-300):
        raise DegenerateGeometry("matched point sets are collinear or coincident")
    D = np.eye(3)
    if np.linalg.det(Vt.T @ U.T) < 0:
        D[2, 2] = -1.0
    R = Vt.T @ D @ U.T
    return RigidTransform(R, cd - R @ cs)


@dataclass(frozen=True, eq=False)
class IcpResult:
    """Registration outcome; unpacks as ``(transform, mse)``."""

    transform: RigidTransform
    mse: float
    iterations: int
    converged: bool
    history: List[float]

    def __iter__(self):
        return iter((self.transform, self.mse))


def icp(D: PointCloud, M: PointCloud, init: Optional[RigidTransform] = None,
        max_iter: int = 60, tol: float = 1e-10,
        max_correspondence: float = math.inf, tree: Optional[cKDTree] = None) -> IcpResult:
    """Point-to-point ICP: find T with ``M ~ T(D)``.

    Alternates exact nearest-neighbor matching (k-d tree on ``M``) with the
    closed-form rigid alignment of the matched pairs. ``history`` holds the
    mean squared distance after each matching stage; it never increases.
    Stops once it changes by less than ``tol`` (m^2).
    """
    src = np.asarray(D.points if isinstance(D, PointCloud) else D, dtype=float)
    dst = np.asarray(M.points if isinstance(M, PointCloud) else M, dtype=float)
    if len(src) < 3 or len(dst) < 3:
        raise DegenerateGeometry("ICP needs at least 3 points per cloud")
    tree = tree if tree is not None else cKDTree(dst)
    T = init if init is not None else RigidTransform.identity()
    history: List[float] = []
    prev = math.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        moved = T.apply(src)
        dist, idx = tree.query(moved)
        keep = dist <= max_correspondence
        if keep.sum() < 3:
            raise DegenerateGeometry("fewer than 3 correspondences within range")
        mse = float(np.mean(dist[keep] ** 2))
        history.append(mse)
        if abs(prev - mse) < tol or mse == 0.0:
            converged = True
            break
        prev = mse
        T = best_rigid_transform(src[keep], dst[idx[keep]])
    else:
        # final matching stage for the last alignment
        dist, _ = tree.query(T.apply(src))
        keep = dist <= max_correspondence
        mse = float(np.mean(dist[keep] ** 2))
        history.append(mse)
        converged = abs(prev - mse) < tol
    return IcpResult(T, history[-1], it, converged, history)


# ---------------------------------------------------------------------------
# odometry
# ---------------------------------------------------------------------------

def chain_poses(scans: Sequence[PointCloud], init: Optional[RigidTransform] = None,
                max_iter: int = 60, tol: float = 1e-10,
                max_correspondence: float = math.inf,
                strict: bool = False) -> List[RigidTransform]:
    """Dead-reckon sensor poses by registering each scan to its predecessor.

    ``pose_k = pose_{k-1} o icp(scan_k, scan_{k-1})`` with the previous
    increment as the initial guess (constant velocity). With ``strict`` an
    unconverged registration raises :class:`NonConvergence`.
    """
    if len(scans) < 2:
        raise ValueError("need at least two scans")
    pose = init if init is not None else RigidTransform.identity()
    poses = [pose]
    step = RigidTransform.identity()
    for k in range(1, len(scans)):
        try:
            res = icp(scans[k], scans[k - 1], step, max_iter, tol, max_correspondence)
        except DegenerateGeometry as exc:
            raise DegenerateGeometry(f"scan {k}: {exc}") from exc
        if not res.converged:
            if strict:
                raise NonConvergence(f"ICP did not converge on scan {k}", result=res)
            log.debug("ICP hit max_iter on scan %d (mse %.3g)", k, res.mse)
        step = res.transform
        pose = pose.compose(step)
        pose = RigidTransform(_project_rotation(pose.R), pose.t)
        poses.append(pose)
    return poses


def scan_trajectory(model: ShapeModel, times, positions, cfg: ScanConfig,
                    rng: Optional[np.random.Generator] = None, attitude=None) -> List[PointCloud]:
    """Scans along a sampled trajectory at the configured frequency.

    Positions are linearly interpolated to the scan instants; the sensor
    attitude is fixed (``attitude`` rotation, default aligned with the body).
    """
    times = np.asarray(times, dtype=float)
    positions = np.asarray(positions, dtype=float)
    R = np.eye(3) if attitude is None else np.asarray(attitude, dtype=float)
    n = int(math.floor((times[-1] - times[0]) * cfg.frequency + 1e-9)) + 1
    ts = times[0] + np.arange(n) * cfg.period
    scans = []
    for t in ts:
        p = np.array([np.interp(t, times, positions[:, j]) for j in range(3)])
        scans.append(simulate_scan(model, RigidTransform(R, p), cfg, rng, time=float(t)))
    return scans


def drift(truth: Sequence[RigidTransform], estimate: Sequence[RigidTransform]) -> dict:
    """Terminal and maximum position error against truth, plus the truth path length."""
    P = np.array([p.t for p in truth])
    E = np.array([p.t for p in estimate])
    err = np.linalg.norm(P - E, axis=1)
    path = float(np.linalg.norm(np.diff(P, axis=0), axis=1).sum())
    return {"terminal_error": float(err[-1]), "max_error": float(err.max()),
            "path_length": path,
            "terminal_fraction": float(err[-1] / path) if path > 0 else 0.0}


def write_cloud_csv(path, cloud: PointCloud) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "z"])
        for p in cloud.points:
            w.writerow([repr(float(v)) for v in p])


def write_pose_csv(path, times, poses: Sequence[RigidTransform]) -> None:
    """Rows ``t,tx,ty,tz,qw,qx,qy,qz``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "tx", "ty", "tz", "qw", "qx", "qy", "qz"])
        for t, p in zip(times, poses):
            w.writerow([repr(float(v)) for v in (t, *p.t, *p.quaternion())])


def read_pose_csv(path):
    data = np.atleast_1d(np.genfromtxt(path, delimiter=",", names=True))
    times = np.asarray(data["t"], dtype=float)
    poses = [RigidTransform.from_quaternion((r["qw"], r["qx"], r["qy"], r["qz"]),
                                           (r["tx"], r["ty"], r["tz"])) for r in data]
    return times, poses
