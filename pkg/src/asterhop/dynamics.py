"""Rover translational motion in the rotating body-fixed frame.

    r'' = g(r) + d + u - 2 w x r' - w x (w x r)      (w constant)

Integration is fixed-step RK4; surface crossings are detected from the
solid-angle sum that the gravity evaluation produces anyway, then refined by
bisection on the crossing step.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import _kernels as K
from .errors import SingularEvaluation
from .gravity import GravityField, evaluate
from .mesh import ShapeModel, SurfacePoint, distance_to_surface, project_to_surface

IMPACT_TOL = 1e-4  # m
DEFAULT_STEPS = 2000
MAX_DT = 0.5  # s


@dataclass(frozen=True, eq=False)
class Environment:
    """Gravity field plus constant spin, disturbance and control accelerations.

    ``gravity=False`` keeps the shape (for impact detection) but zeroes g.
    """

    field: GravityField
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    disturbance: np.ndarray = field(default_factory=lambda: np.zeros(3))
    control: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity: bool = True

    def __post_init__(self):
        for name in ("omega", "disturbance", "control"):
            a = np.asarray(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, a)

    @property
    def shape(self) -> ShapeModel:
        return self.field.shape

    @property
    def mu(self) -> float:
        """Point-mass parameter seen by the dynamics (0 with gravity off)."""
        return self.field.mu if self.gravity else 0.0

    def _kernel_args(self):
        verts, faces, normals, edges, lengths, dyads, gr, guard = self.field.kernel_args()
        if not self.gravity:
            gr = 0.0
        return verts, faces, normals, edges, lengths, dyads, gr, guard


@dataclass(frozen=True)
class RoverState:
    r: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))


class Outcome(enum.Enum):
    LANDED = "landed"
    ESCAPED = "escaped"
    TIMED_OUT = "timed_out"


@dataclass(frozen=True, eq=False)
class HopTrajectory:
    """One ballistic arc sampled at the integrator cadence."""

    launch: RoverState
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    outcome: Outcome
    landing: Optional[SurfacePoint] = None
    subsurface: bool = False
    theta_launch: float = math.nan
    theta_land: float = math.nan
    stm: Optional[np.ndarray] = None

    @property
    def samples(self) -> List[RoverState]:
        return [RoverState(r, v, t) for t, r, v in
                zip(self.times, self.positions, self.velocities)]

    @property
    def final(self) -> RoverState:
        return RoverState(self.positions[-1], self.velocities[-1], self.times[-1])

    @property
    def tau(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def v0_mag(self) -> float:
        return float(np.linalg.norm(self.velocities[0]))

    @property
    def vf_mag(self) -> float:
        return float(np.linalg.norm(self.velocities[-1]))

    @property
    def path_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.positions, axis=0), axis=1).sum())


def acceleration(env: Environment, s: RoverState) -> np.ndarray:
    w, r, v = env.omega, s.r, s.v
    g = evaluate(env.field, r).g if env.gravity else np.zeros(3)
    return g + env.disturbance + env.control - 2.0 * np.cross(w, v) - np.cross(w, np.cross(w, r))


def energy(env: Environment, s: RoverState) -> float:
    """1/2 |v|^2 - U (conserved when w = 0 and d = u = 0)."""
    return 0.5 * float(s.v @ s.v) - (evaluate(env.field, s.r).U if env.gravity else 0.0)


def jacobi_constant(env: Environment, s: RoverState) -> float:
    """1/2 |v|^2 - U - 1/2 |w x r|^2 (conserved in the rotating frame, d = u = 0)."""
    wr = np.cross(env.omega, s.r)
    return energy(env, s) - 0.5 * float(wr @ wr)


def default_steps(tau: float, steps: Optional[int] = None, max_dt: Optional[float] = MAX_DT) -> int:
    """Step count for an arc: ``steps`` (default 2000) with dt capped at ``max_dt``."""
    n = DEFAULT_STEPS if steps is None else int(steps)
    if max_dt:
        n = max(n, int(math.ceil(tau / max_dt - 1e-9)))
    return max(n, 1)


def _run(env, r0, v0, h, n, stop_on_impact, escape_radius, with_stm):
    verts, faces, normals, edges, lengths, dyads, gr, guard = env._kernel_args()
    return K.propagate_rk4(np.asarray(r0, dtype=float), np.asarray(v0, dtype=float),
                           float(h), int(n), env.omega, env.disturbance + env.control,
                           verts, faces, normals, edges, lengths, dyads, gr, guard,
                           bool(stop_on_impact), float(escape_radius), bool(with_stm))


def end_state(env: Environment, r0, v0, tau: float, n_steps: int, with_stm: bool = False):
    """Position, velocity and (optionally) d r / d v0 after exactly ``tau`` seconds.

    Surface crossings are ignored; this is the map the shooting method inverts.
    """
    out = _run(env, r0, v0, tau / n_steps, n_steps, False, 0.0, with_stm)
    pos, vel, _, k, status, phi = out
    if status == K.SINGULAR:
        raise SingularEvaluation(f"trajectory from {np.asarray(r0).tolist()} passed through "
                                 f"a mesh edge/vertex at t={k * tau / n_steps:.6g} s")
    return pos[-1], vel[-1], (phi if with_stm else None)


def cone_angles(model: ShapeModel, launch_facet: int, v0, landing_facet: int, vf):
    """Launch angle of ``v0`` and arrival angle of ``-vf`` from the facet normals (deg)."""
    v0 = np.asarray(v0, dtype=float)
    vf = np.asarray(vf, dtype=float)
    n0 = np.linalg.norm(v0)
    nf = np.linalg.norm(vf)
    if n0 == 0.0 or nf == 0.0:
        raise ValueError("cone angles need nonzero velocities")
    c1 = float(model.normals[launch_facet] @ v0) / n0
    c2 = float(model.normals[landing_facet] @ (-vf)) / nf
    return (math.degrees(math.acos(min(1.0, max(-1.0, c1)))),
            math.degrees(math.acos(min(1.0, max(-1.0, c2)))))


def propagate(env: Environment, s0: RoverState, tau_max: float, dt: Optional[float] = None,
              *, stop_on_impact: bool = True, escape_radius: Optional[float] = None,
              launch_facet: Optional[int] = None, landing_facet: Optional[int] = None,
              with_stm: bool = False) -> HopTrajectory:
    """Integrate from ``s0`` for at most ``tau_max`` seconds.

    With ``stop_on_impact`` the first surface crossing ends the arc (refined to
    within 1e-4 m of the surface). Otherwise the arc always runs to
    ``tau_max`` and any interior sample sets ``subsurface``.
    """
    if not tau_max > 0.0:
        raise ValueError("tau_max must be positive")
    model = env.shape
    if dt is None:
        n = default_steps(tau_max)
    else:
        if not dt > 0.0:
            raise ValueError("dt must be positive")
        n = max(1, int(math.ceil(tau_max / dt - 1e-9)))
    h = tau_max / n
    R_esc = 10.0 * model.bounding_radius if escape_radius is None else float(escape_radius)

    out = _run(env, s0.r, s0.v, h, n, stop_on_impact, R_esc, with_stm)
    return _assemble(env, s0, h, out, stop_on_impact, launch_facet, landing_facet, with_stm)


def _assemble(env, s0: RoverState, h: float, out, stop_on_impact: bool,
              launch_facet: Optional[int], landing_facet: Optional[int],
              with_stm: bool) -> HopTrajectory:
    """Build a HopTrajectory from raw integrator output."""
    model = env.shape
    pos, vel, inside, k, status, phi = out
    if status == K.SINGULAR:
        raise SingularEvaluation(
            f"trajectory from r={s0.r.tolist()} v={s0.v.tolist()} hit a mesh edge/vertex "
            f"near t={s0.t + k * h:.6g} s, r={pos[k].tolist()}")

    times = s0.t + h * np.arange(k + 1)
    pos = pos[:k + 1].copy()
    vel = vel[:k + 1].copy()
    landing = None
    if status == K.IMPACT:
        t_hit, r_hit, v_hit = _refine_impact(env, pos[k - 1], vel[k - 1], h)
        times[k] = times[k - 1] + t_hit
        pos[k] = r_hit
        vel[k] = v_hit
        landing = project_to_surface(model, r_hit)
        outcome = Outcome.LANDED
        interior = inside[1:k]
    elif status == K.ESCAPED:
        outcome = Outcome.ESCAPED
        interior = inside[1:k + 1]
    else:
        outcome = Outcome.TIMED_OUT
        # the final sample of a fixed-time arc sits on its (surface) target
        interior = inside[1:k] if not stop_on_impact else inside[1:k + 1]

    if launch_facet is None:
        launch_facet = project_to_surface(model, s0.r).facet
    if landing_facet is None:
        landing_facet = landing.facet if landing is not None else project_to_surface(
            model, pos[-1]).facet
    try:
        th1, th2 = cone_angles(model, launch_facet, vel[0], landing_facet, vel[-1])
    except ValueError:
        th1 = th2 = math.nan
    return HopTrajectory(s0, times, pos, vel, outcome, landing, bool(np.any(interior)),
                         th1, th2, phi.copy() if with_stm else None)


def _refine_impact(env: Environment, r_out, v_out, h):
    """Bisect the sub-step size until the state is within IMPACT_TOL of the surface."""
    model = env.shape
    lo, hi = 0.0, h
    best = (h, None, None)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        pos, vel, inside, _, status, _ = _run(env, r_out, v_out, mid, 1, False, 0.0, False)
        if status == K.SINGULAR:
            # sub-step landed on an edge: nudge the split point
            mid = lo + 0.5001 * (hi - lo)
            pos, vel, inside, _, status, _ = _run(env, r_out, v_out, mid, 1, False, 0.0, False)
        r, v = pos[1], vel[1]
        best = (mid, r, v)
        if distance_to_surface(model, r) < IMPACT_TOL:
            break
        if inside[1]:
            hi = mid
        else:
            lo = mid
    return best


def write_trajectory_csv(path, traj: HopTrajectory) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "z", "vx", "vy", "vz"])
        for t, r, v in zip(traj.times, traj.positions, traj.velocities):
            w.writerow([repr(float(x)) for x in (t, *r, *v)])


def read_trajectory_csv(path):
    """Returns (times, positions, velocities or None)."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    t = np.asarray(data["t"], dtype=float)
    P = np.column_stack([data["x"], data["y"], data["z"]]).astype(float)
    V = None
    if data.dtype.names and "vx" in data.dtype.names:
        V = np.column_stack([data["vx"], data["vy"], data["vz"]]).astype(float)
    return t, P, V
