"""Hop boundary-value problem: launch velocity that reaches a target at time tau.

A zero-revolution two-body Lambert solution (universal variables) seeds a
shooting loop that corrects v0 with the 3x3 sensitivity d r(tau) / d v0 of
the full rotating-frame propagator.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.optimize import brentq

from . import _kernels as K
from .dynamics import (Environment, HopTrajectory, RoverState, _assemble, _run, default_steps,
                       end_state)
from .errors import SingularEvaluation, SingularSTM
from .mesh import SurfacePoint, launch_point

log = logging.getLogger(__name__)

COND_LIMIT = 1e12
TARGET_NUDGE = 1e-2  # landing aim point offset, as a fraction of tol
WEAK_FIELD = 1e-8  # mu tau^2 / r^3 below which the straight line is the better guess


class LambertDegenerate(UserWarning):
    """Two-body geometry is degenerate; a straight-line guess was used."""


@dataclass(frozen=True)
class ShootingConfig:
    """Shooting-loop settings.

    ``stm`` picks how d r / d v0 is obtained: ``"central"`` finite differences
    (six extra propagations) or ``"variational"`` (integrated alongside the
    nominal arc using the gravity gradient matrix). ``steps``/``max_dt``
    control the integrator grid: ``steps`` per arc, dt capped at ``max_dt``.
    """

    tol: float = 1e-3
    max_iter: int = 25
    fd_step: Optional[float] = None
    damping: float = 0.5
    stm: str = "central"
    steps: Optional[int] = None
    max_dt: Optional[float] = 0.5
    launch_offset: float = 1e-3

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.stm not in ("central", "forward", "variational"):
            raise ValueError(f"unknown stm method {self.stm!r}")

    def n_steps(self, tau: float) -> int:
        return default_steps(tau, self.steps, self.max_dt)


@dataclass(frozen=True, eq=False)
class ShootingResult:
    v0: np.ndarray
    trajectory: HopTrajectory
    iterations: int
    final_error: float
    converged: bool
    launch: np.ndarray
    errors: List[float] = field(default_factory=list)


# ---------------------------------------------------------------------------
# two-body Lambert (universal variables)
# ---------------------------------------------------------------------------

def _stumpff(z: float):
    if abs(z) < 1e-3:
        S = 1 / 6 - z / 120 + z * z / 5040 - z ** 3 / 362880 + z ** 4 / 39916800
        C = 1 / 2 - z / 24 + z * z / 720 - z ** 3 / 40320 + z ** 4 / 3628800
    elif z > 0:
        s = math.sqrt(z)
        S = (s - math.sin(s)) / s ** 3
        C = (1 - math.cos(s)) / z
    else:
        s = math.sqrt(-z)
        S = (math.sinh(s) - s) / s ** 3
        C = (math.cosh(s) - 1) / (-z)
    return S, C


def two_body_guess(mu: float, r0, rf, tau: float) -> np.ndarray:
    """Short-way, zero-revolution Lambert launch velocity about a point mass.

    Falls back to the straight-line velocity ``(rf - r0)/tau`` (with a
    :class:`LambertDegenerate` warning) when the transfer angle is ~0 or ~180
    degrees, and returns it silently when ``mu == 0`` or the field is too weak
    to bend the path measurably over ``tau``.
    """
    r0 = np.asarray(r0, dtype=float)
    rf = np.asarray(rf, dtype=float)
    if not tau > 0:
        raise ValueError("tau must be positive")
    straight = (rf - r0) / tau
    if mu <= 0.0:
        return straight
    r1 = float(np.linalg.norm(r0))
    r2 = float(np.linalg.norm(rf))
    if mu * tau * tau / min(r1, r2) ** 3 < WEAK_FIELD:
        # gravity bends the path by less than the universal-variable residual
        # can resolve (its terms cancel catastrophically deep in the hyperbolic range)
        return straight
    cos_dth = float(np.clip(r0 @ rf / (r1 * r2), -1.0, 1.0))
    sin_dth = float(np.linalg.norm(np.cross(r0, rf)) / (r1 * r2))
    if sin_dth < 1e-8:
        warnings.warn("Lambert transfer angle is degenerate; using straight-line guess",
                      LambertDegenerate, stacklevel=2)
        return straight
    A = sin_dth * math.sqrt(r1 * r2 / (1.0 - cos_dth))
    sqmu_t = math.sqrt(mu) * tau

    def y(z):
        S, C = _stumpff(z)
        return r1 + r2 + A * (z * S - 1.0) / math.sqrt(C)

    def F(z):
        S, C = _stumpff(z)
        yz = r1 + r2 + A * (z * S - 1.0) / math.sqrt(C)
        if yz < 0:
            return -sqmu_t
        return (yz / C) ** 1.5 * S + A * math.sqrt(yz) - sqmu_t

    # y(z) rises monotonically from -inf to r1 + r2 + sqrt(2) A at 4 pi^2; the
    # time-of-flight residual F is monotone on the y >= 0 part of that range and
    # continues flat at -sqrt(mu) tau below it, so one bracket holds the root
    z_hi = 4.0 * math.pi ** 2 * (1.0 - 1e-6)
    z_lo = -1.0
    while y(z_lo) >= 0.0:
        z_lo *= 2.0
    z = brentq(F, z_lo, z_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    S, C = _stumpff(z)
    yz = y(z)
    f = 1.0 - yz / r1
    g = A * math.sqrt(yz / mu)
    return (rf - f * r0) / g


# ---------------------------------------------------------------------------
# sensitivity matrix
# ---------------------------------------------------------------------------

def stm_columns(env: Environment, r0, v0, tau: float, fd_step: Optional[float] = None,
                n_steps: Optional[int] = None, scheme: str = "central") -> np.ndarray:
    """d r(tau) / d v0 by finite differences of the propagator.

    Column j is [r(v0 + d e_j) - r(v0 - d e_j)] / 2d for the central scheme
    (forward scheme: [r(v0 + d e_j) - r(v0)] / d).
    """
    r0 = np.asarray(r0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    n = n_steps or default_steps(tau)
    d = fd_step if fd_step is not None else max(1e-6, 1e-6 * float(np.linalg.norm(v0)))
    Phi = np.empty((3, 3))
    if scheme == "forward":
        base = end_state(env, r0, v0, tau, n)[0]
    for j in range(3):
        e = np.zeros(3)
        e[j] = d
        plus = end_state(env, r0, v0 + e, tau, n)[0]
        if scheme == "central":
            minus = end_state(env, r0, v0 - e, tau, n)[0]
            Phi[:, j] = (plus - minus) / (2.0 * d)
        elif scheme == "forward":
            Phi[:, j] = (plus - base) / d
        else:
            raise ValueError(f"unknown finite-difference scheme {scheme!r}")
    return Phi


# ---------------------------------------------------------------------------
# shooting
# ---------------------------------------------------------------------------

def _target_position(p):
    return p.position if isinstance(p, SurfacePoint) else np.asarray(p, dtype=float)


def solve_hop(env: Environment, r0, rf, tau: float,
              cfg: Optional[ShootingConfig] = None,
              v_guess: Optional[np.ndarray] = None) -> ShootingResult:
    """Launch velocity from ``r0`` that reaches ``rf`` after exactly ``tau``.

    ``r0``/``rf`` are :class:`SurfacePoint` (launch nudged off the surface by
    ``cfg.launch_offset`` along the facet normal) or raw 3-vectors. A surface
    target is aimed at ``0.01 tol`` above its facet and converged to within
    the remaining tolerance, so ``final_error`` (miss distance to ``rf``
    itself) never exceeds ``tol`` on success. ``errors`` lists the miss
    distance to the aim point per iteration. An unconverged solve returns its
    best iterate with ``converged=False``.

    Raises SingularSTM when the sensitivity matrix condition number exceeds
    1e12, and SingularEvaluation when an arc crosses a mesh edge/vertex.
    """
    cfg = cfg or ShootingConfig()
    if not tau > 0:
        raise ValueError("tau must be positive")
    model = env.shape
    if isinstance(r0, SurfacePoint):
        x0 = launch_point(model, r0, cfg.launch_offset)
        launch_facet = r0.facet
    else:
        x0 = np.asarray(r0, dtype=float)
        launch_facet = None
    goal = _target_position(rf)
    if isinstance(rf, SurfacePoint):
        # aim a hair above the surface: projected landing points often sit exactly
        # on a mesh edge or vertex, where the field formula is numerically singular
        nudge = TARGET_NUDGE * cfg.tol
        target = launch_point(model, rf, nudge)
        landing_facet = rf.facet
    else:
        nudge = 0.0
        target = goal
        landing_facet = None
    tol = cfg.tol - nudge
    if np.allclose(x0, goal, rtol=0.0, atol=1e-9):
        raise ValueError("launch and target coincide")

    n = cfg.n_steps(tau)
    h = tau / n
    variational = cfg.stm == "variational"

    def shoot(v):
        out = _run(env, x0, v, h, n, False, 0.0, variational)
        if out[4] == K.SINGULAR:
            raise SingularEvaluation(f"arc from {x0.tolist()} with v0={v.tolist()} passed "
                                     f"through a mesh edge/vertex")
        return out

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LambertDegenerate)
        v = two_body_guess(env.mu, x0, target, tau) if v_guess is None else np.asarray(
            v_guess, dtype=float)
    out = shoot(v)
    err = target - out[0][-1]
    e = float(np.linalg.norm(err))
    errors = [e]
    best_v, best_e, best_out = v.copy(), e, out
    iterations = 1
    converged = e <= tol
    while not converged and iterations < cfg.max_iter:
        if variational:
            Phi = out[5]
        else:
            fd = cfg.fd_step if cfg.fd_step is not None else max(1e-6, 1e-6 * np.linalg.norm(v))
            Phi = stm_columns(env, x0, v, tau, fd, n, scheme=cfg.stm)
        cond = np.linalg.cond(Phi)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise SingularSTM(f"sensitivity matrix condition number {cond:.3g} exceeds "
                              f"{COND_LIMIT:g} (tau={tau:g} s)")
        dv = np.linalg.solve(Phi, err)
        v_new = v + dv
        out_new = shoot(v_new)
        e_new = float(np.linalg.norm(target - out_new[0][-1]))
        if e_new > e:
            v_new = v + cfg.damping * dv
            out_new = shoot(v_new)
            e_new = float(np.linalg.norm(target - out_new[0][-1]))
        v, out, e = v_new, out_new, e_new
        err = target - out[0][-1]
        errors.append(e)
        iterations += 1
        if e < best_e:
            best_v, best_e, best_out = v.copy(), e, out
        converged = e <= tol

    traj = _assemble(env, RoverState(x0, best_v), h, best_out, False, launch_facet,
                     landing_facet, variational)
    miss = float(np.linalg.norm(best_out[0][-1] - goal))
    return ShootingResult(best_v, traj, iterations, miss, best_e <= tol, x0, errors)
