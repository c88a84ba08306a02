"""Virtual-force spreading of a rover swarm under a minimum-degree rule.

Each rover feels inverse-square repulsion from every other rover, plus a
linear pull toward all others while it has fewer than ``D`` neighbors within
communication range. Displacements are ``alpha * f`` from the current
position, clamped to the hop capability and projected onto the surface. All
rovers move together from a shared snapshot (synchronous update).
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse.csgraph import connected_components

from .dynamics import Environment
from .errors import CoincidentRovers, SingularEvaluation, SingularSTM
from .lambert import ShootingConfig, solve_hop
from .mesh import ShapeModel, SurfacePoint, project_to_surface, sample_surface

log = logging.getLogger(__name__)

COINCIDENT = 1e-6  # m


class Mode(enum.Enum):
    KINEMATIC = "kinematic"
    BALLISTIC = "ballistic"


@dataclass(frozen=True)
class SwarmConfig:
    """Swarm parameters.

    ``alpha`` defaults to the gain that moves a rover by ``max_hop / 3`` when
    the other ``N - 1`` rovers all sit ``r_c / 2`` away on one side (for a
    lone pair this is a repulsion-only step of ``max_hop / 3``). Random deployment
    drops rovers uniformly on the surface within ``deploy_radius`` (default
    ``r_c / 2``) of a random center, so the starting graph is complete.
    """

    N: int = 15
    r_c: float = 100.0
    r_s: float = 30.0
    D: int = 2
    alpha: Optional[float] = None
    max_hop: float = 30.0
    iterations: int = 15
    deploy_radius: Optional[float] = None
    mu_tau: float = 1000.0
    coverage_samples: int = 4000

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if not self.r_c > 0:
            raise ValueError("communication range must be positive")
        if not 0 <= self.D <= self.N - 1:
            raise ValueError("D must lie in [0, N - 1]")
        if not self.max_hop > 0:
            raise ValueError("max_hop must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @property
    def gain(self) -> float:
        if self.alpha is not None:
            return self.alpha
        # |f_r| = (N - 1) / d for N - 1 rovers stacked at d = r_c / 2
        return (self.max_hop / 3.0) * (self.r_c / 2.0) / (self.N - 1)

    @property
    def deployment_radius(self) -> float:
        return 0.5 * self.r_c if self.deploy_radius is None else self.deploy_radius

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha"] = self.gain
        d["deploy_radius"] = self.deployment_radius
        return d


@dataclass(frozen=True, eq=False)
class SwarmState:
    positions: Tuple[SurfacePoint, ...]
    adjacency: np.ndarray
    degrees: np.ndarray
    forces: np.ndarray
    feasible: Optional[np.ndarray] = None

    @property
    def points(self) -> np.ndarray:
        return np.array([p.position for p in self.positions])

    @property
    def N(self) -> int:
        return len(self.positions)


def adjacency_matrix(P: np.ndarray, r_c: float) -> np.ndarray:
    """Symmetric link matrix (distance <= r_c), zero diagonal."""
    d = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=2)
    A = d <= r_c
    np.fill_diagonal(A, False)
    return A


def compute_forces(P: np.ndarray, degrees: np.ndarray, D: int) -> np.ndarray:
    """Net virtual force per rover.

    f(i) = sum_j [ (r_i - r_j) / |r_i - r_j|^2 + a_i (r_j - r_i) ] with
    a_i = 1 when degree(i) < D. Terms are accumulated over ``j`` in index
    order for every ``i``.
    """
    P = np.asarray(P, dtype=float)
    N = len(P)
    attract = np.asarray(degrees) < D
    F = np.zeros((N, 3))
    for j in range(N):
        diff = P - P[j]
        d2 = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
        others = np.arange(N) != j
        if np.any(d2[others] < COINCIDENT ** 2):
            i = int(np.flatnonzero(others & (d2 < COINCIDENT ** 2))[0])
            raise CoincidentRovers(f"rovers {min(i, j)} and {max(i, j)} coincide")
        d2[j] = 1.0
        term = diff / d2[:, None]
        term[attract] = term[attract] + (-diff[attract])
        F[others] += term[others]
    return F


def make_state(positions: Sequence[SurfacePoint], cfg: SwarmConfig,
               feasible: Optional[np.ndarray] = None) -> SwarmState:
    P = np.array([p.position for p in positions])
    A = adjacency_matrix(P, cfg.r_c)
    deg = A.sum(axis=1)
    return SwarmState(tuple(positions), A, deg, compute_forces(P, deg, cfg.D), feasible)


def forces(state: SwarmState, cfg: SwarmConfig) -> np.ndarray:
    return compute_forces(state.points, state.degrees, cfg.D)


def _clamped_target(model: ShapeModel, p: np.ndarray, disp: np.ndarray,
                    max_hop: float) -> SurfacePoint:
    """Project ``p + disp`` to the surface, shrinking disp until the move is <= max_hop."""
    n = float(np.linalg.norm(disp))
    if n > max_hop:
        disp = disp * (max_hop / n)
    for _ in range(60):
        q = project_to_surface(model, p + disp)
        if np.linalg.norm(q.position - p) <= max_hop:
            return q
        disp = 0.8 * disp
    return project_to_surface(model, p)


def step(state: SwarmState, model: ShapeModel, cfg: SwarmConfig,
         mode: Mode = Mode.KINEMATIC, env: Optional[Environment] = None,
         shooting: Optional[ShootingConfig] = None) -> SwarmState:
    """Move every rover by alpha * f(i) (clamped, projected) from one snapshot.

    In ballistic mode each move is also solved as a hop with tau = mu_tau;
    ``feasible`` records which rovers got a converged, above-ground arc. A
    failed solve still moves the rover kinematically.
    """
    P = state.points
    F = state.forces
    new = []
    flags = np.ones(state.N, dtype=bool)
    for i in range(state.N):
        disp = cfg.gain * F[i]
        if not np.any(disp):
            new.append(state.positions[i])
            continue
        target = _clamped_target(model, P[i], disp, cfg.max_hop)
        if mode is Mode.BALLISTIC:
            if env is None:
                raise ValueError("ballistic mode needs an Environment")
            flags[i] = _hop_ok(env, state.positions[i], target, cfg.mu_tau, shooting)
        new.append(target)
    return make_state(new, cfg, flags if mode is Mode.BALLISTIC else None)


def _hop_ok(env, a, b, tau, shooting) -> bool:
    if np.linalg.norm(a.position - b.position) < 1e-9:
        return True
    try:
        res = solve_hop(env, a, b, tau, shooting or ShootingConfig(stm="variational", steps=64,
                                                                    max_dt=None))
    except (SingularSTM, SingularEvaluation, ValueError, ArithmeticError) as exc:
        log.debug("swarm hop solve failed: %s", exc)
        return False
    return bool(res.converged and not res.trajectory.subsurface)


def deploy(model: ShapeModel, cfg: SwarmConfig, rng: np.random.Generator,
           center: Optional[SurfacePoint] = None) -> List[SurfacePoint]:
    """Uniform random surface positions within the deployment radius of a center."""
    c = center if center is not None else sample_surface(model, rng)
    R = cfg.deployment_radius
    out: List[SurfacePoint] = []
    for _ in range(10000):
        pos, fid, bc = sample_surface(model, rng, size=4 * cfg.N)
        for p, f, b in zip(pos, fid, bc):
            if np.linalg.norm(p - c.position) <= R and all(
                    np.linalg.norm(p - q.position) >= COINCIDENT for q in out):
                out.append(SurfacePoint(p, int(f), b))
                if len(out) == cfg.N:
                    return out
    raise ValueError("deployment region too small to place every rover")


@dataclass(frozen=True)
class SwarmMetrics:
    iteration: int
    min_distance: float
    mean_distance: float
    min_degree: int
    components: int
    coverage: float
    n_infeasible: int = 0


def coverage_area(model: ShapeModel, P: np.ndarray, r_s: float, samples: np.ndarray) -> float:
    """Monte-Carlo area of the surface within r_s of any rover."""
    d = np.linalg.norm(samples[:, None, :] - P[None, :, :], axis=2).min(axis=1)
    return float(np.mean(d <= r_s) * model.surface_area)


def metrics(state: SwarmState, iteration: int, model: ShapeModel, cfg: SwarmConfig,
            samples: np.ndarray) -> SwarmMetrics:
    P = state.points
    iu = np.triu_indices(state.N, 1)
    d = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=2)[iu]
    ncomp = connected_components(state.adjacency, directed=False)[0]
    bad = 0 if state.feasible is None else int((~state.feasible).sum())
    return SwarmMetrics(iteration, float(d.min()), float(d.mean()), int(state.degrees.min()),
                        int(ncomp), coverage_area(model, P, cfg.r_s, samples), bad)


@dataclass(frozen=True, eq=False)
class SwarmHistory:
    states: Tuple[SwarmState, ...]
    metrics: Tuple[SwarmMetrics, ...]


def simulate(model: ShapeModel, cfg: SwarmConfig, seed: int = 0,
             positions: Optional[Sequence[SurfacePoint]] = None,
             mode: Mode = Mode.KINEMATIC, env: Optional[Environment] = None,
             shooting: Optional[ShootingConfig] = None) -> SwarmHistory:
    """Run ``cfg.iterations`` synchronous steps from a seeded or explicit placement.

    Iteration 0 is the deployment. Coverage samples come from their own
    child seed so changing the sample count never perturbs the placement.
    """
    ss = np.random.SeedSequence(seed)
    place_seed, cover_seed = ss.spawn(2)
    if positions is None:
        positions = deploy(model, cfg, np.random.default_rng(place_seed))
    elif len(positions) != cfg.N:
        raise ValueError(f"expected {cfg.N} explicit positions, got {len(positions)}")
    samples = sample_surface(model, np.random.default_rng(cover_seed),
                             size=cfg.coverage_samples)[0]
    state = make_state(positions, cfg)
    states = [state]
    mets = [metrics(state, 0, model, cfg, samples)]
    for k in range(1, cfg.iterations + 1):
        state = step(state, model, cfg, mode, env, shooting)
        states.append(state)
        mets.append(metrics(state, k, model, cfg, samples))
    return SwarmHistory(tuple(states), tuple(mets))


def write_positions_csv(path, history: SwarmHistory) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "rover", "x", "y", "z", "degree"])
        for k, s in enumerate(history.states):
            for i, p in enumerate(s.positions):
                w.writerow([k, i, *(repr(float(v)) for v in p.position), int(s.degrees[i])])


def write_links_csv(path, history: SwarmHistory) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "i", "j"])
        for k, s in enumerate(history.states):
            for i, j in zip(*np.nonzero(np.triu(s.adjacency, 1))):
                w.writerow([k, int(i), int(j)])


def write_metrics_csv(path, history: SwarmHistory) -> None:
    names = list(SwarmMetrics.__dataclass_fields__)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for m in history.metrics:
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(m).values()])
