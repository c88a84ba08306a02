"""Multi-hop route planning: RRT sampling over the surface plus an evolutionary refiner.

A plan is the triple (positions, transfer times, launch speeds). Positions and
times are the genome; speeds come from solving every hop's boundary-value
problem. Cost is the total launch speed plus quadratic penalties for
exceeding the local escape speed or leaving the 45 degree launch/landing cones.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import _kernels as K_
from .dynamics import Environment
from .errors import GoalUnreached, SingularEvaluation, SingularSTM
from .gravity import escape_speed
from .lambert import ShootingConfig, solve_hop
from .mesh import ShapeModel, SurfacePoint, project_to_surface, sample_surface

log = logging.getLogger(__name__)

# Snapping a steered point to the surface can lengthen a hop; hops up to
# HOP_SLACK * delta count as within the hop bound everywhere in the planner.
HOP_SLACK = 1.1


def _planner_shooting() -> ShootingConfig:
    return ShootingConfig(stm="variational", steps=48, max_dt=None, max_iter=12)


@dataclass(frozen=True)
class PlannerConfig:
    """RRT and evolutionary-algorithm settings.

    ``delta`` is the rover's maximum hop distance; RRT samples draw their own
    hop bound uniformly from ``delta_range`` (default ``(0.3 delta, delta)``).
    Unset mutation scales default to ``0.1 mu_tau`` and ``0.2 delta``; the goal
    tolerance defaults to ``delta / 10``.
    """

    K: int = 300
    delta: float = 100.0
    delta_range: Optional[Tuple[float, float]] = None
    mu_tau: float = 1000.0
    sigma_tau: float = 200.0
    goal_tol: Optional[float] = None
    population: int = 50
    generations: int = 51
    sigma_gamma: Optional[float] = None
    sigma_pi: Optional[float] = None
    penalty_weight: float = 100.0
    infeasible_penalty: float = 1e3
    cone_limit: float = 45.0
    bridge_depth: int = 4
    sample_attempts: int = 20
    shooting: ShootingConfig = field(default_factory=_planner_shooting)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.population < 2 or self.population % 2:
            raise ValueError("population must be even and >= 2")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        for name in ("delta", "mu_tau", "sigma_tau", "penalty_weight"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("sigma_gamma", "sigma_pi", "goal_tol"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        a, b = self.hop_bounds
        if not 0 < a <= b:
            raise ValueError("delta_range must satisfy 0 < a <= b")

    @property
    def hop_bounds(self) -> Tuple[float, float]:
        if self.delta_range is None:
            return 0.3 * self.delta, self.delta
        return tuple(float(x) for x in self.delta_range)

    @property
    def eps_goal(self) -> float:
        return self.delta / 10.0 if self.goal_tol is None else self.goal_tol

    @property
    def mutation_time(self) -> float:
        return 0.1 * self.mu_tau if self.sigma_gamma is None else self.sigma_gamma

    @property
    def mutation_position(self) -> float:
        return 0.2 * self.delta if self.sigma_pi is None else self.sigma_pi

    @property
    def min_tau(self) -> float:
        return 0.1 * self.mu_tau

    @property
    def immigrants(self) -> int:
        return self.population // 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delta_range"] = list(self.hop_bounds)
        d["goal_tol"] = self.eps_goal
        d["sigma_gamma"] = self.mutation_time
        d["sigma_pi"] = self.mutation_position
        return d


@dataclass(frozen=True)
class HopDiagnostics:
    """Outcome of one solved hop."""

    v0: Tuple[float, float, float]
    speed: float
    escape_speed: float
    theta_launch: float
    theta_land: float
    converged: bool
    subsurface: bool
    miss: float
    iterations: int

    def feasible(self, cone_limit: float = 45.0) -> bool:
        return (self.converged and not self.subsurface and self.speed < self.escape_speed
                and self.theta_launch <= cone_limit and self.theta_land <= cone_limit)


@dataclass(frozen=True, eq=False)
class HopPlan:
    """Positions Pi (n+1 surface points), transfer times Gamma (n), and results once evaluated."""

    points: Tuple[SurfacePoint, ...]
    times: np.ndarray
    delta: float = math.nan
    hops: Optional[Tuple[HopDiagnostics, ...]] = None
    f: float = math.nan
    J: float = math.nan

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        t = np.array(self.times, dtype=float).reshape(-1)
        t.setflags(write=False)
        object.__setattr__(self, "times", t)
        if len(t) != len(self.points) - 1:
            raise ValueError("a plan needs exactly one transfer time per hop")
        if len(t) < 1:
            raise ValueError("a plan needs at least one hop")

    @property
    def n_hops(self) -> int:
        return len(self.times)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.points])

    @property
    def speeds(self) -> np.ndarray:
        if self.hops is None:
            raise ValueError("plan has not been evaluated")
        return np.array([h.speed for h in self.hops])

    @property
    def evaluated(self) -> bool:
        return self.hops is not None

    def feasible(self, cone_limit: float = 45.0) -> bool:
        return self.hops is not None and all(h.feasible(cone_limit) for h in self.hops)

    def hop_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.positions, axis=0), axis=1)

    def to_dict(self) -> dict:
        d = {
            "positions": self.positions.tolist(),
            "facets": [p.facet for p in self.points],
            "times": self.times.tolist(),
            "delta": self.delta,
        }
        if self.hops is not None:
            d["speeds"] = self.speeds.tolist()
            d["hops"] = [asdict(h) for h in self.hops]
            d["f"] = self.f
            d["J"] = self.J
            d["feasible"] = self.feasible()
        return d


# ---------------------------------------------------------------------------
# cost
# ---------------------------------------------------------------------------

def hop_penalty(h: HopDiagnostics, cfg: PlannerConfig) -> float:
    """Weighted squared constraint violations plus the flat infeasibility price."""
    lim = cfg.cone_limit
    c1 = max(0.0, h.speed - h.escape_speed)
    c2 = max(0.0, (h.theta_launch - lim) / lim)
    c3 = max(0.0, (h.theta_land - lim) / lim)
    p = cfg.penalty_weight * (c1 * c1 + c2 * c2 + c3 * c3)
    if not h.converged or h.subsurface or math.isnan(h.theta_launch) or math.isnan(h.theta_land):
        p += cfg.infeasible_penalty
    return p


def plan_cost(hops: Sequence[HopDiagnostics], cfg: PlannerConfig) -> Tuple[float, float]:
    """(f, J) from stored hop diagnostics."""
    f = float(sum(h.speed for h in hops))
    return f, f + float(sum(hop_penalty(h, cfg) for h in hops))


def solve_leg(env: Environment, a: SurfacePoint, b: SurfacePoint, tau: float,
              cfg: PlannerConfig) -> HopDiagnostics:
    """Solve one hop; numerical failures come back as an unconverged hop."""
    try:
        res = solve_hop(env, a, b, tau, cfg.shooting)
    except (SingularSTM, SingularEvaluation, ValueError, ArithmeticError) as exc:
        log.debug("hop solve failed (tau=%.6g): %s", tau, exc)
        return HopDiagnostics((math.nan,) * 3, 0.0, 0.0, math.nan, math.nan, False, False,
                              math.inf, 0)
    tr = res.trajectory
    ve = escape_speed(env.field, res.launch)
    return HopDiagnostics(tuple(float(x) for x in res.v0), float(np.linalg.norm(res.v0)), ve,
                          float(tr.theta_launch), float(tr.theta_land), bool(res.converged),
                          bool(tr.subsurface), float(res.final_error), int(res.iterations))


def evaluate_plan(env: Environment, plan: HopPlan, cfg: PlannerConfig) -> HopPlan:
    """Solve every hop and fill speeds, diagnostics, f and J."""
    hops = tuple(solve_leg(env, plan.points[i], plan.points[i + 1], float(plan.times[i]), cfg)
                 for i in range(plan.n_hops))
    f, J = plan_cost(hops, cfg)
    return replace(plan, hops=hops, f=f, J=J)


# ---------------------------------------------------------------------------
# RRT sampler
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Tree:
    """Rooted tree of surface points; ``tau[i]`` is the time of the edge into vertex i.

    ``positions``/``facets`` hold vertex i at row i (vertex 0 is the root);
    :meth:`vertex` wraps a row as a :class:`SurfacePoint`.
    """

    model: ShapeModel
    root: SurfacePoint
    positions: np.ndarray
    facets: np.ndarray
    parent: np.ndarray
    tau: np.ndarray
    depth: np.ndarray

    def __len__(self) -> int:
        return len(self.positions)

    def vertex(self, i: int) -> SurfacePoint:
        if i == 0:
            return self.root
        return self.model.surface_point(self.positions[i], int(self.facets[i]))

    @property
    def vertices(self) -> List[SurfacePoint]:
        return [self.vertex(i) for i in range(len(self))]

    def path_to(self, i: int) -> List[int]:
        path = [i]
        while self.parent[path[-1]] >= 0:
            path.append(int(self.parent[path[-1]]))
        return path[::-1]


def draw_tau(rng: np.random.Generator, cfg: PlannerConfig) -> float:
    """Transfer time from N(mu_tau, sigma_tau^2), redrawn until >= 0.1 mu_tau."""
    while True:
        t = rng.normal(cfg.mu_tau, cfg.sigma_tau)
        if t >= cfg.min_tau:
            return float(t)


def grow_tree(model: ShapeModel, r_init: SurfacePoint, K: int, delta: float,
              rng: np.random.Generator, cfg: PlannerConfig) -> Tree:
    """K rounds of sample, nearest vertex (Euclidean), steer by at most ``delta``, project."""
    samples = np.ascontiguousarray(sample_surface(model, rng, size=K)[0])
    P, F, parent = K_.rrt_grow(np.asarray(r_init.position, dtype=float), samples,
                               float(delta), HOP_SLACK * float(delta), model.vertices,
                               model.faces, *model.bvh.arrays())
    F[0] = r_init.facet
    n = len(P)
    tau = np.full(n, math.nan)
    depth = np.zeros(n, dtype=np.int64)
    for i in range(1, n):
        tau[i] = draw_tau(rng, cfg)
        depth[i] = depth[parent[i]] + 1
    return Tree(model, r_init, P, F, parent, tau, depth)


def generate_random_sample(model: ShapeModel, r_init: SurfacePoint, r_goal: SurfacePoint,
                           cfg: PlannerConfig, rng: np.random.Generator,
                           delta: Optional[float] = None, K: Optional[int] = None) -> HopPlan:
    """One unevaluated plan from a fresh RRT rooted at ``r_init``.

    The path leads to the tree vertex that minimizes (hop count, gap to goal)
    among vertices within ``delta`` of the goal. A final hop to the goal is
    appended when that vertex is farther than the goal tolerance; otherwise the
    vertex is replaced by the goal itself.
    """
    delta = cfg.delta if delta is None else float(delta)
    K = cfg.K if K is None else int(K)
    tree = grow_tree(model, r_init, K, delta, rng, cfg)
    P = tree.positions
    gap = np.linalg.norm(P - r_goal.position, axis=1)
    eps = cfg.eps_goal
    best = None
    for i in np.flatnonzero(gap <= delta):
        hops = tree.depth[i] + (1 if gap[i] > eps else 0)
        if hops == 0:
            continue
        key = (hops, gap[i], i)
        if best is None or key < best:
            best = key
    if best is None:
        raise GoalUnreached(f"no tree vertex within {delta:.6g} m of the goal after {K} "
                            "iterations")
    i = best[2]
    idx = tree.path_to(i)
    points = [tree.vertex(j) for j in idx]
    times = [float(tree.tau[j]) for j in idx[1:]]
    if gap[i] > eps:
        points.append(r_goal)
        times.append(draw_tau(rng, cfg))
    else:
        points[-1] = r_goal
    return HopPlan(points, times, delta)


# ---------------------------------------------------------------------------
# variation operators
# ---------------------------------------------------------------------------

def _bridge(model: ShapeModel, a: SurfacePoint, b: SurfacePoint, tau: float, delta: float,
            depth: int):
    """Points strictly between a and b plus hop times so every gap is <= HOP_SLACK delta."""
    if np.linalg.norm(b.position - a.position) <= HOP_SLACK * delta:
        return [], [tau]
    if depth == 0:
        return None
    m = project_to_surface(model, 0.5 * (a.position + b.position))
    half = tau / math.sqrt(2.0)
    left = _bridge(model, a, m, half, delta, depth - 1)
    right = _bridge(model, m, b, half, delta, depth - 1)
    if left is None or right is None:
        return None
    return left[0] + [m] + right[0], left[1] + right[1]


def _splice(model: ShapeModel, head: Sequence[SurfacePoint], head_t: Sequence[float],
            tail: Sequence[SurfacePoint], tail_t: Sequence[float], delta: float,
            max_depth: int):
    """Join head[-1] -> tail[0] with tail_t[0] as the junction time; None if unbridgeable."""
    a, b = head[-1], tail[0]
    gap = float(np.linalg.norm(b.position - a.position))
    if gap < 1e-9:
        # junction collapses: drop the zero-length hop
        return list(head) + list(tail[1:]), list(head_t) + list(tail_t[1:])
    bridged = _bridge(model, a, b, tail_t[0], delta, max_depth)
    if bridged is None:
        return None
    mids, ts = bridged
    return list(head) + mids + list(tail), list(head_t) + ts + list(tail_t[1:])


def crossover(pa: HopPlan, pb: HopPlan, rng: np.random.Generator, model: ShapeModel,
              cfg: PlannerConfig, cuts: Optional[Tuple[int, int]] = None):
    """Single-point tail swap.

    With cut indices ``i_a`` in 1..n_a and ``i_b`` in 1..n_b the children are
    ``Pi_a[:i_a] + Pi_b[i_b:]`` and ``Pi_b[:i_b] + Pi_a[i_a:]``; the junction hop
    inherits the time of the hop it replaces in the tail parent. Junctions
    longer than ``HOP_SLACK * cfg.delta`` are bridged by projected midpoints; if that fails
    within ``cfg.bridge_depth`` levels both parents are returned unchanged.
    """
    if not (np.array_equal(pa.points[0].position, pb.points[0].position)
            and np.array_equal(pa.points[-1].position, pb.points[-1].position)):
        raise ValueError("crossover parents must share endpoints")
    if cuts is None:
        ia = int(rng.integers(1, pa.n_hops + 1))
        ib = int(rng.integers(1, pb.n_hops + 1))
    else:
        ia, ib = cuts
    Pa, Ta = list(pa.points), list(pa.times)
    Pb, Tb = list(pb.points), list(pb.times)
    ca = _splice(model, Pa[:ia], Ta[:ia - 1], Pb[ib:], Tb[ib - 1:], cfg.delta, cfg.bridge_depth)
    cb = _splice(model, Pb[:ib], Tb[:ib - 1], Pa[ia:], Ta[ia - 1:], cfg.delta, cfg.bridge_depth)
    if ca is None or cb is None or len(ca[1]) == 0 or len(cb[1]) == 0:
        return pa, pb
    return (HopPlan(ca[0], ca[1], pa.delta), HopPlan(cb[0], cb[1], pb.delta))


def mutate(plan: HopPlan, rng: np.random.Generator, model: ShapeModel,
           cfg: PlannerConfig) -> HopPlan:
    """Gaussian jitter of every transfer time and of interior positions (then projected)."""
    times = np.maximum(plan.times + rng.normal(0.0, cfg.mutation_time, plan.n_hops),
                       cfg.min_tau)
    points = list(plan.points)
    for i in range(1, len(points) - 1):
        q = points[i].position + rng.normal(0.0, cfg.mutation_position, 3)
        points[i] = project_to_surface(model, q)
    return HopPlan(points, times, plan.delta)


# ---------------------------------------------------------------------------
# evolutionary loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GenerationStats:
    generation: int
    mean_J: float
    best_J: float
    std_J: float
    best_f: float
    n_feasible: int


@dataclass(frozen=True, eq=False)
class OptimizeResult:
    """``best`` is the lowest-f feasible plan seen (falls back to the lowest J)."""

    best: HopPlan
    best_by_cost: HopPlan
    population: Tuple[HopPlan, ...]
    history: Tuple[GenerationStats, ...]

    @property
    def best_J_sequence(self) -> np.ndarray:
        return np.array([g.best_J for g in self.history])


def _random_plan(env: Environment, r_init, r_goal, cfg: PlannerConfig,
                 rng: np.random.Generator) -> Optional[HopPlan]:
    a, b = cfg.hop_bounds
    for _ in range(cfg.sample_attempts):
        delta = float(rng.uniform(a, b))
        try:
            return generate_random_sample(env.shape, r_init, r_goal, cfg, rng, delta)
        except GoalUnreached:
            continue
    return None


def _stats(gen: int, pop: Sequence[HopPlan], cfg: PlannerConfig) -> GenerationStats:
    J = np.array([p.J for p in pop])
    feas = [p for p in pop if p.feasible(cfg.cone_limit)]
    return GenerationStats(gen, float(J.mean()), float(J.min()), float(J.std()),
                           float(pop[0].f), len(feas))


def _rank(plans: Sequence[HopPlan]) -> List[HopPlan]:
    order = sorted(range(len(plans)), key=lambda i: (plans[i].J, i))
    return [plans[i] for i in order]


def optimize(env: Environment, r_init: SurfacePoint, r_goal: SurfacePoint,
             cfg: Optional[PlannerConfig] = None,
             rng: Optional[np.random.Generator] = None) -> OptimizeResult:
    """Evolve a population of RRT-seeded plans for ``cfg.generations`` generations.

    Each generation pairs the population for crossover, mutates every child,
    adds ``N/2`` fresh RRT samples, evaluates the newcomers and keeps the best
    ``N`` of parents and newcomers by J. Elitism makes best J non-increasing.
    """
    cfg = cfg or PlannerConfig()
    rng = rng if rng is not None else np.random.default_rng()
    model = env.shape
    N = cfg.population

    pop = []
    for _ in range(N):
        p = _random_plan(env, r_init, r_goal, cfg, rng)
        if p is not None:
            pop.append(evaluate_plan(env, p, cfg))
    if not pop:
        raise GoalUnreached("every initial RRT sample failed to reach the goal")
    pop = _rank(pop)[:N]
    history = [_stats(0, pop, cfg)]
    best_feasible = _best_feasible(pop, None, cfg)

    for gen in range(1, cfg.generations + 1):
        order = rng.permutation(len(pop))
        children = []
        for k in range(0, len(order) - 1, 2):
            ca, cb = crossover(pop[order[k]], pop[order[k + 1]], rng, model, cfg)
            children += [mutate(ca, rng, model, cfg), mutate(cb, rng, model, cfg)]
        if len(order) % 2:
            children.append(mutate(pop[order[-1]], rng, model, cfg))
        for _ in range(cfg.immigrants):
            p = _random_plan(env, r_init, r_goal, cfg, rng)
            if p is not None:
                children.append(p)
        newcomers = [evaluate_plan(env, c, cfg) for c in children]
        pop = _rank(list(pop) + newcomers)[:N]
        history.append(_stats(gen, pop, cfg))
        best_feasible = _best_feasible(pop, best_feasible, cfg)
        log.debug("generation %d: best J %.6g, mean J %.6g", gen, history[-1].best_J,
                  history[-1].mean_J)

    best = best_feasible if best_feasible is not None else pop[0]
    return OptimizeResult(best, pop[0], tuple(pop), tuple(history))


def _best_feasible(pop, current, cfg):
    for p in pop:
        if p.feasible(cfg.cone_limit) and (current is None or p.f < current.f):
            current = p
    return current


@dataclass(frozen=True, eq=False)
class WaypointResult:
    plan: HopPlan
    segments: Tuple[OptimizeResult, ...]


def concatenate(plans: Sequence[HopPlan]) -> HopPlan:
    """Join segment plans end to start; shared waypoints appear once; f and J add."""
    points = list(plans[0].points)
    times = list(plans[0].times)
    hops = list(plans[0].hops or ())
    for p in plans[1:]:
        if not np.array_equal(p.points[0].position, points[-1].position):
            raise ValueError("segments do not share their junction waypoint")
        points += list(p.points[1:])
        times += list(p.times)
        hops += list(p.hops or ())
    evaluated = all(p.hops is not None for p in plans)
    return HopPlan(points, times, max(p.delta for p in plans),
                   tuple(hops) if evaluated else None,
                   float(sum(p.f for p in plans)), float(sum(p.J for p in plans)))


def plan_with_waypoints(env: Environment, stops: Sequence[SurfacePoint],
                        cfg: Optional[PlannerConfig] = None,
                        rng: Optional[np.random.Generator] = None) -> WaypointResult:
    """Optimize each consecutive pair of ``[start, w1, ..., goal]`` and concatenate."""
    if len(stops) < 2:
        raise ValueError("need at least a start and a goal")
    cfg = cfg or PlannerConfig()
    rng = rng if rng is not None else np.random.default_rng()
    segments = []
    for k in range(len(stops) - 1):
        try:
            segments.append(optimize(env, stops[k], stops[k + 1], cfg, rng))
        except GoalUnreached as exc:
            raise GoalUnreached(f"segment {k}: {exc}") from exc
    return WaypointResult(concatenate([s.best for s in segments]), tuple(segments))
