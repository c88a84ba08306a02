"""Command-line front end.

    asterhop <gravity|hop|plan|swarm|localize> --scenario FILE [--seed N] [--out DIR]
             [--threads N] [--recenter] [command options]

Exit codes: 0 success, 2 configuration error, 3 mesh error, 4 numerical
failure (including unconverged or infeasible results). Failures print a
one-line JSON object on stderr. Set ASTERHOP_LOG to a logging level name
(DEBUG, INFO, ...) for progress messages.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, List, Optional, Sequence

import numpy as np

from . import localization as loc
from . import planner as pl
from . import swarm as sw
from .dynamics import write_trajectory_csv, read_trajectory_csv
from .errors import (CoincidentRovers, ConfigError, DegenerateGeometry, GoalUnreached, MeshError,
                     NonConvergence)
from .gravity import escape_speed, evaluate_many, write_field_csv
from .lambert import solve_hop
from .mesh import SurfacePoint, project_to_surface
from .scenario import Scenario

log = logging.getLogger("asterhop")

EXIT_OK, EXIT_CONFIG, EXIT_MESH, EXIT_NUMERICAL = 0, 2, 3, 4


class _Failed(Exception):
    """Outputs were written but the result is unconverged or infeasible."""


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _jsonable(x: Any):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def write_json(path: Path, obj) -> None:
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")


def _header(sc: Scenario, seed: int) -> dict:
    return {"scenario": sc.resolved(seed), "seed": seed}


def _vec(value, name: str) -> np.ndarray:
    if value is None:
        raise ConfigError(f"missing {name}")
    a = np.asarray(value, dtype=float).reshape(-1)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} must be three finite numbers")
    return a


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _grid_points(grid: dict) -> np.ndarray:
    lo, hi = _vec(grid.get("lo"), "gravity.grid.lo"), _vec(grid.get("hi"), "gravity.grid.hi")
    n = grid.get("n")
    if not (isinstance(n, list) and len(n) == 3 and all(isinstance(k, int) and k >= 1
                                                         for k in n)):
        raise ConfigError("gravity.grid.n must be three positive integers")
    axes = [np.linspace(lo[i], hi[i], n[i]) for i in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])


def cmd_gravity(sc: Scenario, args, out: Path, seed: int) -> None:
    block = sc.block("gravity")
    if args.point:
        pts = np.array(args.point, dtype=float)
    elif "points" in block:
        pts = np.array([_vec(p, "gravity.points[]") for p in block["points"]]).reshape(-1, 3)
    elif "grid" in block:
        pts = _grid_points(block["grid"])
    else:
        raise ConfigError("gravity needs --point, gravity.points or gravity.grid")
    field = sc.field
    samples = evaluate_many(field, pts)
    write_field_csv(out / "field.csv", pts, samples)
    model = sc.model
    write_json(out / "gravity.json", {
        **_header(sc, seed),
        "mass": field.mass, "mu": field.mu, "volume": model.volume,
        "center_of_mass_offset": model.center_of_mass,
        "bounding_radius": model.bounding_radius, "n_faces": model.n_faces,
        "n_points": len(pts),
    })


def _surface_or_raw(sc: Scenario, p: np.ndarray, project: bool):
    return project_to_surface(sc.model, p) if project else p


def cmd_hop(sc: Scenario, args, out: Path, seed: int) -> None:
    block = sc.block("hop")
    r0 = _vec(args.r0 if args.r0 is not None else block.get("r0"), "hop r0")
    rf = _vec(args.rf if args.rf is not None else block.get("rf"), "hop rf")
    tau = args.tau if args.tau is not None else block.get("tau")
    if not isinstance(tau, (int, float)) or not tau > 0:
        raise ConfigError("hop tau must be a positive number")
    project = block.get("project", True)
    env = sc.environment()
    a = _surface_or_raw(sc, r0, project)
    b = _surface_or_raw(sc, rf, project)
    res = solve_hop(env, a, b, float(tau), sc.shooting_config())
    tr = res.trajectory
    write_trajectory_csv(out / "trajectory.csv", tr)
    ve = escape_speed(env.field, res.launch) if env.gravity else 0.0
    clean = bool(res.converged and not tr.subsurface)
    write_json(out / "hop.json", {
        **_header(sc, seed),
        "r0": res.launch, "rf": b.position if isinstance(b, SurfacePoint) else b,
        "tau": float(tau), "v0": res.v0, "v0_mag": float(np.linalg.norm(res.v0)),
        "vf": tr.velocities[-1], "iterations": res.iterations,
        "final_error": res.final_error, "errors": res.errors, "converged": res.converged,
        "subsurface": tr.subsurface, "outcome": tr.outcome.name,
        "theta_launch": tr.theta_launch, "theta_land": tr.theta_land,
        "escape_speed": ve, "ok": clean,
    })
    if not clean:
        raise _Failed("hop did not converge to a clean arc (best iterate written)")


def _plan_points(sc: Scenario, args) -> List[SurfacePoint]:
    block = sc.block("planner")
    start = _vec(args.start if args.start is not None else block.get("start"), "plan start")
    goal = _vec(args.goal if args.goal is not None else block.get("goal"), "plan goal")
    wps = args.waypoint if args.waypoint else block.get("waypoints", [])
    stops = [start] + [_vec(w, "plan waypoint") for w in wps] + [goal]
    return [project_to_surface(sc.model, p) for p in stops]


def cmd_plan(sc: Scenario, args, out: Path, seed: int) -> None:
    cfg = sc.planner_config()
    stops = _plan_points(sc, args)
    env = sc.environment()
    rng = np.random.default_rng(seed)
    result = pl.plan_with_waypoints(env, stops, cfg, rng)
    plan = result.plan
    with open(out / "generations.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment", "generation", "mean_J", "best_J", "std_J", "best_f",
                    "n_feasible"])
        for s, seg in enumerate(result.segments):
            for g in seg.history:
                w.writerow([s, g.generation, repr(g.mean_J), repr(g.best_J), repr(g.std_J),
                            repr(g.best_f), g.n_feasible])
    for k in range(plan.n_hops):
        res = solve_hop(env, plan.points[k], plan.points[k + 1], float(plan.times[k]),
                        cfg.shooting)
        write_trajectory_csv(out / f"hop_{k:03d}.csv", res.trajectory)
    write_json(out / "plan.json", {
        **_header(sc, seed), "plan": plan.to_dict(),
        "stops": [p.position for p in stops],
        "segment_hops": [seg.best.n_hops for seg in result.segments],
    })
    if not plan.feasible(cfg.cone_limit):
        raise _Failed("best plan violates a hop constraint (plan written)")


def cmd_swarm(sc: Scenario, args, out: Path, seed: int) -> None:
    cfg = sc.swarm_config()
    block = sc.block("swarm")
    mode = sw.Mode(block.get("mode", "kinematic"))
    positions = None
    if block.get("positions") is not None:
        positions = [project_to_surface(sc.model, _vec(p, "swarm.positions[]"))
                     for p in block["positions"]]
    env = sc.environment() if mode is sw.Mode.BALLISTIC else None
    hist = sw.simulate(sc.model, cfg, seed, positions, mode, env, sc.shooting_config())
    sw.write_positions_csv(out / "positions.csv", hist)
    sw.write_links_csv(out / "links.csv", hist)
    sw.write_metrics_csv(out / "metrics.csv", hist)
    final = hist.metrics[-1]
    write_json(out / "swarm.json", {
        **_header(sc, seed), "final": final.__dict__,
        "min_degree_after_first_step": min((m.min_degree for m in hist.metrics[1:]),
                                           default=final.min_degree),
    })


def cmd_localize(sc: Scenario, args, out: Path, seed: int) -> None:
    block = sc.block("localize")
    truth = args.truth if args.truth is not None else block.get("truth")
    if truth is None:
        raise ConfigError("localize needs a truth trajectory (--truth or localize.truth)")
    path = Path(truth) if args.truth is not None else sc.path(truth)
    if not path.is_file():
        raise ConfigError(f"truth trajectory {str(path)!r} does not exist")
    try:
        t, P, _ = read_trajectory_csv(path)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"cannot parse truth trajectory {str(path)!r}: {exc}") from exc
    mast = float(block.get("mast", 0.0))
    if mast:
        P = P + mast * P / np.linalg.norm(P, axis=1, keepdims=True)
    cfg = sc.scan_config()
    rng = np.random.default_rng(seed)
    scans = loc.scan_trajectory(sc.scan_model(), t, P, cfg, rng)
    est = loc.chain_poses(scans, init=scans[0].pose,
                          max_iter=int(block.get("max_iter", 60)),
                          tol=float(block.get("tol", 1e-10)),
                          max_correspondence=float(block.get("max_correspondence", math.inf)))
    times = [s.time for s in scans]
    loc.write_pose_csv(out / "poses.csv", times, est)
    loc.write_pose_csv(out / "truth_poses.csv", times, [s.pose for s in scans])
    report = loc.drift([s.pose for s in scans], est)
    write_json(out / "drift.json", {**_header(sc, seed), **report, "n_scans": len(scans)})


COMMANDS = {
    "gravity": cmd_gravity,
    "hop": cmd_hop,
    "plan": cmd_plan,
    "swarm": cmd_swarm,
    "localize": cmd_localize,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asterhop", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, help="scenario JSON file")
    common.add_argument("--seed", type=_seed, default=None, help="override the scenario seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--threads", type=int, default=None, help="worker thread cap")
    common.add_argument("--recenter", action="store_true",
                        help="shift the shape so its center of mass is the origin")
    vec = dict(nargs=3, type=float, metavar=("X", "Y", "Z"))

    g = sub.add_parser("gravity", parents=[common], help="evaluate the gravity field")
    g.add_argument("--point", action="append", help="field point (repeatable)", **vec)
    h = sub.add_parser("hop", parents=[common], help="solve a single hop")
    h.add_argument("--r0", help="launch point", **vec)
    h.add_argument("--rf", help="target point", **vec)
    h.add_argument("--tau", type=float, help="transfer time, s")
    pp = sub.add_parser("plan", parents=[common], help="optimize a multi-hop route")
    pp.add_argument("--start", **vec)
    pp.add_argument("--goal", **vec)
    pp.add_argument("--waypoint", action="append", help="intermediate stop (repeatable)", **vec)
    sub.add_parser("swarm", parents=[common], help="simulate swarm spreading")
    lz = sub.add_parser("localize", parents=[common], help="scan-matching drift along a path")
    lz.add_argument("--truth", help="truth trajectory CSV (t,x,y,z,...)")
    return p


def _configure_logging() -> None:
    level = os.environ.get("ASTERHOP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _set_threads(n: Optional[int]) -> None:
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _fail(code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                 "exit_code": code}) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        _set_threads(args.threads)
        sc = Scenario.load(args.scenario)
        seed = sc.seed if args.seed is None else args.seed
        if args.recenter:
            sc.data["shape"] = {**sc.data["shape"], "recenter": True}
        out = Path(args.out) if args.out is not None else sc.path(sc.data["output"])
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {str(out)!r}: "
                              f"{exc.strerror}") from exc
        sc.model  # load and validate the mesh before any work
        COMMANDS[args.command](sc, args, out, seed)
    except MeshError as exc:
        return _fail(EXIT_MESH, exc)
    except (_Failed, NonConvergence, GoalUnreached, DegenerateGeometry, CoincidentRovers,
            ArithmeticError) as exc:
        return _fail(EXIT_NUMERICAL, exc)
    except (ConfigError, ValueError, OSError) as exc:
        return _fail(EXIT_CONFIG, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
