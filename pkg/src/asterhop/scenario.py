"""Scenario files: a versioned JSON document that fully determines a CLI run.

Every block maps onto one configuration dataclass. Unknown keys anywhere are
errors, and :meth:`Scenario.resolved` returns the document with every default
filled in so that it can be saved next to the outputs and loaded again.
"""

from __future__ import annotations

import dataclasses
import functools
import inspect
import json
import os
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from . import shapes
from .dynamics import Environment
from .errors import ConfigError, MeshError
from .gravity import G_DEFAULT, GravityField, build_field
from .lambert import ShootingConfig
from .localization import ScanConfig
from .mesh import ShapeModel, load_shape
from .planner import PlannerConfig
from .swarm import Mode, SwarmConfig

SCHEMA_VERSION = 1

BUILTIN_SHAPES = {
    "tetrahedron": shapes.tetrahedron,
    "box": shapes.box,
    "cube": shapes.cube,
    "icosphere": shapes.icosphere,
    "ellipsoid": shapes.ellipsoid,
    "lumpy_asteroid": shapes.lumpy_asteroid,
}

_TOP = {"schema_version", "shape", "density", "omega", "G", "gravity_enabled", "seed",
        "output", "gravity", "hop", "shooting", "planner", "swarm", "scan", "localize"}
_SHAPE = {"path", "format", "scale", "builtin", "params", "recenter"}
_GRAVITY = {"points", "grid"}
_GRID = {"lo", "hi", "n"}
_HOP = {"r0", "rf", "tau", "project"}
_PLAN_EXTRA = {"start", "goal", "waypoints"}
_SWARM_EXTRA = {"mode", "positions"}
_LOCALIZE = {"truth", "scan_shape", "mast", "max_correspondence", "max_iter", "tol"}

_TOP_DEFAULTS = {"density": 1900.0, "omega": [0.0, 0.0, 0.0], "G": G_DEFAULT,
                 "gravity_enabled": True, "seed": 0, "output": "asterhop_out"}


def _check_keys(block: Dict[str, Any], allowed, where: str) -> None:
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be a JSON object")
    extra = sorted(set(block) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _vec3(value, where: str) -> list:
    try:
        a = np.asarray(value, dtype=float).reshape(3)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where} must be a 3-vector") from exc
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"{where} must be finite")
    return [float(x) for x in a]


def _build(cls, block: Dict[str, Any], where: str, extra=()):
    names = {f.name for f in dataclasses.fields(cls)}
    _check_keys(block, names | set(extra), where)
    kwargs = {k: v for k, v in block.items() if k in names}
    for k, v in list(kwargs.items()):
        if isinstance(v, list):
            kwargs[k] = tuple(v)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _plain(d):
    """JSON-ready copy: tuples to lists, numpy scalars to Python numbers."""
    if isinstance(d, dict):
        return {k: _plain(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_plain(v) for v in d]
    if isinstance(d, np.generic):
        return d.item()
    return d


class Scenario:
    """A parsed scenario; ``base`` resolves relative file paths."""

    def __init__(self, data: Dict[str, Any], base: Path = Path(".")):
        _check_keys(data, _TOP, "scenario")
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got "
                              f"{data.get('schema_version')!r}")
        if "shape" not in data:
            raise ConfigError("scenario needs a 'shape' block")
        _check_keys(data["shape"], _SHAPE, "shape")
        self.data = {**_TOP_DEFAULTS, **data}
        self.base = Path(base)
        d = self.data
        if not isinstance(d["density"], (int, float)) or not d["density"] > 0:
            raise ConfigError("density must be a positive number")
        if not isinstance(d["G"], (int, float)) or not d["G"] > 0:
            raise ConfigError("G must be a positive number")
        d["omega"] = _vec3(d["omega"], "omega")
        seed = d["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not isinstance(d["gravity_enabled"], bool):
            raise ConfigError("gravity_enabled must be true or false")
        # validate every present block up front
        self.shooting_config()
        if "planner" in d:
            self.planner_config()
        if "swarm" in d:
            self.swarm_config()
        if "scan" in d:
            self.scan_config()
        for name, keys in (("gravity", _GRAVITY), ("hop", _HOP), ("localize", _LOCALIZE)):
            if name in d:
                _check_keys(d[name], keys, name)

    # -- construction -----------------------------------------------------------

    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read scenario {str(path)!r}: {exc.strerror}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scenario {str(path)!r} is not valid JSON: {exc}") from exc
        return cls(data, path.parent)

    def path(self, p) -> Path:
        p = Path(os.path.expanduser(str(p)))
        return p if p.is_absolute() else self.base / p

    # -- accessors --------------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def block(self, name: str) -> Dict[str, Any]:
        return dict(self.data.get(name) or {})

    def _shape_from(self, block: Dict[str, Any], where: str) -> ShapeModel:
        _check_keys(block, _SHAPE, where)
        if ("path" in block) == ("builtin" in block):
            raise ConfigError(f"{where} needs exactly one of 'path' or 'builtin'")
        scale = block.get("scale", 1.0)
        if not isinstance(scale, (int, float)) or not scale > 0:
            raise ConfigError(f"{where}.scale must be a positive number")
        if "path" in block:
            try:
                model = load_shape(self.path(block["path"]), format=block.get("format", "OBJ"))
            except OSError as exc:
                raise MeshError(f"cannot read shape {str(block['path'])!r}: "
                                f"{exc.strerror}") from exc
        else:
            fn = BUILTIN_SHAPES.get(block["builtin"])
            if fn is None:
                raise ConfigError(f"unknown builtin shape {block['builtin']!r}; choose from "
                                  f"{', '.join(sorted(BUILTIN_SHAPES))}")
            params = block.get("params", {})
            _check_keys(params, inspect.signature(fn).parameters, f"{where}.params")
            try:
                model = fn(**params)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{where}.params: {exc}") from exc
        if scale != 1.0:
            model = model.scaled(float(scale))
        if block.get("recenter", False):
            model = model.recentered()
        return model

    @functools.cached_property
    def model(self) -> ShapeModel:
        return self._shape_from(self.data["shape"], "shape")

    @functools.cached_property
    def field(self) -> GravityField:
        return build_field(self.model, float(self.data["density"]), float(self.data["G"]))

    def environment(self) -> Environment:
        return Environment(self.field, np.array(self.data["omega"]),
                           gravity=self.data["gravity_enabled"])

    def scan_model(self) -> ShapeModel:
        block = self.block("localize").get("scan_shape")
        return self.model if block is None else self._shape_from(block, "localize.scan_shape")

    def shooting_config(self) -> ShootingConfig:
        return _build(ShootingConfig, self.block("shooting"), "shooting")

    def planner_config(self) -> PlannerConfig:
        block = self.block("planner")
        if "shooting" in block:
            block["shooting"] = _build(ShootingConfig, block["shooting"], "planner.shooting")
        return _build(PlannerConfig, block, "planner", _PLAN_EXTRA)

    def swarm_config(self) -> SwarmConfig:
        block = self.block("swarm")
        if "mode" in block and block["mode"] not in [m.value for m in Mode]:
            raise ConfigError(f"swarm.mode must be one of {[m.value for m in Mode]}")
        return _build(SwarmConfig, block, "swarm", _SWARM_EXTRA)

    def scan_config(self) -> ScanConfig:
        return _build(ScanConfig, self.block("scan"), "scan")

    # -- round trip -------------------------------------------------------------

    def resolved(self, seed: Optional[int] = None) -> Dict[str, Any]:
        """The scenario with defaults filled in (and ``seed`` overridden if given)."""
        d = json.loads(json.dumps(self.data))
        if seed is not None:
            d["seed"] = int(seed)
        d["shooting"] = _plain(dataclasses.asdict(self.shooting_config()))
        if "planner" in d:
            extra = {k: d["planner"][k] for k in _PLAN_EXTRA if k in d["planner"]}
            d["planner"] = {**_plain(self.planner_config().to_dict()), **extra}
        if "swarm" in d:
            extra = {k: d["swarm"][k] for k in _SWARM_EXTRA if k in d["swarm"]}
            d["swarm"] = {**_plain(self.swarm_config().to_dict()), **extra}
        if "scan" in d:
            d["scan"] = _plain(dataclasses.asdict(self.scan_config()))
        return d
