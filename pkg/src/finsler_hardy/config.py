"""Run configuration: TOML file, schema with defaults, validation naming the offending key."""
from __future__ import annotations

import copy
import hashlib
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .calculus import TestFunction
from .distance import PoleError, PoleSet
from .grid import GridDomain
from .structures import FAMILIES, FinslerStructure, StructureError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

WHICH = ("multipolar", "bipolar", "riemannian", "flat", "pointwise", "all")


class ConfigError(ValueError):
    """Schema or precondition violation; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


# (kind, default); a None default marks an optional entry
SCHEMA = {
    "seed": ("int", 0),
    "threads": ("int", 1),
    "out": ("str", "finsler_hardy_run"),
    "which": ("str", "all"),
    "structure": {
        "family": ("str", "euclidean"),
        "dim": ("int", 3),
        "A": ("matrix", None),
        "b": ("vector", None),
        "conformal": ("float", 0.0),
        "funk_margin": ("float", 1e-3),
    },
    "grid": {
        "lo": ("float", -0.75),
        "hi": ("float", 0.75),
        "nodes": ("int", 97),
        "coarse_nodes": ("int", 65),
        "reduction_nodes": ("ints", [49, 73, 97]),
    },
    "poles": {
        "points": ("points", [[0.34, 0.0, 0.0], [-0.17, 0.29, 0.02]]),
    },
    "test_function": {
        "center": ("vector", None),
        "radius": ("float", 0.72),
        "pole_order": ("int", 2),
        "eps_cells": ("int", 8),
        "ladder": ("ints", [16, 8, 4]),
    },
    "constants": {
        "domain_samples": ("int", 4096),
        "direction_samples": ("int", 256),
        "refine": ("int", 8),
        "bracket": ("float", 1e-2),
        "radius": ("float?", None),
        "sweep_radii": ("floats", [0.5, 0.9, 0.99, 0.999]),
    },
    "density": {
        "mc_samples": ("int", 200_000),
    },
    "pointwise": {
        "samples": ("int", 100_000),
        "tolerance": ("float", 1e-8),
        "radius": ("float?", None),
    },
    "tolerances": {
        "eps_variation": ("float", 0.2),
        "square_agreement": ("float", 0.01),
        "nodewise_fraction": ("float", 0.99),
        "reduction_gap": ("float", 1e-2),
        "richardson_order": ("float", 1.0),
        "div_order": ("float", 0.9),
    },
}


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check(kind, v, key):
    bad = lambda what: ConfigError(key, f"expected {what}, got {type(v).__name__} {v!r}")
    if kind == "int":
        if not isinstance(v, int) or isinstance(v, bool):
            raise bad("an integer")
        return v
    if kind in ("float", "float?"):
        if v is None and kind == "float?":
            return None
        if not _is_num(v):
            raise bad("a number")
        return float(v)
    if kind == "str":
        if not isinstance(v, str):
            raise bad("a string")
        return v
    if kind in ("vector", "floats"):
        if not isinstance(v, list) or not all(_is_num(c) for c in v):
            raise bad("a list of numbers")
        return [float(c) for c in v]
    if kind == "ints":
        if not isinstance(v, list) or not all(isinstance(c, int) and not isinstance(c, bool) for c in v):
            raise bad("a list of integers")
        return list(v)
    if kind == "matrix":
        if isinstance(v, list) and all(_is_num(c) for c in v):
            return [float(c) for c in v]
        if isinstance(v, list) and all(isinstance(r, list) and all(_is_num(c) for c in r) for r in v):
            return [[float(c) for c in r] for r in v]
        raise bad("a list of numbers (diagonal) or a list of rows")
    if kind == "points":
        if not isinstance(v, list) or not all(
                isinstance(r, list) and all(_is_num(c) for c in r) for r in v):
            raise bad("a list of points")
        return [[float(c) for c in r] for r in v]
    raise AssertionError(kind)


def _resolve(raw, schema, prefix=""):
    if not isinstance(raw, dict):
        raise ConfigError(prefix.rstrip("."), "expected a table")
    for k in raw:
        if k not in schema:
            raise ConfigError(prefix + k, "unknown key")
    out = {}
    for k, spec in schema.items():
        key = prefix + k
        if isinstance(spec, dict):
            out[k] = _resolve(raw.get(k, {}), spec, key + ".")
        else:
            kind, default = spec
            if k not in raw or (raw[k] is None and default is None):
                out[k] = copy.deepcopy(default)
            else:
                out[k] = _check(kind, raw[k], key)
    return out


class RunConfig:
    """A validated configuration; every entry has a default and the seed is always recorded."""

    def __init__(self, raw: dict | None = None, source: str | None = None):
        self.data = _resolve(raw or {}, SCHEMA)
        self.source = source
        self._semantic_checks()

    # loading ------------------------------------------------------------

    @classmethod
    def from_toml(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = tomllib.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError("", f"config file {path} not found") from None
        except tomllib.TOMLDecodeError as e:
            raise ConfigError("", f"malformed TOML in {path}: {e}") from None
        return cls(raw, str(path))

    @classmethod
    def from_scenario(cls, name: str) -> "RunConfig":
        res = resources.files("finsler_hardy") / "scenarios" / f"{name}.toml"
        if not res.is_file():
            raise ConfigError("scenario", f"no bundled scenario named {name!r}; "
                                          f"available: {', '.join(bundled_scenarios())}")
        return cls(tomllib.loads(res.read_text()), f"scenario:{name}")

    def with_overrides(self, seed=None, grid=None, threads=None, out=None, which=None) -> "RunConfig":
        d = copy.deepcopy(self.data)
        if seed is not None:
            d["seed"] = seed
        if threads is not None:
            d["threads"] = threads
        if out is not None:
            d["out"] = str(out)
        if which is not None:
            d["which"] = which
        if grid is not None:
            d["grid"]["nodes"] = grid
            d["grid"]["coarse_nodes"] = max(3, (2 * (grid - 1)) // 3 + 1)
            # same ratios as the default 49/73/97 ladder
            d["grid"]["reduction_nodes"] = [(grid - 1) // 2 + 1, 3 * (grid - 1) // 4 + 1, grid]
        return RunConfig(d, self.source)

    # validation ---------------------------------------------------------

    def _semantic_checks(self):
        d = self.data
        s = d["structure"]
        if s["family"] not in FAMILIES:
            raise ConfigError("structure.family", f"must be one of {', '.join(FAMILIES)}")
        if d["threads"] < 1:
            raise ConfigError("threads", "must be >= 1")
        if d["which"] not in WHICH:
            raise ConfigError("which", f"must be one of {', '.join(WHICH)}")
        try:
            S = self.structure()
        except StructureError as e:
            raise ConfigError("structure", str(e)) from None
        g = d["grid"]
        if g["nodes"] < 3 or g["coarse_nodes"] < 3:
            raise ConfigError("grid.nodes", "need at least 3 nodes per axis")
        if g["coarse_nodes"] >= g["nodes"]:
            raise ConfigError("grid.coarse_nodes", "must be smaller than grid.nodes")
        if g["hi"] <= g["lo"]:
            raise ConfigError("grid.hi", "must exceed grid.lo")
        pts = d["poles"]["points"]
        if any(len(p) != S.dim for p in pts):
            raise ConfigError("poles.points", f"every pole needs {S.dim} coordinates")
        try:
            PoleSet(np.asarray(pts, float))
        except PoleError as e:
            raise ConfigError("poles.points", str(e)) from None
        if any(not (g["lo"] < c < g["hi"]) for p in pts for c in p):
            raise ConfigError("poles.points", "poles must lie inside the grid box")
        tf = d["test_function"]
        if tf["radius"] <= 0:
            raise ConfigError("test_function.radius", "must be positive")
        if tf["center"] is not None and len(tf["center"]) != S.dim:
            raise ConfigError("test_function.center", f"needs {S.dim} coordinates")
        if tf["pole_order"] < 0:
            raise ConfigError("test_function.pole_order", "must be >= 0")
        if any(k <= 2 for k in tf["ladder"]) or tf["eps_cells"] <= 2:
            raise ConfigError("test_function.ladder", "excision radii must exceed 2 cells")
        for key in ("domain_samples", "direction_samples"):
            if d["constants"][key] < 1:
                raise ConfigError(f"constants.{key}", "must be >= 1")
        if d["pointwise"]["samples"] < 1:
            raise ConfigError("pointwise.samples", "must be >= 1")

    # products -----------------------------------------------------------

    def structure(self) -> FinslerStructure:
        s = self.data["structure"]
        g = self.data["grid"]
        rec = dict(s)
        rec["lo"], rec["hi"] = g["lo"], g["hi"]
        rec = {k: v for k, v in rec.items() if v is not None}
        if s["family"] == "funk":
            return FinslerStructure.funk(s["dim"], s["funk_margin"])
        return FinslerStructure.from_config(rec)

    def grid(self, nodes: int | None = None) -> GridDomain:
        g = self.data["grid"]
        return GridDomain.cube(self.data["structure"]["dim"], nodes or g["nodes"], g["lo"], g["hi"])

    def poles(self) -> list:
        return [tuple(p) for p in self.data["poles"]["points"]]

    def test_function(self) -> TestFunction:
        tf = self.data["test_function"]
        c = tf["center"] or [(self.data["grid"]["lo"] + self.data["grid"]["hi"]) / 2] * \
            self.data["structure"]["dim"]
        return TestFunction(tuple(c), tf["radius"], pole_order=tf["pole_order"])

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def hash(self) -> str:
        """SHA-256 of the canonical JSON of the resolved config, thread count excluded."""
        d = self.to_dict()
        d.pop("threads", None)
        d.pop("out", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def bundled_scenarios() -> list[str]:
    root = resources.files("finsler_hardy") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))
