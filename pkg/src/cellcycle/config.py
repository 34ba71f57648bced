"""Run configuration: JSON schema, defaults and model construction.

Units: times (T_B, t_end, ages, grid spacing) are in the model's time
unit; sizes x in the model's size unit; s = Q(x) is a time.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .boundary import ModelOperators
from .duration import DurationModel
from .errors import SchemaViolation
from .grid import CharGrid
from .growth import GrowthModel

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_LAMBDAS = {"type": "array", "items": _POS, "minItems": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_MEASURE = _obj({
    "kind": {"enum": ["delta", "uniform", "mixed"]},
    "at": {"type": "number", "minimum": 0, "maximum": 1},
    "weight": _POS,
    "atoms": {"type": "array", "items": _obj({"at": {"type": "number", "minimum": 0,
                                                       "maximum": 1},
                                               "weight": _POS}, ["at", "weight"])},
    "x": {"type": "array", "items": _NUM},
    "density": {"type": "array", "items": _NONNEG},
}, ["kind"])

SCHEMA = _obj({
    "model": _obj({
        "growth": _obj({
            "kind": {"enum": ["constant", "linear", "table"]},
            "k": _POS,
            "x_bar": _NONNEG,
            "table": {"type": "string"},
        }, ["kind"]),
        "psi": _obj({
            "kind": {"enum": ["exponential", "gamma", "lognormal", "uniform", "tabulated"]},
            "p": _POS, "shape": _POS, "rate": _POS, "mu": _NUM, "sigma": _POS,
            "a_lo": _NONNEG, "a_hi": _POS,
            "table": {"type": "string"},
        }, ["kind"]),
        "T_B": _NONNEG,
        "variant": {"enum": ["single_line", "bell_population"]},
    }, ["growth", "psi", "T_B"]),
    "grid": _obj({"h": _POS, "a_max": _POS, "s_min": _NUM, "s_max": _NUM},
                 ["h", "a_max", "s_min", "s_max"]),
    "run": _obj({
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "lambdas": _LAMBDAS,
        "t_end": _NONNEG,
        "snapshot_times": {"type": "array", "items": _NONNEG},
        "full_snapshots": {"type": "boolean"},
        "initial": _obj({"a0": _NONNEG, "s0": _NUM, "sigma": _POS,
                         "phase": {"enum": ["A", "B"]}, "csv": {"type": "string"}}),
        "n_cells": {"type": "integer", "minimum": 1},
        "event_cells": {"type": "integer", "minimum": 0},
        "branching_cap": {"type": "integer", "minimum": 1},
        "tol": _POS,
        "max_iter": {"type": "integer", "minimum": 1},
        "residual_limit": _POS,
        "interval": _obj({"measure": _MEASURE, "lambdas": _LAMBDAS,
                          "n_points": {"type": "integer", "minimum": 16},
                          "f": {"enum": ["sin_pi", "one", "x"]}}),
    }),
}, ["model", "grid"])

DEFAULTS = {
    "model": {"variant": "single_line"},
    "run": {
        "seed": 0,
        "lambdas": [0.5, 1.0, 2.0],
        "t_end": 1.0,
        "snapshot_times": [],
        "full_snapshots": False,
        "initial": {"a0": 0.5, "s0": None, "sigma": 0.25, "phase": "A"},
        "n_cells": 10_000,
        "event_cells": 10,
        "branching_cap": 20_000,
        "tol": 1e-10,
        "max_iter": 500,
        "residual_limit": 0.02,
        "interval": {"measure": {"kind": "uniform"}, "lambdas": [0.5, 1.0, 2.0],
                     "n_points": 10_000, "f": "sin_pi"},
    },
}


def _path_of(err) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "additionalProperties":
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(set(err.instance) - allowed)
        return ".".join(parts + extra[:1])
    if err.validator == "required":
        missing = err.message.split("'")[1] if "'" in err.message else ""
        return ".".join(parts + [missing])
    return ".".join(parts)


def validate(data: dict) -> None:
    """Raise SchemaViolation listing every (path, message) problem."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    violations = [(_path_of(e), e.message) for e in errors]
    model = data.get("model", {}) if isinstance(data, dict) else {}
    grid = data.get("grid", {}) if isinstance(data, dict) else {}
    if not violations:
        if grid["s_max"] <= grid["s_min"]:
            violations.append(("grid.s_max", "must exceed grid.s_min"))
        gk = model["growth"]["kind"]
        if gk in ("constant", "linear") and "k" not in model["growth"]:
            violations.append(("model.growth.k", "required for %s growth" % gk))
        if gk == "table" and "table" not in model["growth"]:
            violations.append(("model.growth.table", "required for table growth"))
        need = {"exponential": ["p"], "gamma": ["shape", "rate"], "lognormal": ["mu", "sigma"],
                "uniform": ["a_lo", "a_hi"], "tabulated": ["table"]}
        for key in need[model["psi"]["kind"]]:
            if key not in model["psi"]:
                violations.append(("model.psi." + key, "required for %s"
                                   % model["psi"]["kind"]))
    if violations:
        raise SchemaViolation(violations)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(data: dict, base_dir: Path | None = None) -> dict:
    """Validate, apply defaults and make table paths absolute."""
    validate(data)
    cfg = _merge(DEFAULTS, data)
    if cfg["run"]["initial"]["s0"] is None:
        g = cfg["grid"]
        cfg["run"]["initial"]["s0"] = g["s_min"] + 0.125 * (g["s_max"] - g["s_min"])
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    missing = []
    for path, holder, key in (("model.growth.table", cfg["model"]["growth"], "table"),
                              ("model.psi.table", cfg["model"]["psi"], "table"),
                              ("run.initial.csv", cfg["run"]["initial"], "csv")):
        p = holder.get(key)
        if p is not None:
            holder[key] = str((base_dir / p).resolve())
            if not Path(holder[key]).is_file():
                missing.append((path, "file %s not found" % holder[key]))
    if missing:
        raise SchemaViolation(missing)
    return cfg


def parse_config(path) -> dict:
    """Read, validate and default a JSON configuration file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation([("", "invalid JSON: %s" % exc)]) from exc
    if not isinstance(data, dict):
        raise SchemaViolation([("", "top level must be an object")])
    return resolve(data, path.parent)


def build_growth(section: dict) -> GrowthModel:
    kind = section["kind"]
    if kind == "constant":
        return GrowthModel.constant(section["k"], section.get("x_bar", 0.0))
    if kind == "linear":
        return GrowthModel.linear(section["k"], section.get("x_bar", 1.0))
    return GrowthModel.from_table(section["table"], section.get("x_bar"))


def build_duration(section: dict) -> DurationModel:
    kind = section["kind"]
    if kind == "exponential":
        return DurationModel.exponential(section["p"])
    if kind == "gamma":
        return DurationModel.gamma(section["shape"], section["rate"])
    if kind == "lognormal":
        return DurationModel.lognormal(section["mu"], section["sigma"])
    if kind == "uniform":
        return DurationModel.uniform(section["a_lo"], section["a_hi"])
    return DurationModel.from_csv(section["table"])


def build_operators(cfg: dict) -> ModelOperators:
    """Growth law, duration law, grid and variant from a resolved config."""
    m, g = cfg["model"], cfg["grid"]
    growth = build_growth(m["growth"])
    grid = CharGrid.build(growth, m["T_B"], g["h"], g["a_max"], g["s_min"], g["s_max"])
    return ModelOperators(grid, build_duration(m["psi"]), m["variant"])
