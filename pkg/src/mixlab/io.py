"""JSON and CSV persistence, plus the JSON schemas used to validate configs.

Floats go through :func:`json.dumps`, which writes the shortest repr that
round-trips exactly.  Non-finite values are written as ``Infinity``/``NaN``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ContractViolation
from .estimators import FitConfig, FitReport
from .model import ComponentFamily, MixingDistribution, Sample

NUMBER = {"type": "number"}
FAMILY_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["poisson", "normal_equal", "normal_free"]},
        "sigma2": {"type": ["number", "null"]},
    },
    "required": ["kind"],
    "additionalProperties": False,
}
MIXING_SCHEMA = {
    "type": "object",
    "properties": {
        "atoms": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {"mean": NUMBER, "scale": {"type": ["number", "null"]}},
                "required": ["mean"],
                "additionalProperties": False,
            },
        },
        "weights": {"type": "array", "minItems": 1, "items": NUMBER},
        "mass": {"type": ["number", "null"]},
    },
    "required": ["atoms", "weights"],
    "additionalProperties": False,
}
PENALTY_SCHEMA = {
    "type": ["object", "null"],
    "properties": {
        "scale_anchor": {"type": ["number", "null"]},
        "form": {"enum": ["inverse_gamma", "log_only"]},
        "strength_mode": {"enum": ["per_n"]},
    },
    "additionalProperties": False,
}
FIT_SCHEMA = {
    "type": "object",
    "properties": {
        "family": FAMILY_SCHEMA,
        "m": {"type": "integer", "minimum": 1},
        "mode": {"enum": ["plain", "penalized", "constrained", "equal_variance"]},
        "penalty": PENALTY_SCHEMA,
        "sigma_floor": {"type": ["number", "null"]},
        "max_iter": {"type": "integer", "minimum": 1},
        "tol": NUMBER,
        "restarts": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
    },
    "required": ["family", "m"],
    "additionalProperties": False,
}
SAMPLE_SCHEMA = {
    "type": "object",
    "properties": {
        "family": FAMILY_SCHEMA,
        "G": MIXING_SCHEMA,
        "n": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
    },
    "required": ["family", "G", "n", "seed"],
    "additionalProperties": False,
}
NPMLE_SCHEMA = {
    "type": "object",
    "properties": {
        "family": FAMILY_SCHEMA,
        "grid": {"type": ["array", "null"], "items": NUMBER},
        "grid_size": {"type": "integer", "minimum": 1},
        "tol_grad": NUMBER,
    },
    "required": ["family"],
    "additionalProperties": False,
}
EXPERIMENT_SCHEMA = {
    "type": "object",
    "properties": {
        "family": FAMILY_SCHEMA,
        "G_star": MIXING_SCHEMA,
        "n_grid": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
        "reps": {"type": "integer", "minimum": 1},
        "fit": FIT_SCHEMA,
        "master_seed": {"type": "integer", "minimum": 0},
        "output_path": {"type": ["string", "null"]},
        "workers": {"type": "integer", "minimum": 1},
        "k_list": {"type": "array", "minItems": 1, "items": NUMBER},
    },
    "required": ["family", "G_star", "n_grid", "reps", "fit"],
    "additionalProperties": False,
}
SCHEMAS = {
    "mixing": MIXING_SCHEMA,
    "sample": SAMPLE_SCHEMA,
    "fit": FIT_SCHEMA,
    "npmle": NPMLE_SCHEMA,
    "experiment": EXPERIMENT_SCHEMA,
}


class ConfigError(ContractViolation):
    """A configuration file is unreadable, malformed or fails its schema."""


def load_json(path, schema: dict | None = None):
    """Parse ``path`` and validate it; errors name the file and the line."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from exc
    if schema is not None:
        validate(data, schema, path)
    return data


def validate(data, schema: dict, source="config"):
    err = jsonschema.exceptions.best_match(jsonschema.Draft7Validator(schema).iter_errors(data))
    if err is not None:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{source}: schema violation at {where}: {err.message}")


def dump_json(obj, path=None) -> str:
    text = json.dumps(obj, indent=2, default=_default)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")
    return text


def _default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def save_mixing(G: MixingDistribution, path):
    dump_json(G.to_dict(), path)


def load_mixing(path) -> MixingDistribution:
    return MixingDistribution.from_dict(load_json(path, MIXING_SCHEMA))


def save_fit_config(cfg: FitConfig, path):
    dump_json(cfg.to_dict(), path)


def load_fit_config(path) -> FitConfig:
    return FitConfig.from_dict(load_json(path, FIT_SCHEMA))


def save_fit_report(report: FitReport, path):
    dump_json(report.to_dict(), path)


def fit_report_from_dict(d) -> FitReport:
    return FitReport(
        estimate=MixingDistribution.from_dict(d["estimate"]),
        family=ComponentFamily.from_dict(d["family"]),
        objective_trace=list(d["objective_trace"]),
        converged=d["converged"],
        iterations=d["iterations"],
        best_of_restarts=d["best_of_restarts"],
        loglik=d["loglik"],
        penalty_value=d["penalty_value"],
        sigma2=d["sigma2"],
        degenerate=d["degenerate"],
        warnings=list(d["warnings"]),
        restart_objectives=list(d["restart_objectives"]),
        failures=list(d["failures"]),
    )


def load_fit_report(path) -> FitReport:
    return fit_report_from_dict(load_json(path))


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def save_sample(sample: Sample, path):
    """Write ``value`` CSV plus ``<stem>.meta.json`` with seed and generator."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value"])
        for v in sample.values:
            w.writerow([repr(float(v))])
    prov = sample.provenance or {}
    dump_json({"seed": sample.seed, "family": prov.get("family"), "G": prov.get("G")},
              meta_path(path))


def load_sample(path) -> Sample:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["value"]:
            raise ConfigError(f"{path}:1: expected header 'value', got {header}")
        values = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                values.append(float(row[0]))
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"{path}:{lineno}: not a number: {row}") from exc
    seed, prov = None, None
    meta = meta_path(path)
    if meta.exists():
        m = load_json(meta)
        seed = m.get("seed")
        prov = {"family": m.get("family"), "G": m.get("G")}
    return Sample(np.array(values), seed=seed, provenance=prov)
