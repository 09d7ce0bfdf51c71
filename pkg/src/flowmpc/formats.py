"""Output formats and configuration files.

JSON documents are written with sorted keys and a trailing newline so that
seeded runs are byte-identical; anything wall-clock related goes to a
separate ``timing.json``. CSV files follow RFC 4180 (CRLF line endings,
minimal quoting).
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import math
from dataclasses import asdict, fields
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .samplers import METHODS, SamplerConfig
from .schedulers import available_schedulers
from .solvers import METHODS as SOLVER_METHODS, SolverConfig
from .tasks import TASKS
from .velocity import ACTIVATIONS, TrainConfig

SCHEMA_VERSION = 1
FLOAT_DIGITS = 12


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files("flowmpc").joinpath("schemas", f"{name}.schema.json").read_text("utf-8")
    return json.loads(text)


def validate(doc, name: str) -> None:
    jsonschema.validate(doc, load_schema(name))


def clean(obj):
    """Plain JSON values: numpy scalars/arrays converted, non-finite floats to ``None``."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return round(v, FLOAT_DIGITS) if math.isfinite(v) else None
    return obj


def dumps(doc) -> str:
    return json.dumps(clean(doc), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def header(name: str) -> dict:
    return {"schema": f"flowmpc/{name}", "schema_version": SCHEMA_VERSION}


def write_json(path, doc, schema: str | None = None) -> dict:
    doc = clean(doc)
    if schema is not None:
        validate(doc, schema)
    Path(path).write_text(dumps(doc), encoding="utf-8")
    return doc


def write_jsonl(path, records, schema: str | None = None) -> None:
    lines = []
    for rec in records:
        rec = clean(rec)
        if schema is not None:
            validate(rec, schema)
        lines.append(json.dumps(rec, sort_keys=True, ensure_ascii=False))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text("utf-8").splitlines() if line]


def config_hash(config: dict) -> str:
    text = json.dumps(clean(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(round(v, FLOAT_DIGITS)) if math.isfinite(v) else ""
    return v


def write_csv(path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# INI configuration
# ---------------------------------------------------------------------------

def _as_int(v):
    return int(v)


def _as_opt_int(v):
    return None if v.strip().lower() in ("", "none") else int(v)


def _as_float(v):
    return float(v)


def _as_bool(v):
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _as_widths(v):
    return tuple(int(p) for p in v.replace(",", " ").split())


def _choice(options):
    def conv(v):
        v = v.strip()
        if v not in options:
            raise ValueError(f"expected one of {sorted(options)}")
        return v
    return conv


CONFIG_KEYS = {
    "task": {"name": _choice(TASKS)},
    "train": {"hidden": _as_widths, "activation": _choice(ACTIVATIONS), "steps": _as_int,
              "batch_size": _as_int, "learning_rate": _as_float, "seed": _as_int,
              "pool_size": _as_int, "scheduler": _choice(available_schedulers())},
    "sampler": {"method": _choice(METHODS), "n_steps": _as_opt_int, "lambda_oc": _as_float,
                "activation": _as_float, "scheduler": _choice(available_schedulers()),
                "guidance_step": _as_float, "penalty_weight": _as_float,
                "relaxed_iters": _as_int, "relaxed_inner": _as_int,
                "guidance_with_projection": _as_bool, "warm_start": _as_bool},
    "solver": {"method": _choice(SOLVER_METHODS), "max_outer": _as_int, "max_inner": _as_int,
               "growth": _as_float, "update_every": _as_opt_int, "feas_tol": _as_float,
               "inner_tol": _as_float, "initial_penalty": lambda v: None if v.strip().lower() in ("", "none") else float(v),
               "max_penalty": _as_float, "pg_max_iter": _as_int, "memory": _as_int,
               "inner": _choice(("auto", "lbfgs", "newton"))},
    "output": {"dir": str},
}


def parse_config(text: str) -> dict:
    """Parse INI text into ``{section: {key: typed value}}``; unknown keys are errors."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"malformed config: {err}") from None
    out = {}
    for section in cp.sections():
        if section not in CONFIG_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        out[section] = {}
        for key, raw in cp.items(section):
            conv = CONFIG_KEYS[section].get(key)
            if conv is None:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                out[section][key] = conv(raw)
            except ValueError as err:
                raise ConfigError(f"[{section}] {key} = {raw!r}: {err}") from None
    return out


def packaged_configs() -> list[str]:
    root = resources.files("flowmpc").joinpath("configs")
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def load_config(path_or_name) -> dict:
    """Load a config file, or a packaged config by name (e.g. ``gauss2d``)."""
    p = Path(path_or_name)
    if p.is_file():
        return parse_config(p.read_text("utf-8"))
    name = str(path_or_name)
    if name in packaged_configs():
        return parse_config(resources.files("flowmpc").joinpath("configs", name + ".ini")
                            .read_text("utf-8"))
    raise ConfigError(f"config not found: {path_or_name}")


def _build(cls, values: dict, label: str, **fixed):
    try:
        return cls(**{**values, **fixed})
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid [{label}] settings: {err}") from None


def train_config(cfg: dict, default: TrainConfig | None = None) -> TrainConfig:
    base = asdict(default) if default is not None else {}
    vals = {k: v for k, v in cfg.get("train", {}).items() if k in {f.name for f in fields(TrainConfig)}}
    return _build(TrainConfig, {**base, **vals}, "train")


def solver_config(cfg: dict) -> SolverConfig:
    return _build(SolverConfig, dict(cfg.get("solver", {})), "solver")


def sampler_config(cfg: dict, default_steps: int, **overrides) -> SamplerConfig:
    vals = dict(cfg.get("sampler", {}))
    vals.update({k: v for k, v in overrides.items() if v is not None})
    if vals.get("n_steps") is None:
        vals["n_steps"] = default_steps
    return _build(SamplerConfig, vals, "sampler", solver=solver_config(cfg))


def describe_sampler(cfg: SamplerConfig) -> dict:
    """JSON-ready description of a sampler configuration (the grid is summarized)."""
    d = {f.name: getattr(cfg, f.name) for f in fields(SamplerConfig) if f.name not in ("grid", "solver")}
    d["solver"] = asdict(cfg.solver)
    return clean(d)
