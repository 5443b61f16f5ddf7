"""Run configuration: per-command schemas, JSON loading and flag overrides.

A config file is one JSON object whose keys are those of the command's schema
below; unknown keys are rejected. Command-line flags override file values,
and file values override the defaults.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .counterfactual import default_config as _cf_default
from .model import InvalidInput
from .montecarlo import McConfig


class ConfigError(InvalidInput):
    def __init__(self, message, file=None, row=None):
        super().__init__(message)
        self.file, self.row = file, row


_COMMON = {"seed": 0, "n_jobs": 1, "output_dir": "out", "plots": True}

_DYNAMIC = {"gamma": 1.0, "c1": 0.5, "c2": 0.05, "beta": 0.95}

SCHEMAS = {
    "solve-dp": {
        **_COMMON,
        "price_grid": list(range(1, 11)),
        "price_variance": 1.0,
        "price_csv": None,
        "price_smoothing": 1.0,
        "dynamic": dict(_DYNAMIC),
        "lengths": [4, 8, 12, 16],
        "tract_sizes": [1.0],
        "p0_idx": None,
    },
    "estimate": {
        **_COMMON,
        "cutting_csv": None,
        "entry_csv": None,
        "bids_csv": None,
        "price_grid": list(range(1, 11)),
        "price_variance": 1.0,
        "price_csv": None,
        "price_smoothing": 1.0,
        "dynamic_init": dict(_DYNAMIC),
        "by_type": False,
        "entry_init": [0.2, 0.2],
        "valuation_init": [1.0, 1.0, 1.0, 1.0],
        "valuation_format": "oral",
        "dynamic_starts": 5,
        "valuation_starts": 3,
        "bootstrap_reps": 0,
    },
    "solve-bids": {
        **_COMMON,
        "logger": {"mu": 0.821, "sigma": 0.811, "v0": 27.8},
        "sawmill": {"mu": 1.562, "sigma": 3.649, "v0": 13.4},
        "n_logger": 1,
        "n_sawmill": 1,
        "tail": 1e-4,
        "K": 7,
        "n_starts": 5,
        "tol": 1e-2,
        "scale": "probability",
        "grid_points": 201,
    },
    "counterfactual": {
        **_COMMON,
        **_cf_default(),
        "draws": 100_000,
        "K": 7,
        "n_starts": 5,
        "tol": 1e-2,
    },
    "montecarlo": {
        **_COMMON,
        **{k: v for k, v in McConfig().__dict__.items() if k != "seed"},
        "write_data": False,
    },
}

# keys whose values are nested objects with their own fixed key sets
_NESTED = {"dynamic", "dynamic_init", "logger", "sawmill"}
_REQUIRED_PATHS = {"estimate": ("cutting_csv", "entry_csv", "bids_csv")}


def defaults(command: str) -> dict:
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    return copy.deepcopy(SCHEMAS[command])


def load_config(command: str, path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file at ``path``, then non-None ``overrides``."""
    cfg = defaults(command)
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", file=str(path)) from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", file=str(path), row=exc.lineno) from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object", file=str(path))
        _merge(cfg, data, command, str(path))
    for key, value in (overrides or {}).items():
        if value is not None:
            _merge(cfg, {key: value}, command, "command line")
    _validate(command, cfg)
    return cfg


def _merge(cfg: dict, data: dict, command: str, source: str):
    schema = SCHEMAS[command]
    unknown = sorted(set(data) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config key(s) for {command}: {', '.join(unknown)}", file=source)
    for key, value in data.items():
        if key in _NESTED:
            if not isinstance(value, dict):
                raise ConfigError(f"{key} must be an object", file=source)
            bad = sorted(set(value) - set(schema[key]))
            if bad:
                raise ConfigError(f"unknown key(s) in {key}: {', '.join(bad)}", file=source)
            cfg[key] = {**cfg[key], **value}
        else:
            cfg[key] = value


def _validate(command: str, cfg: dict):
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    if not isinstance(cfg["n_jobs"], int) or cfg["n_jobs"] == 0:
        raise ConfigError("n_jobs must be a nonzero integer")
    for key in _REQUIRED_PATHS.get(command, ()):
        if cfg[key] is None:
            raise ConfigError(f"{key} is required for {command}")
    for key, value in cfg.items():
        if key.endswith("_csv") and value is not None and not Path(value).is_file():
            raise ConfigError(f"{key}: no such file", file=str(value))
