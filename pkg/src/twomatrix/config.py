"""Run configuration: one declarative file with nested sections.

Files are YAML (``.yaml``/``.yml``) or JSON.  Every section and key is
checked against the defaults below, so a typo is an input error instead of a
silently ignored setting.  Command-line flags override file values.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Optional

import yaml

from .potentials import PotentialSpec

OUTPUT_ROOT_ENV = "TWOMATRIX_OUTPUT_ROOT"

DEFAULTS = {
    "seed": 0,
    "output_dir": "twomatrix-out",
    "potential": {"v_coeffs": [0.0, 0.0, 0.5], "alpha": 0.0, "tau": 1.0},
    "equilibrium": {
        "resolution": "default",     # coarse | default | fine
        "n_mu1": None, "n_core": None, "growth": None, "outer_radius": None,
        "tol": 1e-6, "max_iter": 50000,
    },
    "input_data": {"n_points": 1000, "radius": 5.0, "check_closed_forms": False},
    "phase": {"tol": 1e-3, "origin_rel": None, "gap_cells": 0, "numeric": True},
    "sweep": {
        "alpha_min": -4.0, "alpha_max": 4.0, "tau_min": 0.0, "tau_max": 4.0,
        "n_alpha": 40, "n_tau": 40, "resolution": "coarse", "workers": 1,
    },
    "spectral": {"n_fit": 48, "n_holdout": 31, "perturb": 0.05, "n_samples": 64,
                 "one_matrix_cells": 100001},
    "biortho": {"n": 9, "J": 18, "dps": 80},
    "kernel": {"n": 9, "J": None, "n_points": 201, "which": "11", "n_matrix": 0},
    "sampler": {"n": 9, "n_chains": 400, "step": 0.3, "burn_in": 200, "thin": 10,
                "samples": 28, "check_every": 10000, "reference": "auto"},
    "validate": {"resolution": "coarse", "sampler_chains": 100, "sampler_samples": 10},
}


class ConfigError(ValueError):
    """Invalid or unknown configuration input."""


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be a section")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def load_file(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    try:
        data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return data


def resolve(path=None, overrides: Optional[dict] = None) -> dict:
    """Defaults, then the file, then overrides (same nested layout)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        cfg = _merge(cfg, load_file(path))
    if overrides:
        cfg = _merge(cfg, overrides)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(str(cfg["output_dir"])):
        cfg["output_dir"] = os.path.join(root, str(cfg["output_dir"]))
    return cfg


def potential_from(cfg: dict) -> PotentialSpec:
    p = cfg["potential"]
    try:
        return PotentialSpec(tuple(float(c) for c in p["v_coeffs"]), float(p["alpha"]),
                             float(p["tau"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid potential: {exc}") from exc
