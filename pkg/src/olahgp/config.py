"""JSON run configuration: sections ``scenario``, ``planner``, ``cost``, ``experiment``.

Missing keys take the defaults below; unknown keys are rejected so typos fail
loudly.  Command-line flags override values loaded from the file.
"""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path
from typing import Any

DEFAULTS: dict[str, dict[str, Any]] = {
    "scenario": {
        "side_s": 4800.0,
        "res_opt": 32,
        "res_eval": 128,
        "sigma2": 1.0,
        "ell": 600.0,
        "gamma": None,
        "measurement_noise_sd": 0.05,
        "noise_prior_variance": 0.2,
        "noise_prior_length": None,
        "noise_mode": "abs",
        "n_steps": 25,
        "seed": 0,
        "truth": "bundled",
        "truth_seed": None,
        "truth_level": None,
        "start": [0.0, 0.0],
        "current_east": None,
        "current_north": None,
        "wind": None,
    },
    "planner": {
        "kind": "olah",
        "horizon_n": 5,
        "l_max": 6160.0,
        "variance_mode": "bcm",
        "max_iters": 200,
        "kkt_tol": 1e-6,
        "constraint_tol": 1e-3,
        "lookahead_noise_sd": None,
        "multistart": True,
        "n_starts": 5,
        "two_opt": False,
        "ngon_restart": True,
        "n_static": 20,
        "scale_static_budget": True,
    },
    "cost": {
        "lambda1": 1e-3,
        "lambda2": 1e-8,
        "lambda3": 1e-5,
        "leaky_slope": 0.8,
        "eps_current": 0.2,
        "gate_tau": 0.02,
        "current_index": "literal",
    },
    "experiment": {
        "methods": [["olah", 5], ["greedy", 1], ["static", 20]],
        "n_seeds": 10,
        "seed0": 0,
        "seeds_per_method": {},
        "workers": None,
    },
}


BUNDLED = ("bundled", "smoke")


class ConfigError(ValueError):
    pass


def bundled_config_path(name: str) -> Path:
    """Path of a config shipped with the package (``bundled`` or ``smoke``)."""
    if name not in BUNDLED:
        raise ConfigError(f"no bundled config named {name!r}; choose from {BUNDLED}")
    return Path(resources.files("olahgp") / "data" / f"{name}.json")


def merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(out[key], dict) and isinstance(val, dict) and key in DEFAULTS:
            out[key] = merge(out[key], val, where + ".")
        else:
            out[key] = val
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Read a JSON config file (optional) and apply ``{section: {key: value}}`` overrides.

    ``path`` may also name a bundled config when no such file exists.
    """
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists() and str(path) in BUNDLED:
            p = bundled_config_path(str(path))
        try:
            doc = json.loads(p.read_text())
        except FileNotFoundError:
            raise ConfigError(f"{p}: config file not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}:{exc.lineno}: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: top level must be an object")
        cfg = merge(cfg, doc)
        base = p.parent
        sc = cfg["scenario"]
        for key in ("truth", "current_east", "current_north"):
            v = sc.get(key)
            if isinstance(v, str) and v not in ("bundled", "synthetic") and not Path(v).is_absolute():
                sc[key] = str(base / v)
    if overrides:
        cfg = merge(cfg, overrides)
    if cfg["scenario"]["gamma"] is None:
        raise ConfigError("scenario.gamma (bloom threshold) is required")
    return cfg


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)
