"""JSON configuration schema.

A run is configured by one JSON document:

    {
      "classes": [ {"A": [[..]], "B": [[..]], "sigma": [[..]],
                    "Q": [[..]], "R": [[..]], "M": [[..]]}, ... ],
      "weights": [...],
      "destinations": [[..], ...],
      "initial": {"kind": "gaussian", "mean": [..], "cov": [[..]]}
               | {"kind": "samples", "points": [[..], ...]},
      "horizon": T,
      "n_steps": N,
      "fp_nodes": 801            # optional, spatial transport resolution
    }

Matrices are row-major nested arrays; bare numbers are accepted for 1x1
matrices and length-1 vectors.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .meanfield import FpGrid, MeanFieldProblem
from .model import (AgentClassParams, DestinationSet, GaussianInitial,
                    Population, SampleInitial, TimeGrid)

__all__ = ["load_problem", "problem_from_dict", "default_config",
           "config_digest", "ConfigError"]


class ConfigError(ValueError):
    """Malformed configuration document."""


def _matrix(entry, name: str) -> np.ndarray:
    try:
        return np.atleast_2d(np.asarray(entry, dtype=float))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"field '{name}' is not a numeric matrix: {e}") from None


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"missing required config field '{key}'")
    return cfg[key]


def problem_from_dict(cfg: dict) -> MeanFieldProblem:
    classes = []
    for i, c in enumerate(_require(cfg, "classes")):
        kwargs = {k: _matrix(_require(c, k), f"classes[{i}].{k}")
                  for k in ("A", "B", "sigma", "Q", "R", "M")}
        classes.append(AgentClassParams(**kwargs))
    if not classes:
        raise ConfigError("config needs at least one agent class")

    weights = np.atleast_1d(np.asarray(_require(cfg, "weights"), dtype=float))
    pop = Population(classes=tuple(classes), weights=weights)

    pts = _require(cfg, "destinations")
    points = np.atleast_2d(np.asarray(pts, dtype=float))
    if np.asarray(pts).ndim == 1:
        points = points.T  # flat list = scalar destinations
    dest = DestinationSet(points=points, metric=classes[0].M)

    init_cfg = _require(cfg, "initial")
    kind = str(init_cfg.get("kind", "gaussian")).lower()
    if kind == "gaussian":
        init = GaussianInitial(mean=_require(init_cfg, "mean"),
                               cov=_require(init_cfg, "cov"))
    elif kind in ("samples", "empirical"):
        init = SampleInitial(points=_require(init_cfg, "points"))
    else:
        raise ConfigError(f"unknown initial distribution kind '{kind}'")

    grid = TimeGrid(horizon=float(_require(cfg, "horizon")),
                    n_steps=int(_require(cfg, "n_steps")))
    problem = MeanFieldProblem(pop=pop, dest=dest, init=init, grid=grid)
    if "fp_nodes" in cfg and problem.fpgrid is not None:
        fpg = problem.fpgrid
        object.__setattr__(problem, "fpgrid",
                           FpGrid(x_min=fpg.x_min, x_max=fpg.x_max,
                                  n_nodes=int(cfg["fp_nodes"])))
    return problem


def load_problem(path: str | Path) -> tuple[MeanFieldProblem, dict]:
    """Parse a JSON config file; returns the problem and the raw dict."""
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return problem_from_dict(cfg), cfg


def default_config(Q: float = 0.1, sigma: float = 1.5) -> dict:
    """Built-in scalar binary reference scenario."""
    return {
        "classes": [{"A": [[0.1]], "B": [[0.2]], "sigma": [[sigma]],
                     "Q": [[Q]], "R": [[5.0]], "M": [[500.0]]}],
        "weights": [1.0],
        "destinations": [[-10.0], [10.0]],
        "initial": {"kind": "gaussian", "mean": [0.3], "cov": [[1.0]]},
        "horizon": 2.0,
        "n_steps": 2000,
        "fp_nodes": 801,
    }


def config_digest(cfg: dict) -> str:
    """Content hash of a config (canonical JSON, sha256 hex)."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
