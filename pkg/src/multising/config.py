"""Analysis configuration: TOML ingestion, per-flow defaults and validation."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import fields as vf
from .flow import DEFAULT_TOL

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


PRESETS: dict[str, dict[str, dict[str, Any]]] = {
    "lorenz": {"classic": {"sigma_p": 10.0, "rho": 28.0, "beta": 8.0 / 3.0}},
    "cycle-model": {"default": {"spectrum0": [-3.0, -1.0, 2.0], "spectrum1": [-2.0, 1.0, 3.0]}},
}

# region and cover defaults per builtin, chosen so each command finishes in minutes on one core
FLOW_DEFAULTS: dict[str, dict[str, Any]] = {
    "lorenz": {"region": [[-25.0, 25.0], [-30.0, 30.0], [0.0, 55.0]], "grid": [16, 16, 16], "eps": 0.5,
               "t_max": 5.0, "samples_per_box": 1},
    "limit-cycle": {"region": [[-2.0, 2.0], [-2.0, 2.0]], "grid": [64, 64], "eps": 0.05, "t_max": 50.0,
                    "samples_per_box": 8},
    "double-well": {"region": [[-2.0, 2.0], [-2.0, 2.0]], "grid": [64, 64], "eps": 0.05, "t_max": 50.0,
                    "samples_per_box": 8},
    "cycle-model": {"region": [[-1.0, 5.0], [-1.0, 1.0], [-1.0, 1.0]], "grid": [12, 4, 4], "eps": 0.05,
                    "t_max": 5.0, "samples_per_box": 2},
}

COMMANDS = ("classify", "recur", "splitting", "verify")


@dataclass
class AnalysisConfig:
    flow: str = "lorenz"
    preset: str | None = None
    params: dict[str, Any] = field(default_factory=dict)
    region: list[list[float]] | None = None
    command: str = "verify"
    seed: int = 0
    # cover
    grid: list[int] | int | None = None
    eps: float | None = None
    t_max: float | None = None
    samples_per_box: int | None = None
    # horizons
    horizon: float = 20.0
    escape_horizon: float = 20.0
    t_dom: float = 1.0
    buffer: float = 10.0
    # tolerances
    tol: float = DEFAULT_TOL
    gap_tol: float = 0.05
    delta_rate: float = 0.05
    eig_tol: float = 1e-6
    # sampling of the extended set
    directions: int = 8
    n_regular: int = 20
    spacing: float = 1.0
    transient: float = 20.0
    # output
    out: str | None = None
    format: str = "json"

    def resolved(self) -> "AnalysisConfig":
        """Fill cover and region defaults from the flow's table."""
        d = FLOW_DEFAULTS.get(self.flow, {})
        return replace(
            self,
            region=self.region if self.region is not None else d.get("region"),
            grid=self.grid if self.grid is not None else d.get("grid", 16),
            eps=self.eps if self.eps is not None else d.get("eps", 0.05),
            t_max=self.t_max if self.t_max is not None else d.get("t_max", 10.0),
            samples_per_box=self.samples_per_box if self.samples_per_box is not None else d.get("samples_per_box", 2),
        )

    def as_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# TOML layout: top-level keys plus [cover], [horizons], [tolerances], [sampling], [output] tables
_TABLES = {
    "cover": {"grid", "eps", "t_max", "samples_per_box"},
    "horizons": {"horizon", "escape_horizon", "t_dom", "buffer"},
    "tolerances": {"tol", "gap_tol", "delta_rate", "eig_tol"},
    "sampling": {"directions", "n_regular", "spacing", "transient"},
    "output": {"out", "format"},
}
_TOP = {"flow", "preset", "params", "region", "command", "seed"}


def parse_region(text: str) -> list[list[float]]:
    """``"-25:25,-30:30,0:55"`` -> [[-25, 25], [-30, 30], [0, 55]]."""
    out = []
    for part in text.split(","):
        lo, sep, hi = part.partition(":")
        if not sep:
            raise ValueError(f"region interval {part!r} must look like lo:hi")
        out.append([float(lo), float(hi)])
    return out


def from_mapping(data: dict[str, Any]) -> tuple[AnalysisConfig, list[str]]:
    """Config from a parsed TOML document, plus diagnostics for unknown keys."""
    problems: list[str] = []
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in _TABLES:
            if not isinstance(value, dict):
                problems.append(f"{key}: expected a table")
                continue
            for sub, v in value.items():
                if sub in _TABLES[key]:
                    kwargs[sub] = v
                else:
                    problems.append(f"{key}.{sub}: unknown key")
        elif key in _TOP:
            kwargs[key] = value
        else:
            problems.append(f"{key}: unknown key")
    return AnalysisConfig(**kwargs), problems


def load(path) -> tuple[AnalysisConfig, list[str]]:
    with open(Path(path), "rb") as fh:
        data = tomllib.load(fh)
    return from_mapping(data)


def build_flow(cfg: AnalysisConfig):
    if cfg.flow not in vf.BUILTINS:
        raise ConfigError([f"flow: unknown flow {cfg.flow!r}"])
    params = {}
    if cfg.preset is not None:
        table = PRESETS.get(cfg.flow, {})
        if cfg.preset not in table:
            raise ConfigError([f"preset: unknown preset {cfg.preset!r} for {cfg.flow}"])
        params.update(table[cfg.preset])
    params.update(cfg.params)
    try:
        return vf.BUILTINS[cfg.flow](**params)
    except TypeError as exc:
        raise ConfigError([f"params: {exc}"]) from exc


def _positive(problems, path, value, integer=False):
    kind = int if integer else (int, float)
    if isinstance(value, bool) or not isinstance(value, kind) or not np.isfinite(value) or value <= 0:
        problems.append(f"{path}: must be positive")


def validate(cfg: AnalysisConfig) -> list[str]:
    """Every violation in ``cfg``; nothing is executed beyond building the flow."""
    problems: list[str] = []
    cfg = cfg.resolved()
    if cfg.command not in COMMANDS:
        problems.append(f"command: must be one of {', '.join(COMMANDS)}")
    if cfg.format not in ("json", "csv"):
        problems.append("output.format: must be json or csv")
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        problems.append("seed: must be a non-negative integer")
    if isinstance(cfg.eps, (int, float)) and not isinstance(cfg.eps, bool) and cfg.eps <= 0:
        problems.append("cover.eps: ε must be positive")
    else:
        _positive(problems, "cover.eps", cfg.eps)
    for name in ("t_max",):
        _positive(problems, f"cover.{name}", getattr(cfg, name))
    _positive(problems, "cover.samples_per_box", cfg.samples_per_box, integer=True)
    for name in ("horizon", "escape_horizon", "t_dom", "buffer"):
        _positive(problems, f"horizons.{name}", getattr(cfg, name))
    for name in ("tol", "gap_tol", "delta_rate", "eig_tol"):
        _positive(problems, f"tolerances.{name}", getattr(cfg, name))
    for name in ("directions", "n_regular"):
        _positive(problems, f"sampling.{name}", getattr(cfg, name), integer=True)
    for name in ("spacing", "transient"):
        _positive(problems, f"sampling.{name}", getattr(cfg, name))

    try:
        spec = build_flow(cfg)
    except ConfigError as exc:
        return problems + exc.problems
    d = spec.dimension
    grid = cfg.grid
    grid_list = [grid] * d if isinstance(grid, int) else list(grid) if isinstance(grid, (list, tuple)) else None
    if grid_list is None or len(grid_list) != d or any(
            isinstance(g, bool) or not isinstance(g, int) or g <= 0 for g in grid_list):
        problems.append(f"cover.grid: must be a positive integer or {d} positive integers")
    if cfg.region is None:
        problems.append("region: required for this flow")
    else:
        try:
            region = np.asarray(cfg.region, dtype=float)
        except (TypeError, ValueError):
            region = None
        if region is None or region.shape != (d, 2):
            problems.append(f"region: must be {d} intervals [lo, hi]")
        elif not np.all(region[:, 0] < region[:, 1]):
            problems.append("region: every interval needs lo < hi")
        else:
            dom = np.asarray(spec.domain, float)
            if np.any(region[:, 0] < dom[:, 0]) or np.any(region[:, 1] > dom[:, 1]):
                problems.append(f"region: outside the domain of {cfg.flow} {dom.tolist()}")
    return problems
