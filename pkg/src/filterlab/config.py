"""Experiment configuration: TOML with a fixed, fully validated schema.

Unknown tables or keys are rejected with the offending line number; every
field has a default, so an empty file is a valid configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import tomli

from .errors import ConfigError

_SCHEMA = {
    "run": {
        "scenario": str,
        "solver": str,
        "seed": int,
        "out_dir": str,
        "workers": int,
    },
    "time": {
        "dt": float,
        "horizon": float,
    },
    "particles": {
        "count": int,
        "replicas": int,
    },
    "grid": {
        "x_min": float,
        "x_max": float,
        "n_points": int,
    },
    "probe": {
        "phis": list,
        "frequencies": list,
    },
}

_SOLVERS = ("particle", "grid", "both")


@dataclass
class ExperimentConfig:
    scenario: str = "decoupled_classical"
    solver: str = "particle"
    seed: int = 42
    out_dir: str = "out"
    workers: int = 1
    dt: Optional[float] = None           # None: scenario default
    horizon: Optional[float] = None
    count: Optional[int] = None          # particles per run
    replicas: int = 200
    x_min: float = -7.0
    x_max: float = 7.0
    n_points: int = 281
    phis: list = field(default_factory=lambda: ["gauss_bump", "sech", "xgauss"])
    frequencies: list = field(default_factory=lambda: [
        "zero", "plus_one", "minus_one", "step_two", "alternating"])

    def validate(self, path=None):
        if self.solver not in _SOLVERS:
            raise ConfigError(f"solver must be one of {_SOLVERS}, got {self.solver!r}",
                              path=path)
        if self.workers < 1:
            raise ConfigError("workers must be >= 1", path=path)
        if self.dt is not None and self.dt <= 0:
            raise ConfigError("dt must be positive", path=path)
        if self.horizon is not None and self.horizon <= 0:
            raise ConfigError("horizon must be positive", path=path)
        if self.dt is not None and self.horizon is not None:
            steps = self.horizon / self.dt
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise ConfigError(
                    f"dt={self.dt:g} does not divide horizon={self.horizon:g}",
                    path=path)
        if self.n_points < 16:
            raise ConfigError("grid n_points must be >= 16", path=path)
        if not self.x_max > self.x_min:
            raise ConfigError("grid x_max must exceed x_min", path=path)
        if self.replicas < 1 or (self.count is not None and self.count < 1):
            raise ConfigError("particle counts must be >= 1", path=path)
        return self

    def as_tables(self) -> dict:
        return {
            "run": {"scenario": self.scenario, "solver": self.solver,
                    "seed": self.seed, "out_dir": self.out_dir,
                    "workers": self.workers},
            "time": {k: v for k, v in
                     (("dt", self.dt), ("horizon", self.horizon)) if v is not None},
            "particles": {k: v for k, v in
                          (("count", self.count), ("replicas", self.replicas))
                          if v is not None},
            "grid": {"x_min": self.x_min, "x_max": self.x_max,
                     "n_points": self.n_points},
            "probe": {"phis": list(self.phis), "frequencies": list(self.frequencies)},
        }


def _line_of(text: str, needle: str) -> Optional[int]:
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def load_config(path) -> ExperimentConfig:
    """Parse and validate a TOML configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path=str(path)) from None
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}", path=str(path)) from None

    cfg = ExperimentConfig()
    for table, entries in data.items():
        if table not in _SCHEMA:
            raise ConfigError(f"unknown table [{table}]", path=str(path),
                              line=_line_of(text, f"[{table}]"))
        if not isinstance(entries, dict):
            raise ConfigError(f"[{table}] must be a table", path=str(path),
                              line=_line_of(text, table))
        for key, value in entries.items():
            if key not in _SCHEMA[table]:
                raise ConfigError(f"unknown key {key!r} in [{table}]",
                                  path=str(path), line=_line_of(text, key))
            want = _SCHEMA[table][key]
            if want is float and isinstance(value, int):
                value = float(value)
            if want is int and isinstance(value, bool):
                raise ConfigError(f"key {key!r} must be an integer",
                                  path=str(path), line=_line_of(text, key))
            if not isinstance(value, want):
                raise ConfigError(
                    f"key {key!r} must be {want.__name__}, got {type(value).__name__}",
                    path=str(path), line=_line_of(text, key))
            attr = key if key not in ("count",) or table != "particles" else "count"
            setattr(cfg, attr, value)
    return cfg.validate(path=str(path))


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int,)):
        return str(v)
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize {type(v).__name__} to TOML")


def write_config(cfg: ExperimentConfig, path) -> str:
    """Emit the configuration as TOML (round-trips through load_config)."""
    lines = []
    for table, entries in cfg.as_tables().items():
        if not entries:
            continue
        lines.append(f"[{table}]")
        for key, value in entries.items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines))
    return str(path)
