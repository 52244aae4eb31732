"""Run configuration: flat key-value files plus command-line overrides.

A config file holds ``key = value`` lines (``#`` comments allowed).
Command-line ``key=value`` arguments override the file, and the ``--seed``
and ``--out`` flags override both.  Every subcommand declares its legal
keys; unknown keys are rejected by name.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from .exceptions import ConfigError

# Keys accepted by every subcommand.
_COMMON = {"seed", "out"}

# Keys describing a model source (checkpoint or explicit parameters).
_MODEL = {"checkpoint", "eta", "beta", "a", "b", "c", "k",
          "noise_sigma", "max_altitude"}

SCHEMAS: Dict[str, set] = {
    "render": _COMMON | _MODEL | {
        "manifest", "image", "depth", "depth_scale", "resolution",
        "zero_is_missing",
    },
    "gen-dataset": _COMMON | _MODEL | {"manifest", "count", "zero_is_missing"},
    "fit": _COMMON | _MODEL | {
        "mode", "manifest", "scenes_manifest", "real_manifest",
        "epochs", "batch_size", "learning_rate", "beta1", "beta2",
        "holdout_fraction", "zero_is_missing",
    },
    "restore": _COMMON | _MODEL | {
        "mode", "manifest", "image", "depth", "depth_scale",
        "grid_size", "refine_tol", "median_pass", "zero_is_missing",
    },
    "eval": _COMMON | {
        "rmse_a", "rmse_b", "board_image", "board_layout", "tracks",
        "include_baselines", "normalization",
    },
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class RunConfig:
    """Validated, merged configuration for one subcommand invocation."""

    subcommand: str
    values: Dict[str, str] = field(default_factory=dict)

    def has(self, key: str) -> bool:
        return key in self.values

    def get_str(self, key: str, default: Optional[str] = None) -> Optional[str]:
        return self.values.get(key, default)

    def require(self, key: str) -> str:
        if key not in self.values:
            raise ConfigError(f"missing required config key '{key}'")
        return self.values[key]

    def get_int(self, key: str, default: Optional[int] = None) -> Optional[int]:
        if key not in self.values:
            return default
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigError(f"config key '{key}' must be an integer, "
                              f"got '{self.values[key]}'") from None

    def get_float(self, key: str, default: Optional[float] = None) -> Optional[float]:
        if key not in self.values:
            return default
        try:
            return float(self.values[key])
        except ValueError:
            raise ConfigError(f"config key '{key}' must be a number, "
                              f"got '{self.values[key]}'") from None

    def get_bool(self, key: str, default: bool = False) -> bool:
        if key not in self.values:
            return default
        v = self.values[key].strip().lower()
        if v in _TRUE:
            return True
        if v in _FALSE:
            return False
        raise ConfigError(f"config key '{key}' must be a boolean, got '{v}'")

    def get_vec3(self, key: str, default=None):
        if key not in self.values:
            return default
        parts = self.values[key].replace(",", " ").split()
        if len(parts) != 3:
            raise ConfigError(f"config key '{key}' must hold 3 numbers, "
                              f"got '{self.values[key]}'")
        try:
            return np.array([float(p) for p in parts])
        except ValueError:
            raise ConfigError(f"config key '{key}' must hold 3 numbers, "
                              f"got '{self.values[key]}'") from None

    def get_path(self, key: str) -> Optional[Path]:
        v = self.values.get(key)
        return Path(v) if v is not None else None

    @property
    def seed(self) -> int:
        return self.get_int("seed", 0)

    @property
    def out_dir(self) -> Path:
        return Path(self.require("out"))


def _parse_kv_line(line: str, where: str) -> Optional[tuple]:
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return None
    if "=" not in stripped:
        raise ConfigError(f"{where}: expected 'key = value', got '{stripped}'")
    key, _, value = stripped.partition("=")
    return key.strip(), value.strip()


def load_run_config(subcommand: str, config_path: Optional[str],
                    overrides: Sequence[str] = (),
                    seed: Optional[int] = None,
                    out: Optional[str] = None) -> RunConfig:
    """Merge a config file with overrides and validate against the schema."""
    if subcommand not in SCHEMAS:
        raise ConfigError(f"unknown subcommand '{subcommand}'")
    schema = SCHEMAS[subcommand]
    values: Dict[str, str] = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        for line_no, line in enumerate(path.read_text().splitlines(), start=1):
            parsed = _parse_kv_line(line, f"{path}:{line_no}")
            if parsed:
                values[parsed[0]] = parsed[1]
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' must look like key=value")
        key, _, value = item.partition("=")
        values[key.strip()] = value.strip()
    if seed is not None:
        values["seed"] = str(seed)
    if out is not None:
        values["out"] = out
    values.setdefault("seed", "0")
    for key in values:
        if key not in schema:
            raise ConfigError(f"unknown config key '{key}' for subcommand '{subcommand}'")
    cfg = RunConfig(subcommand=subcommand, values=values)
    cfg.get_int("seed")
    return cfg
