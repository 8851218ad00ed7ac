"""Pipeline configuration.

A JSON config file may set any CLI flag; the PROBLEMCHILD_CONFIG
environment variable points to it. Explicit flags override the file,
which overrides built-in defaults.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

from .errors import ConfigError
from .gbt import GbtParams

ENV_CONFIG = "PROBLEMCHILD_CONFIG"

DEFAULT_THRESHOLD = 0.38  # shipped operating point; re-derivable via calibrate


@dataclass
class PipelineConfig:
    delta_t_cap: float = 86400.0
    k_tfidf: int = 200
    ngram_lo: int = 1
    ngram_hi: int = 2
    resolution: float = 1.0
    threshold: float = DEFAULT_THRESHOLD
    target_fpr: float = 0.03
    grid_step: float = 0.01
    seed: int = 0
    gbt: GbtParams = field(default_factory=GbtParams)

    @property
    def ngram_range(self) -> tuple:
        return (self.ngram_lo, self.ngram_hi)

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["gbt"] = asdict(self.gbt)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_json_dict(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


_GBT_KEYS = {"n_rounds", "max_depth", "learning_rate", "min_leaf",
             "subsample", "reg_lambda"}
_TOP_KEYS = {"delta_t_cap", "k_tfidf", "ngram_lo", "ngram_hi", "resolution",
             "threshold", "target_fpr", "grid_step", "seed"}


def load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    unknown = set(doc) - _TOP_KEYS - _GBT_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    return doc


def build_config(overrides: dict) -> PipelineConfig:
    """Defaults <- env-config file <- non-None overrides."""
    settings: dict = {}
    env_path = os.environ.get(ENV_CONFIG)
    if env_path:
        settings.update(load_config_file(env_path))
    settings.update({k: v for k, v in overrides.items() if v is not None})

    cfg = PipelineConfig()
    for key, value in settings.items():
        if key in _GBT_KEYS:
            setattr(cfg.gbt, key, type(getattr(cfg.gbt, key))(value))
        elif key in _TOP_KEYS:
            setattr(cfg, key, type(getattr(cfg, key))(value))
        else:
            raise ConfigError(f"unknown config key: {key}")
    return cfg
