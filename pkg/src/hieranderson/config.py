"""Run configuration: defaults, JSON file, command-line overrides."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigError
from .noise import alpha_of
from .norms import KAPPA_S_DEFAULT

__all__ = ["RunConfig", "load_config"]

# fields that do not change any computed number
_NOT_HASHED = ("output_dir", "workers")


@dataclass(frozen=True)
class RunConfig:
    L: int = 3
    d: int = 2
    Nmax: int = 3
    g: float = 0.1
    r: float = 1.0
    kappa_s: float = KAPPA_S_DEFAULT
    seed: int = 0
    samples: int = 100
    output_dir: str = "out"
    dense_cap: int = 1024
    condition_threshold: float = 1e12
    workers: int = 1

    def violations(self) -> list:
        bad = []
        if not isinstance(self.L, int) or self.L < 3 or self.L % 2 == 0:
            bad.append(f"L must be odd and >= 3 (got {self.L})")
        if not isinstance(self.d, int) or self.d < 1:
            bad.append(f"d must be a positive integer (got {self.d})")
        if not isinstance(self.Nmax, int) or self.Nmax < 0:
            bad.append(f"Nmax must be a non-negative integer (got {self.Nmax})")
        if not 0.0 <= self.g <= 1.0:
            bad.append(f"g must lie in [0, 1] (got {self.g})")
        if not self.r >= 1.0:
            bad.append(f"r must be >= 1 (got {self.r})")
        if isinstance(self.d, int) and self.d >= 1:
            a = alpha_of(self.d)
            if not 0.0 < self.kappa_s < a:
                bad.append(f"kappa_s must lie in (0, {a}) (got {self.kappa_s})")
        if not isinstance(self.samples, int) or self.samples < 1:
            bad.append(f"samples must be a positive integer (got {self.samples})")
        if not isinstance(self.workers, int) or self.workers < 1:
            bad.append(f"workers must be a positive integer (got {self.workers})")
        if not isinstance(self.dense_cap, int) or self.dense_cap < 1:
            bad.append(f"dense_cap must be a positive integer (got {self.dense_cap})")
        if not self.condition_threshold > 0:
            bad.append("condition_threshold must be positive")
        return bad

    def validate(self) -> "RunConfig":
        bad = self.violations()
        if bad:
            raise ConfigError(bad)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """Short hash of every setting that affects the results."""
        d = {k: v for k, v in asdict(self).items() if k not in _NOT_HASHED}
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path: str | None = None, **overrides) -> RunConfig:
    """Defaults, then the JSON file at ``path``, then non-None ``overrides``."""
    cfg = RunConfig()
    names = {f.name for f in fields(RunConfig)}
    if path is not None:
        with open(path) as fh:
            data = json.load(fh)
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError([f"unknown config key {k!r}" for k in unknown])
        cfg = replace(cfg, **data)
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return cfg.validate()
