"""Run configuration and its ``key = value`` file format."""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .exceptions import ConfigError
from .model import HyperPriors

_HYPER_KEYS = tuple(f.name for f in dataclasses.fields(HyperPriors))


@dataclass
class RunConfig:
    """Solver and driver settings.

    ``prune_threshold`` is relative: a column is pruned when its largest
    per-mode mean-square falls below ``prune_threshold`` times the variance of
    the first slice's observed values.
    ``init_noise_ratio`` sets the initial noise variance as a fraction of the
    first slice's robust variance; ``None`` (``auto`` in files) uses the
    observed-entries-per-parameter ratio ``min(1, |Omega| / (R_max * sum I_n))``.
    With ``burn_in_restarts`` each burn-in slice is fitted from a fresh random
    initialization over the whole window instead of a warm start.  Early
    windows hold too few observations to support the true rank, and columns
    that shrink to zero there cannot grow back under warm starts.
    """

    rank_max: int = 15
    mu: float = 0.98
    window: int = 20
    tol: float = 1e-5
    max_iter_first: int = 100
    max_iter_stream: int = 30
    prune_threshold: float = 1e-8
    prune_interval: int = 5
    hyperpriors: HyperPriors = field(default_factory=HyperPriors)
    seed: int = 0
    burn_in: int = 10
    init_scale: float = 1.0
    init_cov: float = 1e-2
    init_noise_ratio: Optional[float] = None
    sparse_precision_ratio: float = 1e4
    sparse_screen: float = 5.0
    tau_warmup: int = 30
    cold_start: bool = False
    burn_in_restarts: bool = True
    restart_candidates: int = 3
    restart_rounds: int = 6
    value_screen: float = 3.0
    restart_screen: float = 1.0
    exact_hyper_updates: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        checks = [
            ("rank_max", self.rank_max >= 1, "must be >= 1"),
            ("mu", 0.0 < self.mu <= 1.0, "must be in (0, 1]"),
            ("window", self.window >= 1, "must be >= 1"),
            ("tol", self.tol > 0, "must be > 0"),
            ("max_iter_first", self.max_iter_first >= 1, "must be >= 1"),
            ("max_iter_stream", self.max_iter_stream >= 1, "must be >= 1"),
            ("prune_threshold", self.prune_threshold >= 0, "must be >= 0"),
            ("prune_interval", self.prune_interval >= 1, "must be >= 1"),
            ("burn_in", self.burn_in >= 0, "must be >= 0"),
            ("restart_candidates", self.restart_candidates >= 1, "must be >= 1"),
            ("sparse_screen", self.sparse_screen >= 0, "must be >= 0"),
            ("value_screen", self.value_screen >= 0, "must be >= 0"),
            ("restart_screen", self.restart_screen >= 0, "must be >= 0"),
            ("restart_rounds", self.restart_rounds >= 0, "must be >= 0"),
            ("tau_warmup", self.tau_warmup >= 0, "must be >= 0"),
            ("init_scale", self.init_scale > 0, "must be > 0"),
            ("init_cov", self.init_cov > 0, "must be > 0"),
            ("init_noise_ratio", self.init_noise_ratio is None or self.init_noise_ratio > 0, "must be > 0 or auto"),
            ("sparse_precision_ratio", self.sparse_precision_ratio > 0, "must be > 0"),
        ]
        for key, ok, message in checks:
            if not ok:
                raise ConfigError(f"{message}, got {getattr(self, key)!r}", key)

    def to_lines(self):
        lines = []
        for f in dataclasses.fields(self):
            if f.name == "hyperpriors":
                for k in _HYPER_KEYS:
                    lines.append(f"{k} = {getattr(self.hyperpriors, k)!r}")
            else:
                value = getattr(self, f.name)
                if value is None:
                    text = "auto"
                elif isinstance(value, bool):
                    text = str(value).lower()
                else:
                    text = repr(value)
                lines.append(f"{f.name} = {text}")
        return lines


_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig) if f.name != "hyperpriors"}


def _convert(key, raw, kind):
    if kind in (Optional[float], "Optional[float]"):
        if raw.lower() in ("auto", "none"):
            return None
        kind = float
    try:
        if kind in (bool, "bool"):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {getattr(kind, '__name__', kind)}", key) from None


def parse_config_text(text, source="<config>"):
    values = {}
    hyper = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in _HYPER_KEYS:
            hyper[key] = _convert(key, raw, float)
        elif key in _TYPES:
            values[key] = _convert(key, raw, _TYPES[key])
        else:
            raise ConfigError("unknown configuration key", key)
    try:
        values["hyperpriors"] = HyperPriors(**hyper)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(**values)


def parse_config(path):
    return parse_config_text(Path(path).read_text(encoding="utf-8"), str(path))


def write_config(config, path):
    Path(path).write_text("\n".join(config.to_lines()) + "\n", encoding="utf-8")
