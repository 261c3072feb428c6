"""Sweep configuration: TOML loading, defaults and validation."""

from __future__ import annotations

import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .balance import BalanceSpec
from .efficiency import Constraints, EnergyModel
from .errors import ConfigurationError
from .neuron import HhParameters, SynapseParameters

log = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = (20.0, 25.0, 30.0, 36.0991, 45.0, 55.0)
DEFAULT_S_GRID = (0.0, 0.10, 0.15, 0.30, 0.40, 0.50)
MIN_ISIS = 500


@dataclass(frozen=True)
class SweepConfig:
    lambda_ex_grid: tuple = DEFAULT_LAMBDA_GRID
    s_grid: tuple = DEFAULT_S_GRID
    duration: float = 200.5
    transient_cut: float = 0.5
    seed: int = 20240501
    participation: float = 0.9
    dt: float = 0.025
    alpha: float = 0.05
    workers: int = 1
    output_dir: str | None = None
    # (lambda_ex, s) pairs left out of the grid; other cells keep their seeds
    exclude: tuple = ()
    efficiency_min_s: float = 0.15
    min_surface_isis: int = 30
    expected_min_rate_hz: float = 2.5
    neuron: HhParameters = field(default_factory=HhParameters)
    synapse: SynapseParameters = field(default_factory=SynapseParameters)
    balance: BalanceSpec = field(default_factory=BalanceSpec)
    constraints: Constraints = field(default_factory=lambda: Constraints(0.1, -3.51))
    energy: EnergyModel = field(default_factory=EnergyModel)

    def __post_init__(self):
        object.__setattr__(self, "lambda_ex_grid", tuple(float(x) for x in self.lambda_ex_grid))
        object.__setattr__(self, "s_grid", tuple(float(x) for x in self.s_grid))
        object.__setattr__(self, "exclude", tuple((float(a), float(b)) for a, b in self.exclude))
        if not self.lambda_ex_grid:
            raise ConfigurationError("lambda_ex_grid must be nonempty")
        if not self.s_grid:
            raise ConfigurationError("s_grid must be nonempty")
        if any(x < 0 for x in self.lambda_ex_grid):
            raise ConfigurationError("input rates must be nonnegative")
        if any(not 0 <= s < 1 for s in self.s_grid):
            raise ConfigurationError("synchrony levels must lie in [0, 1)")
        if len(set(self.lambda_ex_grid)) != len(self.lambda_ex_grid) or len(set(self.s_grid)) != len(self.s_grid):
            raise ConfigurationError("grid values must be distinct")
        if any(s > 0.5 for s in self.s_grid):
            log.warning("synchrony levels above 0.5 are outside the range where Gamma fits are expected to hold")
        if not self.duration > self.transient_cut >= 0:
            raise ConfigurationError("duration must exceed the transient cut")
        if not 0 < self.participation < 1:
            raise ConfigurationError("participation must lie in (0, 1)")
        if self.workers < 1:
            raise ConfigurationError("workers must be at least 1")
        span = self.duration - self.transient_cut
        if span * self.expected_min_rate_hz < MIN_ISIS:
            log.warning("%.1f s per cell may give fewer than %d intervals at %.2f Hz",
                        span, MIN_ISIS, self.expected_min_rate_hz)

    @property
    def cells(self):
        """``(i, j, lambda_ex, s)`` in grid order, exclusions removed; ``i`` indexes s."""
        skip = set(self.exclude)
        return [(i, j, lam, s)
                for i, s in enumerate(self.s_grid)
                for j, lam in enumerate(self.lambda_ex_grid)
                if (lam, s) not in skip]

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in _SECTIONS:
                out[f.name] = {k: x for k, x in asdict(v).items() if x is not None}
            elif isinstance(v, tuple):
                out[f.name] = [list(x) if isinstance(x, tuple) else x for x in v]
            elif v is not None:
                out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
        kwargs = {}
        for name, value in data.items():
            if name in _SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigurationError(f"[{name}] must be a table")
                try:
                    kwargs[name] = _SECTIONS[name](**value)
                except TypeError as exc:
                    raise ConfigurationError(f"bad [{name}] section: {exc}") from exc
            else:
                kwargs[name] = value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc


_SECTIONS = {
    "neuron": HhParameters,
    "synapse": SynapseParameters,
    "balance": BalanceSpec,
    "constraints": Constraints,
    "energy": EnergyModel,
}


def _flatten_sweep(raw: dict) -> dict:
    # Top-level grid keys may live under a [sweep] table.
    raw = dict(raw)
    sweep = raw.pop("sweep", {})
    if not isinstance(sweep, dict):
        raise ConfigurationError("[sweep] must be a table")
    overlap = set(sweep) & set(raw)
    if overlap:
        raise ConfigurationError(f"keys given twice: {sorted(overlap)}")
    raw.update(sweep)
    return raw


def load_config(path) -> SweepConfig:
    """Read a TOML config, or the ``config`` block of a sweep manifest (JSON)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    if path.suffix == ".json":
        try:
            raw = json.loads(text)["config"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigurationError(f"{path} is not a sweep manifest: {exc}") from exc
    else:
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"invalid TOML in {path}: {exc}") from exc
    return SweepConfig.from_dict(_flatten_sweep(raw))


def dump_config(cfg: SweepConfig) -> str:
    """TOML text with scalar settings under ``[sweep]``."""
    d = cfg.to_dict()
    sweep = {k: v for k, v in d.items() if k not in _SECTIONS}
    out = {"sweep": sweep}
    out.update({k: d[k] for k in _SECTIONS})
    return tomli_w.dumps(out)


def worker_count(cfg: SweepConfig, env: dict | None = None) -> int:
    """``SYNCBPJ_WORKERS`` overrides the configured worker count."""
    env = os.environ if env is None else env
    raw = env.get("SYNCBPJ_WORKERS")
    if raw is None or raw == "":
        return cfg.workers
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"SYNCBPJ_WORKERS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigurationError("SYNCBPJ_WORKERS must be at least 1")
    return n


def finite_or_none(x):
    """JSON-safe float: NaN and infinities become ``None``."""
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None
