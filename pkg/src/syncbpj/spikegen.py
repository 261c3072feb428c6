"""Presynaptic spike-train generation with rate-compensated synchrony.

Every presynaptic neuron fires a homogeneous Poisson train.  Synchrony is
introduced by a separate Poisson process of synchronous events; at each
event a fixed-size random subset of the excitatory population fires
together.  The base rate of every excitatory neuron is lowered to
``lambda_old - S * lambda_syn`` so the per-neuron mean rate is unchanged.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParameterError

# Stream tags keep the excitatory, inhibitory, synchrony and selection
# streams disjoint for one master seed.
_EXCITATORY, _INHIBITORY, _SYNC_EVENTS, _SELECTION = 0, 1, 2, 3
_DEFAULT_DT = 0.025e-3


def _generator(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for stream ``key`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SpikeTrain:
    """Ordered spike timestamps in seconds on ``[0, duration]``."""

    times: np.ndarray
    duration: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if self.duration <= 0:
            raise ParameterError(f"duration must be positive, got {self.duration}")
        if times.ndim != 1:
            raise ParameterError("spike times must be one-dimensional")
        if times.size:
            if np.any(np.diff(times) <= 0):
                raise ParameterError("spike times must be strictly increasing")
            if times[0] < 0 or times[-1] > self.duration:
                raise ParameterError("spike times must lie in [0, duration]")

    def __len__(self):
        return self.times.size

    @property
    def rate(self) -> float:
        return self.times.size / self.duration


@dataclass(frozen=True)
class SynchronyConfig:
    """Synchronous-event parameters for the excitatory subpopulation.

    Parameters
    ----------
    lambda_old : float
        Per-neuron rate without synchrony (Hz).
    lambda_syn : float
        Rate of synchronous events (Hz).
    participation : float
        Fraction ``S`` of the population taking part in each event, in (0, 1).
    n_neurons : int
        Excitatory population size.
    """

    lambda_old: float
    lambda_syn: float
    participation: float
    n_neurons: int

    def __post_init__(self):
        if not 0.0 < self.participation < 1.0:
            raise ParameterError(f"participation must lie in (0, 1), got {self.participation}")
        if self.lambda_old < 0 or self.lambda_syn < 0:
            raise ParameterError("rates must be nonnegative")
        if self.n_neurons < 1:
            raise ParameterError("n_neurons must be at least 1")

    @property
    def lambda_new(self) -> float:
        return self.lambda_old - self.participation * self.lambda_syn

    @property
    def feasible(self) -> bool:
        # Tolerate round-off when lambda_syn is derived as lambda_old / S.
        return self.lambda_new >= -1e-12 * max(self.lambda_old, 1.0)

    @property
    def participants(self) -> int:
        return int(round(self.participation * self.n_neurons))

    @classmethod
    def from_level(cls, lambda_old, s, participation, n_neurons):
        """Build the config realising synchrony level ``s`` at fixed participation."""
        if lambda_old <= 0 and s > 0:
            raise ConfigurationError("a positive synchrony level needs lambda_old > 0")
        return cls(lambda_old, s * lambda_old / participation, participation, n_neurons)


@dataclass
class PopulationActivity:
    excitatory: list[SpikeTrain]
    inhibitory: list[SpikeTrain]
    sync_events: SpikeTrain
    config: SynchronyConfig
    lambda_in: float
    duration: float
    dt: float = _DEFAULT_DT
    # (n_events, round(S * n)) sorted participant indices per sync event
    participants: np.ndarray = field(default_factory=lambda: np.empty((0, 0), dtype=np.intp), repr=False)

    def to_csv(self, path) -> None:
        """Write every spike as ``neuron_id, population, time_s``."""
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["neuron_id", "population", "time_s"])
            for label, trains in (("E", self.excitatory), ("I", self.inhibitory)):
                for idx, train in enumerate(trains):
                    for t in train.times:
                        writer.writerow([idx, label, repr(float(t))])


def _poisson_times(rng: np.random.Generator, rate: float, duration: float) -> np.ndarray:
    if rate == 0:
        return np.empty(0)
    # Draw exponential gaps by inversion in chunks until the span is covered.
    expected = rate * duration
    chunk = int(expected + 6 * np.sqrt(expected) + 16)
    pieces = []
    t0 = 0.0
    while True:
        # subnormal rates overflow to infinite gaps, which correctly yields no spikes
        with np.errstate(over="ignore"):
            gaps = -np.log1p(-rng.random(chunk)) / rate
        times = t0 + np.cumsum(gaps)
        pieces.append(times)
        if times[-1] > duration:
            break
        t0 = times[-1]
    times = np.concatenate(pieces)
    return times[times <= duration]


def generate_poisson_train(rate: float, duration: float, seed: int) -> SpikeTrain:
    """Homogeneous Poisson train, deterministic for a fixed seed."""
    if rate < 0:
        raise ParameterError(f"rate must be nonnegative, got {rate}")
    if duration <= 0:
        raise ParameterError(f"duration must be positive, got {duration}")
    return SpikeTrain(_poisson_times(_generator(seed), rate, duration), duration)


def _merge(base: np.ndarray, extra: np.ndarray, dt: float) -> np.ndarray:
    times = np.sort(np.concatenate([base, extra]))
    if times.size < 2:
        return times
    # A neuron cannot fire twice within one integration step.
    keep = np.ones(times.size, dtype=bool)
    last = times[0]
    gaps_ok = np.diff(times) >= dt
    if gaps_ok.all():
        return times
    for i in range(1, times.size):
        if times[i] - last < dt:
            keep[i] = False
        else:
            last = times[i]
    return times[keep]


def _select_participants(rng, n_events, n_neurons, k, chunk=8192):
    """Exactly ``k`` distinct neurons per event, uniformly at random."""
    out = []
    for start in range(0, n_events, chunk):
        m = min(chunk, n_events - start)
        keys = rng.random((m, n_neurons))
        if k == n_neurons:
            out.append(np.tile(np.arange(n_neurons), (m, 1)))
        else:
            out.append(np.argpartition(keys, k - 1, axis=1)[:, :k])
    if not out:
        return np.empty((0, k), dtype=np.intp)
    return np.vstack(out)


def generate_synchronized_population(
    cfg: SynchronyConfig,
    lambda_in: float,
    n_inhibitory: int,
    duration: float,
    seed: int,
    dt: float = _DEFAULT_DT,
) -> PopulationActivity:
    """Excitatory and inhibitory trains with synchronous events inserted.

    ``dt`` is the integration step in seconds; spikes of one neuron closer
    than ``dt`` after merging are collapsed into one.
    """
    if not cfg.feasible:
        raise ConfigurationError(
            f"infeasible rate compensation: lambda_new = {cfg.lambda_new:.6g} Hz < 0"
        )
    if lambda_in < 0:
        raise ParameterError("lambda_in must be nonnegative")
    if n_inhibitory < 0:
        raise ParameterError("n_inhibitory must be nonnegative")
    if duration <= 0:
        raise ParameterError("duration must be positive")

    lam_new = max(cfg.lambda_new, 0.0)
    events = _poisson_times(_generator(seed, _SYNC_EVENTS), cfg.lambda_syn, duration)
    k = cfg.participants
    if k > 0 and events.size:
        chosen = _select_participants(_generator(seed, _SELECTION), events.size, cfg.n_neurons, k)
        owner = chosen.ravel()
        when = np.repeat(events, k)
        order = np.argsort(owner, kind="stable")
        owner, when = owner[order], when[order]
        bounds = np.searchsorted(owner, np.arange(cfg.n_neurons + 1))
    else:
        chosen = np.empty((events.size, 0), dtype=np.intp)
        when = np.empty(0)
        bounds = np.zeros(cfg.n_neurons + 1, dtype=np.intp)

    excitatory = []
    for i in range(cfg.n_neurons):
        base = _poisson_times(_generator(seed, _EXCITATORY, i), lam_new, duration)
        extra = np.sort(when[bounds[i]:bounds[i + 1]])
        excitatory.append(SpikeTrain(_merge(base, extra, dt), duration))
    inhibitory = [
        SpikeTrain(_poisson_times(_generator(seed, _INHIBITORY, j), lambda_in, duration), duration)
        for j in range(n_inhibitory)
    ]
    return PopulationActivity(
        excitatory=excitatory,
        inhibitory=inhibitory,
        sync_events=SpikeTrain(events, duration),
        config=cfg,
        lambda_in=lambda_in,
        duration=duration,
        dt=dt,
        participants=np.sort(chosen, axis=1),
    )


def synchrony_level(cfg: SynchronyConfig) -> float:
    """Expected fraction of each excitatory neuron's spikes that are synchronous."""
    if cfg.lambda_old == 0:
        raise ConfigurationError("synchrony level is undefined for lambda_old = 0")
    if not cfg.feasible:
        raise ConfigurationError("infeasible rate compensation")
    return cfg.participation * cfg.lambda_syn / cfg.lambda_old
