"""Single-compartment Hodgkin-Huxley neuron with conductance synapses.

Membrane equation (units: mV, ms, mS/cm^2, uA/cm^2, uF/cm^2)::

    C_m dV/dt = -g_L (V - E_L) - I_Na - I_K
                - g_ex (V - E_ex) - g_in (V - E_in) + I_inj

Two channel sets are available: ``"traub"`` (Traub-Miles cortical
kinetics, the default) and ``"squid"`` (the original squid-axon rate
functions).  Synaptic conductances decay exponentially and jump by the
per-spike weight at the integration step nearest each presynaptic spike.
Integration is classical fixed-step RK4; conductance decay inside a step
is evaluated exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numba
import numpy as np
from scipy import optimize

from .errors import InsufficientDataError, IntegrationError, ParameterError

KINETICS = {"squid": 0, "traub": 1}
MAX_DT_MS = 0.05


@dataclass(frozen=True)
class HhParameters:
    C_m: float = 1.0
    g_L: float = 0.05
    E_L: float = -65.0
    g_Na: float = 100.0
    E_Na: float = 50.0
    g_K: float = 30.0
    E_K: float = -90.0
    V_spk: float = 0.0
    kinetics: str = "traub"
    # voltage offset of the Traub-Miles rate functions; unused for squid
    V_T: float = -63.0

    def __post_init__(self):
        if self.C_m <= 0:
            raise ParameterError("C_m must be positive")
        if min(self.g_L, self.g_Na, self.g_K) < 0:
            raise ParameterError("conductances must be nonnegative")
        if not self.E_Na > self.E_L > self.E_K:
            raise ParameterError("reversal potentials must satisfy E_Na > E_L > E_K")
        if self.kinetics not in KINETICS:
            raise ParameterError(f"unknown kinetics {self.kinetics!r}; choose from {sorted(KINETICS)}")

    @classmethod
    def squid(cls, **overrides) -> "HhParameters":
        """Canonical squid-axon densities, sharing the default leak."""
        values = dict(g_Na=120.0, E_Na=50.0, g_K=36.0, E_K=-77.0, kinetics="squid")
        values.update(overrides)
        return cls(**values)

    @property
    def membrane_time_constant(self) -> float:
        return self.C_m / self.g_L

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SynapseParameters:
    w_ex: float = 0.0
    w_in: float = 0.0
    tau_ex: float = 3.0
    tau_in: float = 10.0
    E_ex: float = 0.0
    E_in: float = -80.0

    def __post_init__(self):
        if self.w_ex < 0 or self.w_in < 0:
            raise ParameterError("synaptic weights must be nonnegative")
        if self.tau_ex <= 0 or self.tau_in <= 0:
            raise ParameterError("synaptic time constants must be positive")
        if not self.E_ex > self.E_in:
            raise ParameterError("E_ex must exceed E_in")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class HhState:
    V: float
    m: float
    h: float
    n: float
    g_ex: float = 0.0
    g_in: float = 0.0


@dataclass
class IsiSample:
    isis: np.ndarray
    lambda_ex: float = float("nan")
    s: float = float("nan")

    def __post_init__(self):
        self.isis = np.asarray(self.isis, dtype=float)
        if np.any(self.isis <= 0):
            raise ParameterError("inter-spike intervals must be positive")

    def __len__(self):
        return self.isis.size


@dataclass
class SimulationResult:
    spike_times: np.ndarray  # seconds
    dt: float  # ms
    duration: float  # seconds
    final_state: HhState
    gate_min: float
    gate_max: float
    v_min: float
    v_max: float
    voltage: np.ndarray | None = None  # mV, one sample per step starting at t = 0

    def voltage_to_csv(self, path) -> None:
        if self.voltage is None:
            raise ValueError("simulation was run without record_voltage")
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_ms", "V_mV"])
            for k, v in enumerate(self.voltage):
                writer.writerow([repr(k * self.dt), repr(float(v))])


@numba.njit(cache=True)
def _rates(V, kin, V_T):
    if kin == 0:
        x = V + 40.0
        am = 1.0 if abs(x) < 1e-7 else 0.1 * x / (1.0 - math.exp(-x / 10.0))
        bm = 4.0 * math.exp(-(V + 65.0) / 18.0)
        ah = 0.07 * math.exp(-(V + 65.0) / 20.0)
        bh = 1.0 / (1.0 + math.exp(-(V + 35.0) / 10.0))
        y = V + 55.0
        an = 0.1 if abs(y) < 1e-7 else 0.01 * y / (1.0 - math.exp(-y / 10.0))
        bn = 0.125 * math.exp(-(V + 65.0) / 80.0)
    else:
        u = V - V_T
        x = 13.0 - u
        am = 1.28 if abs(x) < 1e-7 else 0.32 * x / (math.exp(x / 4.0) - 1.0)
        y = u - 40.0
        bm = 1.4 if abs(y) < 1e-7 else 0.28 * y / (math.exp(y / 5.0) - 1.0)
        ah = 0.128 * math.exp((17.0 - u) / 18.0)
        bh = 4.0 / (1.0 + math.exp((40.0 - u) / 5.0))
        z = 15.0 - u
        an = 0.16 if abs(z) < 1e-7 else 0.032 * z / (math.exp(z / 5.0) - 1.0)
        bn = 0.5 * math.exp((10.0 - u) / 40.0)
    return am, bm, ah, bh, an, bn


@numba.njit(cache=True)
def _deriv(V, m, h, n, ge, gi, p, kin, I):
    am, bm, ah, bh, an, bn = _rates(V, kin, p[7])
    i_ion = (p[1] * (V - p[2]) + p[3] * m * m * m * h * (V - p[4])
             + p[5] * n * n * n * n * (V - p[6]))
    i_syn = ge * (V - p[8]) + gi * (V - p[9])
    dV = (I - i_ion - i_syn) / p[0]
    return dV, am * (1.0 - m) - bm * m, ah * (1.0 - h) - bh * h, an * (1.0 - n) - bn * n


@numba.njit(cache=True)
def _integrate(kex, kin_counts, n_steps, dt, p, kin, w_ex, w_in, tau_ex, tau_in,
               I, V, m, h, n, ge, gi, v_spk, lockout, record):
    spikes = np.empty(1024)
    n_spk = 0
    last = -1e300
    trace = np.empty(n_steps + 1 if record else 0)
    if record:
        trace[0] = V
    decay_ex = math.exp(-dt / tau_ex)
    decay_in = math.exp(-dt / tau_in)
    half_ex = math.exp(-0.5 * dt / tau_ex)
    half_in = math.exp(-0.5 * dt / tau_in)
    gmin = min(m, h, n)
    gmax = max(m, h, n)
    vmin = V
    vmax = V
    has_ex = kex.shape[0] > 0
    has_in = kin_counts.shape[0] > 0
    for k in range(n_steps):
        if has_ex:
            ge += w_ex * kex[k]
        if has_in:
            gi += w_in * kin_counts[k]
        ge_h = ge * half_ex
        gi_h = gi * half_in
        ge_f = ge * decay_ex
        gi_f = gi * decay_in
        k1 = _deriv(V, m, h, n, ge, gi, p, kin, I)
        k2 = _deriv(V + 0.5 * dt * k1[0], m + 0.5 * dt * k1[1], h + 0.5 * dt * k1[2],
                    n + 0.5 * dt * k1[3], ge_h, gi_h, p, kin, I)
        k3 = _deriv(V + 0.5 * dt * k2[0], m + 0.5 * dt * k2[1], h + 0.5 * dt * k2[2],
                    n + 0.5 * dt * k2[3], ge_h, gi_h, p, kin, I)
        k4 = _deriv(V + dt * k3[0], m + dt * k3[1], h + dt * k3[2], n + dt * k3[3],
                    ge_f, gi_f, p, kin, I)
        c = dt / 6.0
        Vn = V + c * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        m += c * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        h += c * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        n += c * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
        if not (math.isfinite(Vn) and abs(Vn) < 1e4):
            return spikes[:n_spk], trace, k, V, m, h, n, ge, gi, gmin, gmax, vmin, vmax
        if V < v_spk <= Vn:
            tc = k * dt + dt * (v_spk - V) / (Vn - V)
            if tc - last >= lockout:
                if n_spk == spikes.shape[0]:
                    grown = np.empty(2 * n_spk)
                    grown[:n_spk] = spikes
                    spikes = grown
                spikes[n_spk] = tc
                n_spk += 1
                last = tc
        V = Vn
        ge = ge_f
        gi = gi_f
        gmin = min(gmin, m, h, n)
        gmax = max(gmax, m, h, n)
        vmin = min(vmin, V)
        vmax = max(vmax, V)
        if record:
            trace[k + 1] = V
    return spikes[:n_spk], trace, -1, V, m, h, n, ge, gi, gmin, gmax, vmin, vmax


def _param_vector(params: HhParameters, syn: SynapseParameters) -> np.ndarray:
    return np.array([params.C_m, params.g_L, params.E_L, params.g_Na, params.E_Na,
                     params.g_K, params.E_K, params.V_T, syn.E_ex, syn.E_in])


def gate_steady_state(params: HhParameters, V: float) -> tuple[float, float, float]:
    am, bm, ah, bh, an, bn = _rates(float(V), KINETICS[params.kinetics], params.V_T)
    return am / (am + bm), ah / (ah + bh), an / (an + bn)


def steady_state_current(params: HhParameters, V: float, injected: float = 0.0) -> float:
    """Net outward membrane current at ``V`` with all gates at equilibrium."""
    m, h, n = gate_steady_state(params, V)
    return (params.g_L * (V - params.E_L) + params.g_Na * m ** 3 * h * (V - params.E_Na)
            + params.g_K * n ** 4 * (V - params.E_K) - injected)


def resting_potential(params: HhParameters, injected: float = 0.0) -> float:
    """Lowest root of the steady-state current-voltage curve."""
    grid = np.linspace(-110.0, 0.0, 2201)
    vals = np.array([steady_state_current(params, v, injected) for v in grid])
    idx = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
    if idx.size == 0:
        raise IntegrationError("no resting potential in [-110, 0] mV")
    i = idx[0]
    return optimize.brentq(lambda v: steady_state_current(params, v, injected),
                           grid[i], grid[i + 1], xtol=1e-12)


def _step_counts(trains, n_steps: int, dt_s: float) -> np.ndarray:
    if not trains:
        return np.zeros(0)
    times = np.concatenate([tr.times for tr in trains]) if trains else np.empty(0)
    if times.size == 0:
        return np.zeros(0)
    idx = np.rint(times / dt_s).astype(np.int64)
    idx = idx[idx < n_steps]
    return np.bincount(idx, minlength=n_steps).astype(np.float64)


def simulate(
    params: HhParameters,
    syn: SynapseParameters,
    input=None,
    dt: float = 0.025,
    record_voltage: bool = False,
    *,
    duration: float | None = None,
    current: float = 0.0,
    initial: HhState | None = None,
    lockout: float = 2.0,
) -> SimulationResult:
    """Integrate the neuron over the span of ``input``.

    Parameters
    ----------
    params, syn : HhParameters, SynapseParameters
    input : PopulationActivity or None
        Presynaptic drive.  ``None`` runs without synaptic input, in which
        case ``duration`` (seconds) is required.
    dt : float
        Integration step in ms, at most 0.05.
    record_voltage : bool
        Keep the membrane potential at every step.
    current : float
        Constant injected current (uA/cm^2), a test hook.
    initial : HhState, optional
        Starting state; defaults to ``V = E_L`` with gates at equilibrium.
    lockout : float
        Minimum separation between detected spikes (ms).

    Returns
    -------
    SimulationResult
    """
    if not 0 < dt <= MAX_DT_MS:
        raise ParameterError(f"dt must lie in (0, {MAX_DT_MS}] ms, got {dt}")
    if input is not None:
        duration = input.duration
    if duration is None or duration <= 0:
        raise ParameterError("a positive duration is required")
    n_steps = int(round(duration * 1e3 / dt))
    dt_s = dt * 1e-3
    kex = _step_counts(input.excitatory, n_steps, dt_s) if input is not None else np.zeros(0)
    kin = _step_counts(input.inhibitory, n_steps, dt_s) if input is not None else np.zeros(0)

    if initial is None:
        m0, h0, n0 = gate_steady_state(params, params.E_L)
        initial = HhState(params.E_L, m0, h0, n0)
    out = _integrate(kex, kin, n_steps, float(dt), _param_vector(params, syn),
                     KINETICS[params.kinetics], syn.w_ex, syn.w_in, syn.tau_ex, syn.tau_in,
                     float(current), initial.V, initial.m, initial.h, initial.n,
                     initial.g_ex, initial.g_in, params.V_spk, float(lockout), record_voltage)
    spikes, trace, failed_at, V, m, h, n, ge, gi, gmin, gmax, vmin, vmax = out
    if failed_at >= 0:
        raise IntegrationError(
            f"state diverged at step {failed_at} (t = {failed_at * dt:.3f} ms) with dt = {dt} ms"
        )
    return SimulationResult(
        spike_times=spikes * 1e-3,
        dt=dt,
        duration=duration,
        final_state=HhState(V, m, h, n, ge, gi),
        gate_min=gmin,
        gate_max=gmax,
        v_min=vmin,
        v_max=vmax,
        voltage=trace if record_voltage else None,
    )


def extract_isis(spike_times, transient_cut: float = 0.5, lambda_ex=float("nan"), s=float("nan")) -> IsiSample:
    """Successive differences of the spikes at or after ``transient_cut`` seconds."""
    times = np.asarray(spike_times, dtype=float)
    kept = times[times >= transient_cut]
    if kept.size < 2:
        raise InsufficientDataError(
            f"need at least 2 spikes after the {transient_cut} s transient, got {kept.size}"
        )
    return IsiSample(np.diff(kept), lambda_ex=lambda_ex, s=s)


def isis_to_csv(samples, path, header_comment: str | None = None) -> None:
    """Write ``lambda_ex_hz, s, isi_s`` rows for a sequence of IsiSample."""
    with Path(path).open("w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["lambda_ex_hz", "s", "isi_s"])
        for sample in samples:
            for isi in sample.isis:
                writer.writerow([repr(float(sample.lambda_ex)), repr(float(sample.s)), repr(float(isi))])

