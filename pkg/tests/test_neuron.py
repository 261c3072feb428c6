import numpy as np
import pytest
from scipy import optimize

from syncbpj.balance import BalanceSpec, solve_weights
from syncbpj.errors import InsufficientDataError, ParameterError
from syncbpj.neuron import (
    HhParameters,
    HhState,
    IsiSample,
    SynapseParameters,
    extract_isis,
    isis_to_csv,
    resting_potential,
    simulate,
)
from syncbpj.spikegen import SynchronyConfig, generate_synchronized_population


def _traub_inf(V, VT=-63.0):
    # Rate functions transcribed separately from the kernel for an independent oracle.
    u = V - VT
    am = 0.32 * (13 - u) / np.expm1((13 - u) / 4)
    bm = 0.28 * (u - 40) / np.expm1((u - 40) / 5)
    ah = 0.128 * np.exp((17 - u) / 18)
    bh = 4 / (1 + np.exp((40 - u) / 5))
    an = 0.032 * (15 - u) / np.expm1((15 - u) / 5)
    bn = 0.5 * np.exp((10 - u) / 40)
    return am / (am + bm), ah / (ah + bh), an / (an + bn)


def _squid_inf(V):
    am = 0.1 * (V + 40) / -np.expm1(-(V + 40) / 10)
    bm = 4 * np.exp(-(V + 65) / 18)
    ah = 0.07 * np.exp(-(V + 65) / 20)
    bh = 1 / (1 + np.exp(-(V + 35) / 10))
    an = 0.01 * (V + 55) / -np.expm1(-(V + 55) / 10)
    bn = 0.125 * np.exp(-(V + 65) / 80)
    return am / (am + bm), ah / (ah + bh), an / (an + bn)


def _iv_root(p: HhParameters, inf):
    def current(V):
        m, h, n = inf(V)
        return (p.g_L * (V - p.E_L) + p.g_Na * m**3 * h * (V - p.E_Na) + p.g_K * n**4 * (V - p.E_K))

    return optimize.brentq(current, -90.0, -60.1, xtol=1e-12)


# Roots frozen from the oracle above (brentq, xtol 1e-12).
TRAUB_REST_MV = -64.7646
SQUID_REST_MV = -71.5857


@pytest.mark.parametrize("params, inf, frozen", [
    (HhParameters(), _traub_inf, TRAUB_REST_MV),
    (HhParameters.squid(), _squid_inf, SQUID_REST_MV),
])
def test_zero_input_settles_to_iv_root(params, inf, frozen):
    v_analytic = _iv_root(params, inf)
    assert v_analytic == pytest.approx(frozen, abs=0.01)
    assert resting_potential(params) == pytest.approx(v_analytic, abs=1e-6)
    res = simulate(params, SynapseParameters(), None, duration=1.0)
    assert res.spike_times.size == 0
    assert abs(res.final_state.V - v_analytic) < 1.0


def test_empty_population_gives_no_spikes():
    cfg = SynchronyConfig(0.0, 0.0, 0.5, 10)
    act = generate_synchronized_population(cfg, 0.0, 0, 0.5, seed=0)
    res = simulate(HhParameters(), SynapseParameters(w_ex=0.01, w_in=0.01), act)
    assert res.spike_times.size == 0


def test_constant_current_fires_periodically():
    res = simulate(HhParameters(), SynapseParameters(), None, duration=3.0, current=2.0)
    isis = np.diff(res.spike_times[res.spike_times > 0.5])
    assert isis.size > 50
    assert isis.std() / isis.mean() < 0.01


def test_passive_relaxation_time_constant():
    p = HhParameters(g_Na=0.0, g_K=0.0)
    start = HhState(V=-45.0, m=0.0, h=0.0, n=0.0)
    res = simulate(p, SynapseParameters(), None, duration=0.2, record_voltage=True, initial=start)
    t = np.arange(res.voltage.size) * res.dt
    dev = res.voltage - p.E_L
    mask = (t > 1.0) & (dev > 0.05)
    slope = np.polyfit(t[mask], np.log(dev[mask]), 1)[0]
    tau = -1.0 / slope
    assert tau == pytest.approx(p.membrane_time_constant, rel=0.02)
    assert p.membrane_time_constant == pytest.approx(20.0)


def _balanced_input(lam, s, duration, seed, dt_ms=0.025):
    spec = BalanceSpec(V_th=-62.0)
    syn = solve_weights(spec, SynapseParameters(), HhParameters())
    cfg = SynchronyConfig.from_level(lam, s, 0.9, spec.n_ex)
    act = generate_synchronized_population(cfg, spec.lambda_in, spec.n_in, duration, seed, dt=dt_ms * 1e-3)
    return syn, act


@pytest.mark.parametrize("lam, s, seed", [(36.0991, 0.3, 7), (45.0, 0.0, 3), (30.0, 0.5, 11)])
def test_halving_dt_moves_spikes_less_than_a_tenth_ms(lam, s, seed):
    syn, act = _balanced_input(lam, s, 5.0, seed, dt_ms=0.0125)
    coarse = simulate(HhParameters(), syn, act, dt=0.025).spike_times
    fine = simulate(HhParameters(), syn, act, dt=0.0125).spike_times
    assert coarse.size == fine.size > 10
    assert np.max(np.abs(coarse - fine)) < 1e-4


def test_dt_bounds():
    with pytest.raises(ParameterError):
        simulate(HhParameters(), SynapseParameters(), None, dt=0.06, duration=0.1)
    with pytest.raises(ParameterError):
        simulate(HhParameters(), SynapseParameters(), None, dt=0.0, duration=0.1)


def test_gates_and_voltage_stay_in_range():
    syn, act = _balanced_input(45.0, 0.5, 10.0, 2)
    res = simulate(HhParameters(), syn, act)
    assert 0.0 <= res.gate_min and res.gate_max <= 1.0
    assert -120.0 <= res.v_min and res.v_max <= 80.0
    assert res.spike_times.size > 10


def test_spike_count_nondecreasing_in_drive():
    counts = []
    for lam in (20.0, 30.0, 40.0, 50.0, 60.0):
        syn, act = _balanced_input(lam, 0.3, 10.0, 5)
        counts.append(simulate(HhParameters(), syn, act).spike_times.size)
    assert all(b >= a for a, b in zip(counts, counts[1:]))
    assert counts[-1] > counts[0]


def test_simulation_is_deterministic():
    syn, act = _balanced_input(36.0991, 0.3, 3.0, 1)
    a = simulate(HhParameters(), syn, act).spike_times
    b = simulate(HhParameters(), syn, act).spike_times
    assert np.array_equal(a, b)


def test_lockout_separates_spikes():
    res = simulate(HhParameters(), SynapseParameters(), None, duration=1.0, current=40.0)
    assert np.all(np.diff(res.spike_times) >= 2e-3)


def test_reversals_validated():
    with pytest.raises(ParameterError):
        HhParameters(E_L=-95.0)
    with pytest.raises(ParameterError):
        HhParameters(kinetics="cortical")
    with pytest.raises(ParameterError):
        SynapseParameters(tau_ex=0.0)


def test_extract_isis_examples():
    assert np.allclose(extract_isis([0.1, 0.2, 0.35], 0.0).isis, [0.1, 0.15])
    assert np.allclose(extract_isis([0.1, 0.2, 0.35], 0.15).isis, [0.15])
    with pytest.raises(InsufficientDataError):
        extract_isis([], 0.0)
    with pytest.raises(InsufficientDataError):
        extract_isis([0.1, 0.2, 0.35], 0.3)


def test_extract_isis_labels():
    sample = extract_isis([1.0, 1.5, 2.5], 0.5, lambda_ex=30.0, s=0.1)
    assert sample.lambda_ex == 30.0 and sample.s == 0.1
    with pytest.raises(ParameterError):
        IsiSample(np.array([0.1, 0.0]))


def test_csv_dumps(tmp_path):
    res = simulate(HhParameters(), SynapseParameters(), None, duration=0.01, record_voltage=True)
    res.voltage_to_csv(tmp_path / "v.csv")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "time_ms,V_mV"
    assert len(lines) == res.voltage.size + 1
    isis_to_csv([IsiSample(np.array([0.1, 0.2]), 30.0, 0.1)], tmp_path / "i.csv")
    rows = (tmp_path / "i.csv").read_text().splitlines()
    assert rows == ["lambda_ex_hz,s,isi_s", "30.0,0.1,0.1", "30.0,0.1,0.2"]
