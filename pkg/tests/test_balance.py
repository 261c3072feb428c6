import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from syncbpj.balance import (
    BalanceSpec,
    manifest,
    mean_currents,
    passive_fixed_point,
    solve_weights,
    steady_state_current,
)
from syncbpj.errors import ConfigurationError
from syncbpj.neuron import HhParameters, SynapseParameters, simulate
from syncbpj.spikegen import SynchronyConfig, generate_synchronized_population


def test_target_current_example():
    assert steady_state_current(BalanceSpec(V_th=-55.0), HhParameters()) == pytest.approx(0.5)


def test_reconstruction_to_machine_precision():
    spec = BalanceSpec(V_th=-55.0, V_bar=-60.0)
    params = HhParameters()
    syn = solve_weights(spec, SynapseParameters(), params)
    j_ex, j_in = mean_currents(spec, syn)
    j = steady_state_current(spec, params)
    assert j_ex == pytest.approx(2 * j, rel=1e-14)
    assert j_in == pytest.approx(-j, rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(
    v_th=st.floats(-64.0, -40.0),
    v_bar=st.one_of(st.none(), st.floats(-75.0, -5.0)),
    n_ex=st.integers(10, 2000),
    lam_in=st.floats(1.0, 300.0),
)
def test_reconstruction_property(v_th, v_bar, n_ex, lam_in):
    n_in = max(1, n_ex // 4)
    spec = BalanceSpec(V_th=v_th, n_ex=n_ex, n_in=n_in, lambda_in=lam_in,
                       lambda_ex_ref=n_in * lam_in / n_ex, V_bar=v_bar)
    params = HhParameters()
    syn = solve_weights(spec, SynapseParameters(), params)
    j_ex, j_in = mean_currents(spec, syn)
    j = steady_state_current(spec, params)
    assert j_ex == pytest.approx(2 * j, rel=1e-12)
    assert j_in == pytest.approx(-j, rel=1e-12)
    assert syn.w_ex > 0 and syn.w_in > 0


def test_population_scaling():
    params, tmpl = HhParameters(), SynapseParameters()
    base = solve_weights(BalanceSpec(V_th=-55.0), tmpl, params)
    # doubling n_ex at fixed total excitatory rate: w_ex unchanged
    same_total = solve_weights(BalanceSpec(V_th=-55.0, n_ex=800, lambda_ex_ref=15.625), tmpl, params)
    assert same_total.w_ex == pytest.approx(base.w_ex, rel=1e-14)
    # doubling n_ex at fixed per-neuron rate: w_ex halves (inhibition rescaled to keep totals equal)
    doubled = solve_weights(BalanceSpec(V_th=-55.0, n_ex=800, lambda_in=250.0), tmpl, params)
    assert doubled.w_ex == pytest.approx(base.w_ex / 2, rel=1e-14)


def test_rate_imbalance_rejected():
    with pytest.raises(ConfigurationError):
        solve_weights(BalanceSpec(lambda_ex_ref=30.0), SynapseParameters(), HhParameters())


def test_infeasible_weights_rejected():
    with pytest.raises(ConfigurationError):
        solve_weights(BalanceSpec(V_th=-70.0), SynapseParameters(), HhParameters())
    with pytest.raises(ConfigurationError):
        solve_weights(BalanceSpec(V_th=-55.0, V_bar=5.0), SynapseParameters(), HhParameters())


def test_default_linearisation_makes_v_th_the_fixed_point():
    spec = BalanceSpec(V_th=-62.0)
    params = HhParameters()
    syn = solve_weights(spec, SynapseParameters(), params)
    assert passive_fixed_point(spec, syn, params) == pytest.approx(-62.0, abs=1e-12)


@pytest.mark.parametrize("v_th", [-62.0, -55.0])
def test_passive_mean_voltage_near_v_th(v_th):
    spec = BalanceSpec(V_th=v_th)
    params = HhParameters(g_Na=0.0, g_K=0.0)
    syn = solve_weights(spec, SynapseParameters(), params)
    cfg = SynchronyConfig(spec.lambda_ex_ref, 0.0, 0.5, spec.n_ex)
    act = generate_synchronized_population(cfg, spec.lambda_in, spec.n_in, 10.0, seed=8)
    res = simulate(params, syn, act, record_voltage=True)
    v = res.voltage[int(0.2 / (res.dt * 1e-3)):]
    assert abs(v.mean() - v_th) < 2.0


def test_manifest_contents():
    spec = BalanceSpec()
    params = HhParameters()
    syn = solve_weights(spec, SynapseParameters(), params)
    m = manifest(spec, syn, params)
    assert m["linearization_voltage_mV"] == spec.V_th
    assert m["synapse"]["w_ex"] == syn.w_ex
    assert m["J_ex_uA_cm2"] == pytest.approx(2 * m["J_ss_uA_cm2"])
    assert np.isfinite(m["J_in_uA_cm2"])
