"""Synaptic weights for the balanced operating point.

The target current ``J_ss = g_L (V_th - E_L)`` drives the passive
membrane to ``V_th``.  Excitation supplies ``2 J_ss`` and inhibition
``-J_ss``, with equal total excitatory and inhibitory input rates.  Mean
synaptic conductances follow shot-noise averaging, ``g = N * rate * w * tau``,
with driving forces evaluated at the linearisation voltage ``V_bar``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

from .errors import ConfigurationError
from .neuron import HhParameters, SynapseParameters


@dataclass(frozen=True)
class BalanceSpec:
    V_th: float = -62.0
    n_ex: int = 400
    n_in: int = 100
    lambda_in: float = 125.0
    lambda_ex_ref: float = 31.25
    # None: linearise at V_th, which makes V_th the exact passive fixed point
    V_bar: float | None = None

    @property
    def linearization_voltage(self) -> float:
        return self.V_th if self.V_bar is None else self.V_bar

    def to_dict(self):
        return asdict(self)


def steady_state_current(spec: BalanceSpec, params: HhParameters) -> float:
    """``J_ss`` in uA/cm^2."""
    return params.g_L * (spec.V_th - params.E_L)


def mean_currents(spec: BalanceSpec, syn: SynapseParameters, lambda_ex: float | None = None):
    """Mean excitatory and inhibitory synaptic currents (inward positive) at ``V_bar``.

    Rates are in Hz and time constants in ms, so ``1e-3`` converts the
    product ``rate * tau`` to a dimensionless occupancy.
    """
    lam = spec.lambda_ex_ref if lambda_ex is None else lambda_ex
    v = spec.linearization_voltage
    j_ex = spec.n_ex * lam * syn.w_ex * syn.tau_ex * 1e-3 * (syn.E_ex - v)
    j_in = spec.n_in * spec.lambda_in * syn.w_in * syn.tau_in * 1e-3 * (syn.E_in - v)
    return j_ex, j_in


def solve_weights(spec: BalanceSpec, syn: SynapseParameters, params: HhParameters) -> SynapseParameters:
    """Return ``syn`` with ``w_ex`` and ``w_in`` set for the balanced regime."""
    total_ex = spec.n_ex * spec.lambda_ex_ref
    total_in = spec.n_in * spec.lambda_in
    if not math.isclose(total_ex, total_in, rel_tol=1e-12):
        raise ConfigurationError(
            f"total excitatory rate {total_ex:g} Hz must equal total inhibitory rate {total_in:g} Hz"
        )
    v = spec.linearization_voltage
    if not syn.E_ex > v > syn.E_in:
        raise ConfigurationError(f"linearisation voltage {v} mV must lie between E_in and E_ex")
    j_ss = steady_state_current(spec, params)
    w_ex = 2.0 * j_ss / (total_ex * syn.tau_ex * 1e-3 * (syn.E_ex - v))
    w_in = -j_ss / (total_in * syn.tau_in * 1e-3 * (syn.E_in - v))
    if not (w_ex > 0 and w_in > 0):
        raise ConfigurationError(
            f"balance is infeasible: solved weights w_ex={w_ex:.4g}, w_in={w_in:.4g} (need V_th > E_L)"
        )
    return replace(syn, w_ex=w_ex, w_in=w_in)


def passive_fixed_point(spec: BalanceSpec, syn: SynapseParameters, params: HhParameters,
                        lambda_ex: float | None = None) -> float:
    """Voltage where leak and mean synaptic conductances balance."""
    lam = spec.lambda_ex_ref if lambda_ex is None else lambda_ex
    g_ex = spec.n_ex * lam * syn.w_ex * syn.tau_ex * 1e-3
    g_in = spec.n_in * spec.lambda_in * syn.w_in * syn.tau_in * 1e-3
    return (params.g_L * params.E_L + g_ex * syn.E_ex + g_in * syn.E_in) / (params.g_L + g_ex + g_in)


def manifest(spec: BalanceSpec, syn: SynapseParameters, params: HhParameters) -> dict:
    """JSON-ready record of the balance inputs and solved weights."""
    j_ex, j_in = mean_currents(spec, syn)
    return {
        "balance": spec.to_dict(),
        "linearization_voltage_mV": spec.linearization_voltage,
        "J_ss_uA_cm2": steady_state_current(spec, params),
        "J_ex_uA_cm2": j_ex,
        "J_in_uA_cm2": j_in,
        "synapse": syn.to_dict(),
        "neuron": params.to_dict(),
    }
