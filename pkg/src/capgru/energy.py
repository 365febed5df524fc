"""Energy accounting for the switched-capacitor cores.

Dissipation model: recharging a capacitor through an ideal switch burns
C * dV^2 / 2, and shorting a pre-charged group burns the difference of
stored energies (the capacitance-weighted variance of the group). Both
tallies are accumulated inside the circuit kernels in units of the unit
capacitance; this module scales them to joules and adds a fixed per-toggle
switch driving cost.

Converter, event routing, control logic and clocking are deliberately out
of scope. The default parameters are calibrated, not derived: unit
capacitance and per-toggle energy are chosen so the worst case of four
fully active 64x64 cores lands near the advertised per-step budget of a
comparable design point (~169 pJ); treat absolute joules as order of
magnitude only.
"""

from dataclasses import dataclass, field

import numpy as np

from capgru.params import Model, VoltageParams, padded_rows

# calibrated defaults (see module docstring)
DEFAULT_C_UNIT_F = 25e-15
DEFAULT_E_SWITCH_J = 0.78e-15


@dataclass(frozen=True)
class EnergyParams:
    c_u: float = DEFAULT_C_UNIT_F  # unit sampling capacitance, farads
    e_switch: float = DEFAULT_E_SWITCH_J  # driving energy per switch toggle, joules

    def __post_init__(self):
        if self.c_u < 0 or self.e_switch < 0:
            raise ValueError("energy parameters must be non-negative")


@dataclass
class EnergyReport:
    """Per-step and aggregate dissipation, all in joules.

    Arrays are indexed by timestep; per_layer maps layer index to that
    layer's total across the run.
    """

    e_precharge: np.ndarray
    e_share: np.ndarray
    e_swap: np.ndarray
    e_switch: np.ndarray
    per_layer: list = field(default_factory=list)

    @property
    def e_total(self) -> np.ndarray:
        return self.e_precharge + self.e_share + self.e_swap + self.e_switch

    @property
    def total(self) -> float:
        return float(self.e_total.sum())

    def rows(self):
        """Iterate (step, e_precharge, e_share, e_swap, e_switch, e_total)."""
        for t in range(len(self.e_precharge)):
            yield (
                t,
                self.e_precharge[t],
                self.e_share[t],
                self.e_swap[t],
                self.e_switch[t],
                self.e_total[t],
            )


def energy_of_step(events, params: EnergyParams) -> EnergyReport:
    """Price a run's event log (list of per-layer tallies from the engine).

    ``events`` is the ``last_energy`` of a CircuitEngine run: one
    LayerStepEnergy per layer with raw 0.5*C*dV^2 sums (unit-capacitance
    units) and toggle counts.
    """
    T = len(events[0].e_pre)
    e_pre = np.zeros(T)
    e_share = np.zeros(T)
    e_swap = np.zeros(T)
    e_sw = np.zeros(T)
    per_layer = []
    for ev in events:
        lp = params.c_u * ev.e_pre
        ls = params.c_u * ev.e_share
        lw = params.c_u * ev.e_swap
        lt = params.e_switch * (ev.n_const_toggles + ev.n_swap)
        e_pre += lp
        e_share += ls
        e_swap += lw
        e_sw += lt
        per_layer.append(float((lp + ls + lw + lt).sum()))
    return EnergyReport(e_pre, e_share, e_swap, e_sw, per_layer)


def worst_case_bound(
    model_or_sizes,
    params: EnergyParams,
    volt: VoltageParams | None = None,
    steps: int = 1,
) -> float:
    """Closed-form per-run upper bound on core dissipation.

    Assumes the worst case of a permanently saturated gate: every switch
    toggles and every capacitor swings the full weight-level range dV =
    6 * v_lsb each step. Per column of R rows and step that is

        2R precharges      <= 2R * C * dV^2 / 2
        3 share events     <= 3 * R * C * (dV/2)^2 / 2   (variance bound)
        7R switch toggles  (2R precharge, 3R share, 2R swap)

    The bound is linear in physical synapse count and dominates any
    simulated input.
    """
    if volt is None:
        volt = VoltageParams()
    if isinstance(model_or_sizes, Model):
        shapes = [(layer.n_rows, layer.n_out) for layer in model_or_sizes.layers]
    else:
        sizes = list(model_or_sizes)
        shapes = [
            (padded_rows(a), b) for a, b in zip(sizes[:-1], sizes[1:])
        ]
    dv = 6.0 * volt.v_lsb
    per_step = 0.0
    for rows, cols in shapes:
        cap = rows * params.c_u * dv * dv * (1.0 + 3.0 / 8.0)
        sw = 7 * rows * params.e_switch
        per_step += cols * (cap + sw)
    return steps * per_step
