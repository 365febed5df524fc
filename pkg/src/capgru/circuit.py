"""Behavioral charge-domain simulator of the mixed-signal cores.

Everything is modeled at the charge steady state: switches are ideal,
capacitors settle instantly, and every share operation returns the
capacitance-weighted mean of the participating group (exact charge
conservation). Per synapse there are three capacitors: two state caps that
alternate between holding h and computing the candidate, and one gate cap.

Voltages are tracked as deltas against the zero potential v0. Columns
always span a whole number of 64-row core segments; rows beyond the
logical input width stay clamped to v0, and the per-layer value scale
``v_lsb * n_in / n_rows`` maps column voltages back to value units.

Gate digitization is a 6 b successive approximation against a capacitive
DAC. The DAC is pre-set during sampling to realize an input offset: the
standalone converter applies its config's offset_code at one LSB per code,
while inside a core step the per-unit gate bias code is applied with a
doubled lever (two LSBs per code), which spans [-6, +6) hard-sigmoid input
units and matches the value-domain engine's bias step. The unused rows of
the offset range saturate nothing: the pre-set is a charge displacement,
not a register value, so it may exceed the 6 b pattern range.
"""

from dataclasses import dataclass

import numpy as np

from capgru import codes
from capgru.backend import get_kernels
from capgru.ideal import LayerTrace, RunResult, _check_binary
from capgru.params import (
    AdcConfig,
    LayerParams,
    Model,
    VoltageParams,
    adc_gain,
    adc_lsb_volts,
)

_K = get_kernels()

# per-unit gate bias enters the DAC pre-set with twice the trial LSB
GATE_BIAS_LEVER = 2.0

# tripwire for the check_charge flag: shares and swaps must conserve the
# participating group's total charge to this relative level
CHARGE_TOLERANCE = 1e-15


class ChargeLeakError(AssertionError):
    """A share or swap failed to conserve charge (simulator defect)."""


def effective_offset(layer: LayerParams):
    """DAC pre-set value (pattern scale) for each unit's gate conversion."""
    return layer.adc.offset_code + GATE_BIAS_LEVER * (
        layer.b_z.astype(np.float64) - codes.BIAS_NEUTRAL
    )


def value_scale(layer: LayerParams, volt: VoltageParams) -> float:
    """Volts per value unit for this layer's columns."""
    return volt.v_lsb * layer.n_in / layer.n_rows


def precharge_and_share(x, w_col, volt: VoltageParams, caps=None, return_charge=False):
    """Sample a column of weight capacitors and short them together.

    Phase 1 charges cap i to the weight potential when x_i = 1 and to v0
    otherwise; phase 2 shorts the column, settling at the capacitance-
    weighted mean. With matched caps this is v0 + v_lsb * mac / N.
    """
    x = _check_binary(x)
    w_col = np.asarray(w_col)
    if x.shape != w_col.shape:
        raise ValueError("input and weight column lengths differ")
    if caps is None:
        caps = np.full(x.shape, volt.c_unit)
    dv = x * codes.weight_value(w_col) * volt.v_lsb
    q = float((caps * dv).sum())
    v = volt.v0 + q / caps.sum()
    if return_charge:
        return v, q
    return v


def sar_convert(
    v_in: float,
    adc: AdcConfig,
    volt: VoltageParams,
    offset_value: float | None = None,
    return_trace: bool = False,
):
    """6-trial successive approximation of a sampled column voltage.

    slope_segments sampling caps stay connected to the conversion node, so
    the DAC swing is attenuated by c_dac / (c_sig + c_dac). The array is
    pre-set to the offset during sampling; switching it to a trial pattern
    p displaces the floating node by lsb * (p - offset) (active-low bottom
    plates: larger patterns pull the node down). The comparator tests the
    node against v0, keeping a bit when the node stays at or above it,
    which resolves ties upward exactly like the value-domain quantizer.
    """
    if offset_value is None:
        offset_value = float(adc.offset_code)
    lsb = adc_lsb_volts(adc, volt)
    c_sig = adc.slope_segments * volt.c_unit
    c_tot = c_sig + adc.c_dac

    def node(pattern):
        return v_in - lsb * (pattern - offset_value)

    # floating top-plate charge, conserved across every trial
    def top_charge(pattern):
        v_bot = volt.v_ref_hi - (pattern / 64.0) * volt.v_span
        return c_tot * node(pattern) - adc.c_dac * v_bot

    acc = 0
    trace = []
    for b in range(5, -1, -1):
        trial = acc + (1 << b)
        v_node = node(trial)
        keep = v_node - volt.v0 >= 0.0
        trace.append((trial, v_node, top_charge(trial)))
        if keep:
            acc = trial
    if return_trace:
        return acc, trace
    return acc


@dataclass
class ColumnState:
    """State-capacitor bank of a single column, for standalone experiments."""

    dva: np.ndarray  # volts above v0
    dvb: np.ndarray
    role_a: np.ndarray  # True: cap A currently holds h
    ca: np.ndarray
    cb: np.ndarray

    @classmethod
    def uniform(cls, n_rows, v_h, v_ht, volt: VoltageParams):
        """Bank A holding v_h, bank B holding v_ht (post-share voltages)."""
        return cls(
            dva=np.full(n_rows, v_h - volt.v0),
            dvb=np.full(n_rows, v_ht - volt.v0),
            role_a=np.ones(n_rows, dtype=bool),
            ca=np.full(n_rows, volt.c_unit),
            cb=np.full(n_rows, volt.c_unit),
        )


def swap_and_share(col: ColumnState, k: int, volt: VoltageParams) -> float:
    """Reassign k capacitor pairs between the h and candidate banks, then
    short the (new) h bank. Swaps the lowest-index synapses first. Returns
    the settled h voltage; the displaced caps keep their old value until
    the next precharge overwrites them."""
    n = col.role_a.shape[0]
    if not (0 <= k <= n):
        raise ValueError("swap count exceeds column height")
    col.role_a[:k] ^= True
    c_h = np.where(col.role_a, col.ca, col.cb)
    v_h = np.where(col.role_a, col.dva, col.dvb)
    vbar = (c_h * v_h).sum() / c_h.sum()
    col.dva[col.role_a] = vbar
    col.dvb[~col.role_a] = vbar
    return volt.v0 + vbar


def comparator_output(v_h: float, threshold_code: int, volt: VoltageParams,
                      lsb: float | None = None) -> int:
    """Clocked comparator against a DAC-generated reference.

    The reference is v0 - (code - 32) * lsb (higher codes lower the
    threshold, acting as a positive bias on h). Tie resolves to 1.
    """
    if lsb is None:
        lsb = volt.v_span / 64.0
    v_th = volt.v0 - (threshold_code - codes.BIAS_NEUTRAL) * lsb
    return 1 if v_h - v_th >= 0.0 else 0


class CoreState:
    """Capacitor banks and constants for one layer's core columns."""

    def __init__(
        self,
        layer: LayerParams,
        volt: VoltageParams | None = None,
        mismatch_sigma: float = 0.0,
        rng: np.random.Generator | None = None,
        check_charge: bool = False,
    ):
        if volt is None:
            volt = VoltageParams()
        if layer.candidate_bias is not None and np.any(layer.candidate_bias != 0.0):
            raise ValueError(
                "cores have no candidate-bias path; apply "
                "bias_equivalence_transform first"
            )
        alpha = adc_gain(layer.adc, volt, layer.n_in, layer.n_rows)
        if abs(alpha - layer.gate_scale) > 1e-9 * abs(alpha):
            raise ValueError(
                f"layer is not calibrated: gate_scale {layer.gate_scale!r} vs "
                f"converter gain {alpha!r}"
            )
        self.layer = layer
        self.volt = volt
        self.check_charge = bool(check_charge)
        R, n_out = layer.n_rows, layer.n_out
        self.n_rows = R
        self.seg_per_code = R // 64
        self.scale = value_scale(layer, volt)
        self.adc_lsb = adc_lsb_volts(layer.adc, volt)
        self.o_eff = effective_offset(layer)
        self.dv_th = layer.thresholds() * self.scale

        # per-capacitor precharge deltas for x = 1 (padding rows stay at 0)
        self.dvw_h = np.zeros((R, n_out))
        self.dvw_z = np.zeros((R, n_out))
        self.dvw_h[: layer.n_in] = codes.weight_value(layer.w_h).T * volt.v_lsb
        self.dvw_z[: layer.n_in] = codes.weight_value(layer.w_z).T * volt.v_lsb

        if mismatch_sigma > 0.0:
            if rng is None:
                raise ValueError("mismatch requires an explicit generator")
            dev = 1.0 + mismatch_sigma * rng.standard_normal((3, R, n_out))
            if dev.min() <= 0:
                raise ValueError("mismatch draw produced a non-positive capacitance")
            self.ca, self.cb, self.cz = (volt.c_unit * d for d in dev)
        else:
            self.ca = np.full((R, n_out), volt.c_unit)
            self.cb = np.full((R, n_out), volt.c_unit)
            self.cz = np.full((R, n_out), volt.c_unit)

        self.reset()

    def reset(self):
        R, n_out = self.n_rows, self.layer.n_out
        dv0 = self.layer.h_init * self.scale
        self.dva = np.tile(dv0, (R, 1))
        self.dvb = np.tile(dv0, (R, 1))
        self.dvz = np.zeros((R, n_out))
        self.role_a = np.ones((R, n_out), dtype=bool)
        self.max_charge_err = 0.0

    def pad_inputs(self, x):
        x = _check_binary(x)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.layer.n_in:
            raise ValueError("input width does not match layer")
        xpad = np.zeros((x.shape[0], self.n_rows))
        xpad[:, : self.layer.n_in] = x
        return xpad

    def run(self, x):
        """Advance the core over a (T, n_in) input block."""
        xpad = self.pad_inputs(x)
        res = _K.circuit_layer_forward(
            xpad,
            self.dvw_h,
            self.dvw_z,
            self.cz,
            self.ca,
            self.cb,
            self.role_a,
            self.dva,
            self.dvb,
            self.dvz,
            self.o_eff,
            self.adc_lsb,
            self.seg_per_code,
            self.dv_th,
            self.volt.v0,
            self.check_charge,
        )
        z_code, dv_ht, dv_h, out, e_pre, e_share, e_swap, n_swap, err = res
        self.max_charge_err = max(self.max_charge_err, float(err))
        if self.check_charge and self.max_charge_err > CHARGE_TOLERANCE:
            raise ChargeLeakError(
                f"charge conservation violated: relative error "
                f"{self.max_charge_err:.3e} > {CHARGE_TOLERANCE:g}"
            )
        energy = LayerStepEnergy(
            e_pre / self.volt.c_unit,
            e_share / self.volt.c_unit,
            e_swap / self.volt.c_unit,
            n_swap,
            n_const_toggles=5 * self.n_rows * self.layer.n_out,
        )
        return z_code, dv_ht, dv_h, out, energy


@dataclass
class LayerStepEnergy:
    """Per-step dissipation tallies for one layer, in units of c_unit * V^2
    (multiply by the physical unit capacitance to get joules), plus switch
    toggle counts. n_const_toggles covers the data-independent precharge
    and share switching per step; n_swap counts role reassignments."""

    e_pre: np.ndarray
    e_share: np.ndarray
    e_swap: np.ndarray
    n_swap: np.ndarray
    n_const_toggles: int


def core_step(x, state: CoreState):
    """One timestep through one core. Returns (out_bits, step_trace) where
    the trace carries the gate code, the shared candidate and state
    voltages (absolute volts), and their value-domain readbacks."""
    z_code, dv_ht, dv_h, out, _ = state.run(np.asarray(x)[None, :])
    trace = {
        "z_code": z_code[0],
        "v_htilde": state.volt.v0 + dv_ht[0],
        "v_h": state.volt.v0 + dv_h[0],
        "h_tilde": dv_ht[0] / state.scale,
        "h": dv_h[0] / state.scale,
        "out": out[0],
    }
    return out[0], trace


class CircuitEngine:
    """Charge-domain twin of the value-domain engine.

    Runs a whole model, one core per layer, and reports traces in value
    units (voltages divided by the per-layer value scale) so they line up
    column-for-column with the ideal engine's records.
    """

    def __init__(
        self,
        model: Model,
        volt: VoltageParams | None = None,
        mismatch_sigma: float = 0.0,
        seed: int | None = None,
        check_charge: bool = False,
    ):
        self.model = model
        self.volt = volt or VoltageParams()
        rng = np.random.default_rng(seed) if mismatch_sigma > 0.0 else None
        self.states = [
            CoreState(layer, self.volt, mismatch_sigma, rng, check_charge)
            for layer in model.layers
        ]
        self.last_energy = None

    @property
    def max_charge_err(self):
        return max(s.max_charge_err for s in self.states)

    def run(self, inputs) -> RunResult:
        x = _check_binary(inputs)
        if x.ndim != 2:
            raise ValueError("inputs must be (T, n_in)")
        if x.shape[0] < 1:
            raise ValueError("empty input sequence")
        if x.shape[1] != self.model.n_in:
            raise ValueError("input width does not match model")
        traces = []
        energy = []
        for state in self.states:
            state.reset()
            z_code, dv_ht, dv_h, out, elog = state.run(x)
            traces.append(
                LayerTrace(
                    z_code,
                    dv_ht / state.scale,
                    dv_h / state.scale,
                    out.astype(np.uint8),
                )
            )
            energy.append(elog)
            x = out.astype(np.float64)
        self.last_energy = energy
        logits = traces[-1].h[-1]
        return RunResult(logits, int(np.argmax(logits)), traces)
