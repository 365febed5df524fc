"""Parameter containers for layers, networks, voltages and the gate ADC.

A layer is one mixed-signal core slice: two 2 b weight matrices (candidate
and gate projections sharing the input rows), 6 b per-unit biases, the
per-layer gate ADC configuration, and the derived calibration constants
that make the value-domain engine and the charge-domain engine agree.

Physical geometry: a column always spans a whole number of 64-row core
segments. Layers with fewer logical inputs leave the remaining rows
permanently clamped to the zero-activation potential, which scales the
column voltage by n_in / n_rows; the per-layer ``value_scale`` undoes that
in the voltage-to-value readback.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from capgru import codes

CORE_ROWS = 64  # physical rows per core segment; also the gate-code denominator


def padded_rows(n_in: int) -> int:
    """Physical column height for a layer with n_in logical inputs."""
    if n_in < 1:
        raise ValueError("layer input width must be >= 1")
    return CORE_ROWS * ((n_in + CORE_ROWS - 1) // CORE_ROWS)


@dataclass(frozen=True)
class VoltageParams:
    """Rail and level definitions for one core.

    v0 is the zero-activation potential, the midpoint of the four weight
    voltages v0 + value * v_lsb. v_ref_lo/hi bound the ADC DAC swing.
    Defaults are dyadic on purpose: with exact binary fractions the whole
    mismatch-free charge pipeline stays exact in float64, which the
    code-level equivalence between the two engines relies on.
    """

    v0: float = 0.5
    v_lsb: float = 0.0625
    v_ref_lo: float = 0.0
    v_ref_hi: float = 1.0
    c_unit: float = 1.0  # unit sampling capacitance (relative scale)

    def __post_init__(self):
        if self.v_lsb <= 0:
            raise ValueError("v_lsb must be positive")
        if not (self.v_ref_lo < self.v0 < self.v_ref_hi):
            raise ValueError("need v_ref_lo < v0 < v_ref_hi")
        if self.c_unit <= 0:
            raise ValueError("c_unit must be positive")

    @property
    def v_span(self) -> float:
        return self.v_ref_hi - self.v_ref_lo

    def weight_voltage(self, code):
        return self.v0 + codes.weight_value(code) * self.v_lsb


@dataclass(frozen=True)
class AdcConfig:
    """Gate-path SAR ADC configuration for one layer.

    slope_segments counts the column sampling capacitors left connected to
    the conversion node, c_dac is the total DAC capacitance in units of the
    sampling capacitor. Together they set the capacitive divider and hence
    the transfer-curve slope; offset_code pre-sets the DAC to shift the
    staircase by one LSB per code (neutral at 32).
    """

    slope_segments: int = 13
    c_dac: float = 3.0
    offset_code: int = 32
    n_bits: int = 6

    def __post_init__(self):
        if self.n_bits != 6:
            raise ValueError("only the 6 b converter is modeled")
        if self.slope_segments < 0:
            raise ValueError("slope_segments must be >= 0")
        if not (0 <= self.offset_code <= 63):
            raise ValueError("offset_code must lie in [0, 63]")
        if self.c_dac < 0 or (self.c_dac == 0 and self.slope_segments == 0):
            raise ValueError("degenerate conversion node: no capacitance")


def full_scale_volts(adc: AdcConfig, volt: VoltageParams) -> float:
    """ADC input full scale at the conversion node, in volts.

    The DAC swing is attenuated by the divider c_dac / (c_sig + c_dac);
    connecting more signal capacitors narrows the full scale and steepens
    the activation slope in MAC units.
    """
    c_sig = adc.slope_segments * volt.c_unit
    c_tot = c_sig + adc.c_dac
    if c_tot <= 0:
        raise ValueError("conversion node has no capacitance")
    return (adc.c_dac / c_tot) * volt.v_span


def adc_lsb_volts(adc: AdcConfig, volt: VoltageParams) -> float:
    return full_scale_volts(adc, volt) / 64.0


def adc_gain(adc: AdcConfig, volt: VoltageParams, n_in: int, n_rows: int | None = None) -> float:
    """Gate scale alpha reproducing this converter's staircase.

    Derivation: the shared column voltage is v0 + v_lsb * m / n_rows for an
    integer MAC m, the staircase LSB at the node is full_scale / 64, and the
    ideal engine quantizes 64 * hard_sigmoid(alpha * m / n_in + bias) whose
    LSB is 6/64 input units. Equating steps per MAC count gives

        alpha = 6 * n_in * v_lsb / (n_rows * full_scale)
    """
    if n_rows is None:
        n_rows = padded_rows(n_in)
    return 6.0 * n_in * volt.v_lsb / (n_rows * full_scale_volts(adc, volt))


def solve_adc_for_gain(
    target_alpha: float,
    volt: VoltageParams,
    n_in: int,
    n_rows: int | None = None,
    slope_segments: int | None = None,
) -> AdcConfig:
    """Pick (slope_segments, c_dac) realizing a requested gate scale.

    Keeps the canonical 13-segment geometry scaled to the column height
    unless a segment count is forced, then solves the divider ratio for
    c_dac. The realized gain is adc_gain() of the result; store that, not
    the request (they differ at float rounding level).
    """
    if n_rows is None:
        n_rows = padded_rows(n_in)
    if slope_segments is None:
        slope_segments = max(1, round(13 * n_rows / 64))
    fs = 6.0 * n_in * volt.v_lsb / (n_rows * target_alpha)
    ratio = fs / volt.v_span
    if not (0 < ratio < 1):
        raise ValueError(
            f"gain {target_alpha} not realizable: needs full-scale ratio {ratio:.3g}"
        )
    c_sig = slope_segments * volt.c_unit
    c_dac = ratio * c_sig / (1.0 - ratio)
    return AdcConfig(slope_segments=slope_segments, c_dac=c_dac)


@dataclass
class LayerParams:
    """Quantized parameters of one recurrent block.

    w_h, w_z: 2 b weight codes, shape (n_out, n_in). b_z, b_h: 6 b bias
    codes per unit. adc: per-layer converter config. gate_scale: the
    calibrated alpha mapping the MAC mean into hard-sigmoid input units.
    theta_scale: value-domain size of one b_h code step. h_init: initial
    state per unit.

    candidate_bias and theta_offset are the two equivalent homes for a
    real-valued bias on the candidate state: an explicit additive term on
    h_tilde, or a shift folded into the comparator reference (the hardware
    form). bias_equivalence_transform() moves between them.
    """

    w_h: np.ndarray
    w_z: np.ndarray
    b_z: np.ndarray
    b_h: np.ndarray
    adc: AdcConfig = field(default_factory=AdcConfig)
    gate_scale: float = 2.0
    theta_scale: float = 0.25
    h_init: np.ndarray | None = None
    candidate_bias: np.ndarray | None = None
    theta_offset: np.ndarray | None = None

    def __post_init__(self):
        self.w_h = np.asarray(self.w_h, dtype=np.int64)
        self.w_z = np.asarray(self.w_z, dtype=np.int64)
        if self.w_h.ndim != 2 or self.w_h.shape != self.w_z.shape:
            raise ValueError("w_h and w_z must be 2-d with identical shapes")
        n_out = self.w_h.shape[0]
        self.b_z = np.asarray(self.b_z, dtype=np.int64)
        self.b_h = np.asarray(self.b_h, dtype=np.int64)
        if self.b_z.shape != (n_out,) or self.b_h.shape != (n_out,):
            raise ValueError("bias code vectors must have one entry per unit")
        for name, arr, hi in (("weight", self.w_h, 3), ("weight", self.w_z, 3),
                              ("bias", self.b_z, 63), ("bias", self.b_h, 63)):
            if arr.size and (arr.min() < 0 or arr.max() > hi):
                raise ValueError(f"{name} code out of range [0, {hi}]")
        if self.gate_scale <= 0:
            raise ValueError("gate_scale must be positive")
        if self.h_init is None:
            self.h_init = np.zeros(n_out)
        self.h_init = np.asarray(self.h_init, dtype=np.float64)
        if self.h_init.shape != (n_out,):
            raise ValueError("h_init must have one entry per unit")
        if self.h_init.size and np.abs(self.h_init).max() > 3.0:
            # states are convex mixes of candidates in [-3, 3]; an initial
            # value outside that range could never recur and breaks the
            # voltage-domain headroom assumptions
            raise ValueError("|h_init| must not exceed 3")
        for name in ("candidate_bias", "theta_offset"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.float64)
                if v.shape != (n_out,):
                    raise ValueError(f"{name} must have one entry per unit")
                setattr(self, name, v)

    @property
    def n_out(self) -> int:
        return self.w_h.shape[0]

    @property
    def n_in(self) -> int:
        return self.w_h.shape[1]

    @property
    def n_rows(self) -> int:
        return padded_rows(self.n_in)

    def candidate_bias_vec(self) -> np.ndarray:
        if self.candidate_bias is None:
            return np.zeros(self.n_out)
        return self.candidate_bias

    def thresholds(self) -> np.ndarray:
        """Per-unit output thresholds in value units."""
        theta = codes.output_threshold(self.b_h, self.theta_scale)
        if self.theta_offset is not None:
            theta = theta + self.theta_offset
        return theta

    def gate_bias_vec(self) -> np.ndarray:
        """Per-unit gate pre-activation offset: b_z plus the ADC layer trim."""
        return codes.gate_bias(self.b_z) + codes.adc_offset_bias(self.adc.offset_code)


def calibrate_layer(layer: LayerParams, volt: VoltageParams) -> LayerParams:
    """Return a copy whose gate_scale is the one this ADC actually realizes."""
    alpha = adc_gain(layer.adc, volt, layer.n_in, layer.n_rows)
    return replace(layer, gate_scale=alpha)


@dataclass(frozen=True)
class NetworkConfig:
    """Stack topology: layer_sizes[0] is the input width, the rest are
    recurrent block widths. Readout is the final block's state at the last
    step, argmax with ties to the lowest index."""

    layer_sizes: tuple
    readout: str = "last-step-argmax"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("need at least one recurrent layer")
        if any(s < 1 for s in sizes):
            raise ValueError("layer sizes must be positive")
        if self.readout != "last-step-argmax":
            raise ValueError(f"unknown readout mode {self.readout!r}")


@dataclass
class Model:
    """A network: topology plus per-layer parameters."""

    config: NetworkConfig
    layers: list

    def __post_init__(self):
        sizes = self.config.layer_sizes
        if len(self.layers) != len(sizes) - 1:
            raise ValueError("layer count does not match layer_sizes")
        for i, layer in enumerate(self.layers):
            if (layer.n_in, layer.n_out) != (sizes[i], sizes[i + 1]):
                raise ValueError(
                    f"layer {i} has shape {(layer.n_in, layer.n_out)}, "
                    f"expected {(sizes[i], sizes[i + 1])}"
                )

    @property
    def n_in(self) -> int:
        return self.config.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.config.layer_sizes[-1]


def random_model(
    rng: np.random.Generator,
    layer_sizes,
    volt: VoltageParams | None = None,
    target_alpha: float = 2.0,
    random_h_init: bool = False,
) -> Model:
    """Draw a random calibrated model (weights, biases, per-layer ADC)."""
    if volt is None:
        volt = VoltageParams()
    cfg = NetworkConfig(tuple(layer_sizes))
    layers = []
    for n_in, n_out in zip(cfg.layer_sizes[:-1], cfg.layer_sizes[1:]):
        adc = solve_adc_for_gain(target_alpha, volt, n_in)
        layer = LayerParams(
            w_h=rng.integers(0, 4, size=(n_out, n_in)),
            w_z=rng.integers(0, 4, size=(n_out, n_in)),
            b_z=rng.integers(0, 64, size=n_out),
            b_h=rng.integers(0, 64, size=n_out),
            adc=adc,
            h_init=rng.uniform(-1.0, 1.0, size=n_out) if random_h_init else None,
        )
        layers.append(calibrate_layer(layer, volt))
    return Model(cfg, layers)
