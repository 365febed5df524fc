"""Quantization grid and calibration rules of the portable model format.

These constants mirror docs/model_format.md in the inference repository,
which is the single source of truth. Exported models are only valid if
they follow these rules exactly; prediction parity with the inference
engines depends on it.

* weights: 2 b codes 0..3 with values 2*code - 3 (i.e. -3, -1, +1, +3)
* gate bias b_z: 6 b, neutral 32, one code = 6/32 pre-activation units
* output threshold b_h: 6 b, neutral 32, theta = -(code - 32) * theta_scale
* gate value: code = clamp(floor((64*a + 192) / 6), 0, 63), z_eff = code/64
  (the fused, float-exact form of floor(64 * hard_sigmoid(a)))
* columns span whole 64-row core segments; layers with fewer inputs pad
* gate_scale must equal 6 * n_in * v_lsb / (n_rows * full_scale), with
  full_scale = c_dac / (slope_segments * c_unit + c_dac) * (v_ref_hi - v_ref_lo)
"""

FORMAT_VERSION = 1
MODEL_SUFFIX = ".mgru.json"

WEIGHT_VALUES = (-3.0, -1.0, 1.0, 3.0)
GATE_BIAS_STEP = 6.0 / 32.0
THETA_SCALE = 0.25
CORE_ROWS = 64

# default voltage block written alongside exported models
VOLTAGES = {
    "v0": 0.5,
    "v_lsb": 0.0625,
    "v_ref_lo": 0.0,
    "v_ref_hi": 1.0,
    "c_unit": 1.0,
}


def padded_rows(n_in: int) -> int:
    return CORE_ROWS * ((n_in + CORE_ROWS - 1) // CORE_ROWS)


def solve_adc(target_alpha: float, n_in: int):
    """Slope segments and DAC capacitance realizing a gate scale.

    Mirrors the inference stack's calibration recipe operation for
    operation so the realized gain matches bit for bit.
    """
    v_lsb = VOLTAGES["v_lsb"]
    v_span = VOLTAGES["v_ref_hi"] - VOLTAGES["v_ref_lo"]
    c_unit = VOLTAGES["c_unit"]
    n_rows = padded_rows(n_in)
    slope_segments = max(1, round(13 * n_rows / 64))
    fs = 6.0 * n_in * v_lsb / (n_rows * target_alpha)
    ratio = fs / v_span
    if not (0 < ratio < 1):
        raise ValueError(f"gain {target_alpha} not realizable")
    c_sig = slope_segments * c_unit
    c_dac = ratio * c_sig / (1.0 - ratio)
    return slope_segments, c_dac


def realized_gain(slope_segments: int, c_dac: float, n_in: int) -> float:
    v_lsb = VOLTAGES["v_lsb"]
    v_span = VOLTAGES["v_ref_hi"] - VOLTAGES["v_ref_lo"]
    c_unit = VOLTAGES["c_unit"]
    n_rows = padded_rows(n_in)
    fs = (c_dac / (slope_segments * c_unit + c_dac)) * v_span
    return 6.0 * n_in * v_lsb / (n_rows * fs)
