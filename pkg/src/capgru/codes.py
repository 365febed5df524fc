"""Quantization primitives shared by every engine.

Code conventions, fixed across the whole stack:

* weights: 2 b codes ``{0,1,2,3}`` with values ``2*code - 3`` in
  ``{-3,-1,+1,+3}`` (four equidistant levels symmetric about zero, one
  level spacing = 2 value units = 2 * V_lsb in the voltage domain)
* gate bias ``b_z``: 6 b code, neutral at 32, one code = 3/16 input units
  (so the 6 b range spans [-6, +6) of gate pre-activation)
* output threshold ``b_h``: 6 b code, neutral at 32, scaled by the layer's
  ``theta_scale``; higher code lowers the threshold
* gate value ``z``: 6 b code, ``z_eff = code / 64`` (only 63 of the 64
  column capacitors sit in switchable binary groups, so z_eff tops out at
  63/64; this is deliberate and mirrored everywhere)
"""

import numpy as np

WEIGHT_VALUES = (-3.0, -1.0, 1.0, 3.0)

GATE_LEVELS = 64  # 6 b gate code, z_eff = code / 64
BIAS_NEUTRAL = 32  # 6 b bias codes are offsets around mid-scale

# one b_z code step, in hard-sigmoid input units (two ADC LSBs)
GATE_BIAS_STEP = 6.0 / 32.0
# one ADC offset code step, in hard-sigmoid input units (one ADC LSB)
ADC_OFFSET_STEP = 6.0 / 64.0


def weight_value(code):
    """Map 2 b weight codes to their synaptic values in {-3,-1,+1,+3}."""
    code = np.asarray(code)
    if code.size and (code.min() < 0 or code.max() > 3):
        raise ValueError("weight codes must lie in [0, 3]")
    return 2.0 * code - 3.0


def weight_code(value):
    """Inverse of :func:`weight_value`; values must sit on the level grid."""
    value = np.asarray(value)
    code = np.rint((value + 3.0) / 2.0).astype(np.int64)
    if np.any(np.abs(weight_value(np.clip(code, 0, 3)) - value) > 0):
        raise ValueError("value is not on the {-3,-1,+1,+3} grid")
    return code


def hard_sigmoid(x):
    """Piecewise-linear sigmoid: 0 below -3, 1 above +3, x/6 + 1/2 between."""
    return np.clip(np.asarray(x, dtype=np.float64) / 6.0 + 0.5, 0.0, 1.0)


def quantize_gate(sigma):
    """Quantize a gate activation in [0, 1] to its 6 b code.

    code = clamp(floor(sigma * 64), 0, 63). sigma = 1 maps to code 63,
    i.e. z_eff = 63/64 < 1: a full overwrite is not representable.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0.0) or np.any(sigma > 1.0):
        raise ValueError("gate activation must lie in [0, 1]")
    code = np.floor(sigma * GATE_LEVELS)
    return np.minimum(code, GATE_LEVELS - 1).astype(np.int64)


def gate_bias(b_z_code):
    """Gate pre-activation offset for a 6 b bias code (neutral at 32)."""
    return (np.asarray(b_z_code, dtype=np.float64) - BIAS_NEUTRAL) * GATE_BIAS_STEP


def adc_offset_bias(offset_code):
    """Pre-activation shift contributed by the ADC's own offset pre-set."""
    return (np.asarray(offset_code, dtype=np.float64) - BIAS_NEUTRAL) * ADC_OFFSET_STEP


def gate_code_from_preactivation(a):
    """Gate code for a pre-activation, quantize_gate(hard_sigmoid(a)) in exact form.

    Evaluates clamp(floor((64*a + 192) / 6), 0, 63). For pre-activations on
    the 1/64 dyadic grid (every calibrated configuration) the numerator is an
    exact integer-valued float, and a single correctly-rounded division by 6
    cannot move the floor across an integer, so the code is exact even on
    quantization boundaries where the naive two-step composition may round to
    the wrong side.
    """
    a = np.asarray(a, dtype=np.float64)
    u = np.floor((a * 64.0 + 192.0) / 6.0)
    return np.clip(u, 0, GATE_LEVELS - 1).astype(np.int64)


def output_threshold(b_h_code, theta_scale):
    """Comparator threshold for a 6 b code: higher code, lower threshold."""
    return -(np.asarray(b_h_code, dtype=np.float64) - BIAS_NEUTRAL) * theta_scale


def heaviside(x):
    """Binary step with the fixed tie rule theta(0) = 1."""
    return (np.asarray(x) >= 0.0).astype(np.uint8)
