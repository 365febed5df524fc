import numpy as np
import pytest
from hypothesis import given, strategies as st

from capgru import codes


def test_weight_value_map():
    assert list(codes.weight_value(np.arange(4))) == [-3.0, -1.0, 1.0, 3.0]


def test_weight_value_rejects_out_of_range():
    with pytest.raises(ValueError):
        codes.weight_value(np.array([4]))
    with pytest.raises(ValueError):
        codes.weight_value(np.array([-1]))


def test_weight_code_round_trip():
    vals = np.array([-3.0, -1.0, 1.0, 3.0])
    assert np.array_equal(codes.weight_code(vals), np.arange(4))
    with pytest.raises(ValueError):
        codes.weight_code(np.array([0.5]))


def test_hard_sigmoid_branches():
    assert codes.hard_sigmoid(-3.0) == 0.0
    assert codes.hard_sigmoid(0.0) == 0.5
    assert codes.hard_sigmoid(4.0) == 1.0
    assert codes.hard_sigmoid(-10.0) == 0.0
    assert codes.hard_sigmoid(1.5) == pytest.approx(0.75)


@given(st.floats(-100, 100), st.floats(-100, 100))
def test_hard_sigmoid_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert codes.hard_sigmoid(lo) <= codes.hard_sigmoid(hi)


def test_quantize_gate_examples():
    assert codes.quantize_gate(0.0) == 0
    assert codes.quantize_gate(0.5) == 32
    # floor/clamp rule: sigma = 1 cannot reach a full overwrite
    assert codes.quantize_gate(1.0) == 63


def test_quantize_gate_rejects_out_of_range():
    with pytest.raises(ValueError):
        codes.quantize_gate(-0.01)
    with pytest.raises(ValueError):
        codes.quantize_gate(1.01)


@given(st.floats(0, 1))
def test_quantize_gate_bounds_and_floor(sigma):
    code = int(codes.quantize_gate(sigma))
    assert 0 <= code <= 63
    # code/64 never exceeds sigma by construction, and undershoots < 1/64
    assert code / 64.0 <= sigma or code == 63
    if sigma < 63 / 64:
        assert sigma - code / 64.0 < 1 / 64


def test_gate_code_matches_two_step_composition():
    rng = np.random.default_rng(7)
    a = rng.uniform(-8, 8, size=2000)
    direct = codes.gate_code_from_preactivation(a)
    composed = codes.quantize_gate(codes.hard_sigmoid(a))
    assert np.array_equal(direct, composed)


def test_gate_code_exact_on_dyadic_lattice():
    # pre-activations on the 1/64 grid sit exactly on quantizer edges; the
    # fused form must floor them exactly (k/64 maps to code k + 32)
    k = np.arange(-40, 40)
    a = k * (6.0 / 64.0)
    got = codes.gate_code_from_preactivation(a)
    want = np.clip(k + 32, 0, 63)
    assert np.array_equal(got, want)


def test_gate_bias_spans_symmetric_range():
    assert codes.gate_bias(32) == 0.0
    assert codes.gate_bias(0) == -6.0
    assert codes.gate_bias(63) == pytest.approx(6.0 - 6.0 / 32.0)


def test_adc_offset_step_is_half_a_bias_step():
    assert codes.adc_offset_bias(33) * 2 == codes.gate_bias(33)


def test_heaviside_tie_is_one():
    assert codes.heaviside(0.0) == 1
    assert codes.heaviside(-1e-300) == 0
    assert codes.heaviside(1.0) == 1


def test_output_threshold_sign():
    # higher codes lower the threshold (act as positive bias on h)
    assert codes.output_threshold(32, 0.25) == 0.0
    assert codes.output_threshold(36, 0.25) == -1.0
    assert codes.output_threshold(0, 0.25) == 8.0
