"""Ideal (value-domain) engine for the hardware-constrained recurrent model.

Per unit and timestep, with binary inputs x and 2 b weight values:

    m_z      = sum_i x_i * w_z[i]                (integer MAC)
    a        = alpha * m_z / n_in + bias(b_z)    (gate pre-activation)
    z_code   = quantized hard sigmoid of a       (6 b, z_eff = code / 64)
    h_tilde  = sum_i x_i * w_h[i] / n_in         (candidate, mean of values)
    h        = z_eff * h_tilde + (1 - z_eff) * h (convex state mix)
    out      = 1 if h >= theta else 0            (comparator, tie -> 1)

Layers are stacked feed-forward; the binary outs of one layer drive the
next. The readout is the final layer's state at the last step. Everything
here is a pure function of its inputs, so runs are bit-reproducible.
"""

from dataclasses import dataclass

import numpy as np

from capgru import codes
from capgru.backend import get_kernels
from capgru.params import LayerParams, Model

_K = get_kernels()


@dataclass
class LayerTrace:
    """Per-layer recordings, time-major arrays of shape (T, n_out)."""

    z_code: np.ndarray
    h_tilde: np.ndarray
    h: np.ndarray
    out: np.ndarray


@dataclass
class RunResult:
    logits: np.ndarray
    prediction: int
    traces: list


def _check_binary(x):
    x = np.asarray(x, dtype=np.float64)
    if x.size and not np.all((x == 0.0) | (x == 1.0)):
        raise ValueError("inputs must be binary (0/1)")
    return x


def mac(w_row, x) -> int:
    """Weighted sum of a binary input vector, an exact integer."""
    w_row = np.asarray(w_row)
    x = _check_binary(x)
    if w_row.shape != x.shape:
        raise ValueError("weight row and input lengths differ")
    return int(np.dot(x, codes.weight_value(w_row)))


def gate_preactivation(m: int, layer: LayerParams, unit: int) -> float:
    """Hard-sigmoid input for an integer gate-line MAC value."""
    return (layer.gate_scale * m) / layer.n_in + layer.gate_bias_vec()[unit]


def gru_step(x, h_prev, layer: LayerParams):
    """One timestep of one layer: returns (h, z_code, h_tilde)."""
    x = _check_binary(x)
    if x.shape != (layer.n_in,):
        raise ValueError("input width does not match layer")
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if h_prev.shape != (layer.n_out,):
        raise ValueError("state width does not match layer")
    z_code, h_tilde, h, _ = _K.ideal_layer_forward(
        x[None, :],
        codes.weight_value(layer.w_h),
        codes.weight_value(layer.w_z),
        layer.gate_scale,
        layer.gate_bias_vec(),
        layer.candidate_bias_vec(),
        layer.thresholds(),
        h_prev.copy(),
    )
    return h[0], z_code[0], h_tilde[0]


def output_activation(h, b_h, theta_scale, theta_offset=None):
    """Comparator outputs: 1 where h clears its threshold (tie counts as on)."""
    theta = codes.output_threshold(np.asarray(b_h), theta_scale)
    if theta_offset is not None:
        theta = theta + np.asarray(theta_offset, dtype=np.float64)
    return codes.heaviside(np.asarray(h, dtype=np.float64) - theta)


def _run_layers(inputs, model: Model, layer_fn):
    x = _check_binary(inputs)
    if x.ndim != 2:
        raise ValueError("inputs must be (T, n_in)")
    if x.shape[0] < 1:
        raise ValueError("empty input sequence")
    if x.shape[1] != model.n_in:
        raise ValueError(
            f"input width {x.shape[1]} does not match model ({model.n_in})"
        )
    traces = []
    for layer in model.layers:
        z_code, h_tilde, h, out = layer_fn(x, layer)
        traces.append(LayerTrace(z_code, h_tilde, h, out.astype(np.uint8)))
        x = out.astype(np.float64)
    logits = traces[-1].h[-1]
    return RunResult(logits, int(np.argmax(logits)), traces)


def _layer_sequential(x, layer: LayerParams):
    return _K.ideal_layer_forward(
        x,
        codes.weight_value(layer.w_h),
        codes.weight_value(layer.w_z),
        layer.gate_scale,
        layer.gate_bias_vec(),
        layer.candidate_bias_vec(),
        layer.thresholds(),
        layer.h_init.copy(),
    )


def forward_sequential(inputs, model: Model) -> RunResult:
    """Step-by-step forward pass over all layers."""
    return _run_layers(inputs, model, _layer_sequential)


def _layer_scan(x, layer: LayerParams):
    # gate codes and candidates depend only on the input, so they vectorize
    # over time; only the state mix is recurrent, and its coefficients
    # compose associatively: (a2, b2) o (a1, b1) = (a2*a1, a2*b1 + b2).
    T = x.shape[0]
    m_z = x @ codes.weight_value(layer.w_z).T
    m_h = x @ codes.weight_value(layer.w_h).T
    a_pre = (layer.gate_scale * m_z) / layer.n_in + layer.gate_bias_vec()
    z_code = codes.gate_code_from_preactivation(a_pre)
    z = z_code / 64.0
    h_tilde = m_h / layer.n_in + layer.candidate_bias_vec()
    A = 1.0 - z
    B = z * h_tilde
    d = 1
    while d < T:
        A_new = A[d:] * A[:-d]
        B_new = A[d:] * B[:-d] + B[d:]
        A = np.concatenate([A[:d], A_new], axis=0)
        B = np.concatenate([B[:d], B_new], axis=0)
        d *= 2
    h = A * layer.h_init + B
    out = (h >= layer.thresholds()).astype(np.uint8)
    return z_code, h_tilde, h, out


def parallel_scan_forward(inputs, model: Model) -> RunResult:
    """Scan-based forward pass: within each layer the state recurrence is
    evaluated by an associative prefix scan over time (log-depth in array
    operations); layers still run in order because of the binary
    activations between them. Agrees with forward_sequential to float
    reassociation error (well under 1e-9 per element)."""
    return _run_layers(inputs, model, _layer_scan)


def bias_equivalence_transform(layer: LayerParams) -> LayerParams:
    """Fold an additive candidate bias into the comparator reference.

    A layer whose candidate carries an additive bias c (h_tilde + c, initial
    state i) produces, for every input and gate sequence, states exactly c
    above the plain layer started at i - c. Shifting the thresholds down by
    c therefore leaves every binary output unchanged. The returned layer has
    no candidate bias, thresholds theta - c, and initial state i - c.
    """
    c = layer.candidate_bias_vec()
    prev = (
        layer.theta_offset
        if layer.theta_offset is not None
        else np.zeros(layer.n_out)
    )
    out = LayerParams(
        w_h=layer.w_h,
        w_z=layer.w_z,
        b_z=layer.b_z,
        b_h=layer.b_h,
        adc=layer.adc,
        gate_scale=layer.gate_scale,
        theta_scale=layer.theta_scale,
        h_init=layer.h_init - c,
        candidate_bias=None,
        theta_offset=prev - c,
    )
    return out
