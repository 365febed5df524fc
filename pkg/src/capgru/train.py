"""Desk-scale quantization-aware training.

Training runs on the float-parameter shadow of the deployed model:

    h_tilde = (W_h x) / n_in
    a       = alpha * (W_z x) / n_in + beta
    z       = gate(a)                      (sigmoid, later hard sigmoid + 6 b)
    h       = z * h_tilde + (1 - z) * h_prev
    out     = h, later heaviside(h - theta)

and hardens in four cumulative phases: float baseline, then 2 b weights and
6 b biases, then binary inter-layer activations, then the quantized hard
sigmoid gate. Every quantizer trains with a clipped-identity straight-
through estimator (heaviside uses a unit window around its threshold);
parameters are projected back onto the representable ranges after each
update so the estimator windows stay active.

Gradients are derived by hand. The recurrence is diagonal, so
backpropagation through time is a per-unit scalar chain:

    dL/dh_{t-1} += dL/dh_t * (1 - z_t)
    dL/dz_t      = dL/dh_t * (h_tilde_t - h_{t-1})
    dL/dh~_t     = dL/dh_t * z_t

The fully hardened forward pass is arithmetic-identical to the inference
engine, so an exported model reproduces training-time accuracy exactly.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from capgru import codes
from capgru.params import (
    LayerParams,
    Model,
    NetworkConfig,
    VoltageParams,
    adc_gain,
    calibrate_layer,
    solve_adc_for_gain,
)

WEIGHT_LIMIT = 3.0
GATE_BIAS_LIMIT = 6.0
THETA_LIMIT = 8.0  # 32 codes * 0.25 per code
HEAVISIDE_WINDOW = 1.0


@dataclass(frozen=True)
class QatPhase:
    name: str
    quantize_weights: bool = False
    binarize_output: bool = False
    hard_sigmoid_gate: bool = False
    quantize_gate: bool = False

    def flags(self):
        return (
            self.quantize_weights,
            self.binarize_output,
            self.hard_sigmoid_gate,
            self.quantize_gate,
        )


def default_schedule():
    return [
        QatPhase("float"),
        QatPhase("quant-weights", quantize_weights=True),
        QatPhase("binary-out", quantize_weights=True, binarize_output=True),
        QatPhase(
            "hard-gate",
            quantize_weights=True,
            binarize_output=True,
            hard_sigmoid_gate=True,
            quantize_gate=True,
        ),
    ]


@dataclass
class TrainConfig:
    layer_sizes: tuple = (1, 16, 2)
    task: str = "delayed-parity"
    seed: int = 0
    lr: float = 0.5
    momentum: float = 0.9
    grad_clip: float = 5.0
    batch_size: int = 64
    epochs: tuple = (8, 8, 8, 8)
    lr_decay: float = 0.97  # per-epoch multiplicative decay, reset each phase
    # hardening phases fine-tune the float solution, they should not re-learn
    phase_lr_scale: tuple = (1.0, 0.25, 0.25, 0.25)
    # delayed-parity: label = x[T-1-gap] xor x[T-1]
    parity_len: int = 12
    parity_gap: int = 4
    n_train: int = 2048
    n_test: int = 512
    # row-digits / idx
    threshold: float = 0.5
    subset: int = 1000
    idx_images: str | None = None
    idx_labels: str | None = None
    presentation: str = "row"
    alpha_target: float = 2.0
    # softmax temperature on the readout; states live in [-3, 3] so raw
    # logit gaps are small. Train-time only: argmax is scale-invariant.
    logit_temp: float = 4.0

    def __post_init__(self):
        if isinstance(self.epochs, int):
            self.epochs = (self.epochs,) * 4
        self.epochs = tuple(self.epochs)
        self.layer_sizes = tuple(self.layer_sizes)


# ---------------------------------------------------------------------------
# quantizers (forward values; estimator windows applied in backward)


def quantize_weight(w):
    """Nearest value in {-3,-1,+1,+3} (decision bounds at -2, 0, +2)."""
    return np.clip(2.0 * np.floor(w / 2.0) + 1.0, -3.0, 3.0)


def quantize_gate_bias(beta):
    code = np.clip(np.rint(beta / codes.GATE_BIAS_STEP) + 32, 0, 63)
    return (code - 32) * codes.GATE_BIAS_STEP


def quantize_threshold(theta, theta_scale):
    code = np.clip(np.rint(32 - theta / theta_scale), 0, 63)
    return -(code - 32) * theta_scale


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# parameters


@dataclass
class TrainState:
    """Float shadow parameters plus fixed per-layer calibration constants."""

    weights_h: list
    weights_z: list
    gate_bias: list
    thresholds: list
    alphas: list
    theta_scale: float
    sizes: tuple
    velocity: dict = field(default_factory=dict)

    @classmethod
    def init(cls, config: TrainConfig, volt: VoltageParams | None = None):
        rng = np.random.default_rng(config.seed)
        volt = volt or VoltageParams()
        sizes = config.layer_sizes
        wh, wz, gb, th, alphas = [], [], [], [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            wh.append(rng.normal(0.0, 1.5, size=(n_out, n_in)))
            wz.append(rng.normal(0.0, 1.5, size=(n_out, n_in)))
            # spread initial gate biases so units start as a filter bank of
            # distinct leak rates instead of one symmetric half-open gate
            gb.append(rng.uniform(-3.0, 3.0, size=n_out))
            th.append(np.zeros(n_out))
            # fixed gate scale: the one the per-layer converter realizes
            adc = solve_adc_for_gain(config.alpha_target, volt, n_in)
            alphas.append(adc_gain(adc, volt, n_in))
        return cls(wh, wz, gb, th, alphas, 0.25, sizes)

    def zero_like_grads(self):
        return {
            "weights_h": [np.zeros_like(w) for w in self.weights_h],
            "weights_z": [np.zeros_like(w) for w in self.weights_z],
            "gate_bias": [np.zeros_like(b) for b in self.gate_bias],
            "thresholds": [np.zeros_like(t) for t in self.thresholds],
        }


def effective_params(state: TrainState, layer: int, phase: QatPhase):
    wh, wz = state.weights_h[layer], state.weights_z[layer]
    beta, theta = state.gate_bias[layer], state.thresholds[layer]
    if phase.quantize_weights:
        wh, wz = quantize_weight(wh), quantize_weight(wz)
        beta = quantize_gate_bias(beta)
        theta = quantize_threshold(theta, state.theta_scale)
    return wh, wz, beta, theta


# ---------------------------------------------------------------------------
# forward / backward


def forward_train(x, labels, state: TrainState, phase: QatPhase, logit_temp=1.0):
    """Batched forward pass. x: (B, T, n_in), labels: (B,). Returns
    (loss, cache); the cache carries every intermediate the hand-derived
    backward pass needs."""
    B, T, n_in = x.shape
    if n_in != state.sizes[0]:
        raise ValueError("input width does not match configuration")
    cache = {"phase": phase, "layers": [], "labels": labels, "state": state,
             "logit_temp": logit_temp}
    for li in range(len(state.sizes) - 1):
        wh, wz, beta, theta = effective_params(state, li, phase)
        alpha = state.alphas[li]
        n_in_l = wh.shape[1]
        m_z = np.einsum("bti,ji->btj", x, wz)
        a = (alpha * m_z) / n_in_l + beta
        if phase.hard_sigmoid_gate:
            sig = codes.hard_sigmoid(a)
        else:
            sig = _sigmoid(a)
        if phase.quantize_gate:
            z = codes.gate_code_from_preactivation(a) / 64.0
        else:
            z = sig
        h_tilde = np.einsum("bti,ji->btj", x, wh) / n_in_l
        h = np.empty_like(h_tilde)
        h_prev = np.zeros((B, wh.shape[0]))
        for t in range(T):
            h_prev = z[:, t] * h_tilde[:, t] + (1.0 - z[:, t]) * h_prev
            h[:, t] = h_prev
        if phase.binarize_output:
            out = (h >= theta).astype(np.float64)
        else:
            out = h
        cache["layers"].append(
            {"x": x, "a": a, "sig": sig, "z": z, "h_tilde": h_tilde, "h": h,
             "theta": theta, "wh": wh, "wz": wz, "alpha": alpha}
        )
        x = out
    logits = cache["layers"][-1]["h"][:, -1]
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError(
            "non-finite activations in forward pass (diverged training?)"
        )
    scaled = logit_temp * logits
    shifted = scaled - scaled.max(axis=1, keepdims=True)
    expv = np.exp(shifted)
    probs = expv / expv.sum(axis=1, keepdims=True)
    nll = -np.log(probs[np.arange(B), labels] + 1e-300)
    cache["probs"] = probs
    cache["logits"] = logits
    return float(nll.mean()), cache


def backward_train(cache):
    """Hand-derived gradients for the cached forward pass."""
    state: TrainState = cache["state"]
    phase: QatPhase = cache["phase"]
    labels = cache["labels"]
    probs = cache["probs"]
    B = probs.shape[0]
    n_layers = len(cache["layers"])

    grads = state.zero_like_grads()
    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    dlogits *= cache["logit_temp"] / B

    dx_above = None
    for li in range(n_layers - 1, -1, -1):
        lc = cache["layers"][li]
        x, a, sig, z = lc["x"], lc["a"], lc["sig"], lc["z"]
        h_tilde, h, theta = lc["h_tilde"], lc["h"], lc["theta"]
        wh, wz, alpha = lc["wh"], lc["wz"], lc["alpha"]
        Bb, T, n_out = h.shape
        n_in = wh.shape[1]

        dh = np.zeros_like(h)
        if li == n_layers - 1:
            dh[:, -1] = dlogits
        else:
            if phase.binarize_output:
                window = (np.abs(h - theta) <= HEAVISIDE_WINDOW).astype(np.float64)
                dh += dx_above * window
                grads["thresholds"][li] -= (dx_above * window).sum(axis=(0, 1))
            else:
                dh += dx_above

        da = np.zeros_like(a)
        dht = np.zeros_like(h_tilde)
        carry = np.zeros((Bb, n_out))
        for t in range(T - 1, -1, -1):
            g = dh[:, t] + carry
            h_prev = h[:, t - 1] if t > 0 else np.zeros((Bb, n_out))
            dz = g * (h_tilde[:, t] - h_prev)
            dht[:, t] = g * z[:, t]
            carry = g * (1.0 - z[:, t])
            # gate quantizer: straight-through identity
            if phase.hard_sigmoid_gate:
                da[:, t] = dz * (np.abs(a[:, t]) < 3.0) / 6.0
            else:
                da[:, t] = dz * sig[:, t] * (1.0 - sig[:, t])

        grads["gate_bias"][li] += da.sum(axis=(0, 1))
        grads["weights_z"][li] += (alpha / n_in) * np.einsum("btj,bti->ji", da, x)
        grads["weights_h"][li] += np.einsum("btj,bti->ji", dht, x) / n_in
        dx_above = (alpha / n_in) * np.einsum("btj,ji->bti", da, wz)
        dx_above += np.einsum("btj,ji->bti", dht, wh) / n_in

    if phase.quantize_weights:
        # clipped-identity estimators: no gradient outside the code range
        for li in range(n_layers):
            grads["weights_h"][li] *= np.abs(state.weights_h[li]) <= WEIGHT_LIMIT
            grads["weights_z"][li] *= np.abs(state.weights_z[li]) <= WEIGHT_LIMIT
            grads["gate_bias"][li] *= np.abs(state.gate_bias[li]) <= GATE_BIAS_LIMIT
            grads["thresholds"][li] *= np.abs(state.thresholds[li]) <= THETA_LIMIT
    return grads


def sgd_update(state: TrainState, grads, lr, momentum, grad_clip):
    total = 0.0
    for key in grads:
        for g in grads[key]:
            total += float((g * g).sum())
    norm = np.sqrt(total)
    scale = 1.0 if norm <= grad_clip else grad_clip / norm
    for key in grads:
        params = getattr(state, key)
        for li, g in enumerate(grads[key]):
            vkey = (key, li)
            v = state.velocity.get(vkey)
            v = momentum * v - lr * scale * g if v is not None else -lr * scale * g
            state.velocity[vkey] = v
            params[li] = params[li] + v
    # projection keeps every parameter inside its estimator window
    for li in range(len(state.weights_h)):
        np.clip(state.weights_h[li], -WEIGHT_LIMIT, WEIGHT_LIMIT, out=state.weights_h[li])
        np.clip(state.weights_z[li], -WEIGHT_LIMIT, WEIGHT_LIMIT, out=state.weights_z[li])
        np.clip(state.gate_bias[li], -GATE_BIAS_LIMIT, GATE_BIAS_LIMIT, out=state.gate_bias[li])
        np.clip(state.thresholds[li], -THETA_LIMIT, THETA_LIMIT, out=state.thresholds[li])


# ---------------------------------------------------------------------------
# tasks


def make_delayed_parity(rng, n, length, gap):
    """Binary sequences labeled by x[T-1-gap] xor x[T-1]."""
    if gap < 1 or gap >= length:
        raise ValueError("gap must lie inside the sequence")
    x = (rng.random((n, length, 1)) < 0.5).astype(np.float64)
    y = (x[:, -1 - gap, 0].astype(np.int64) ^ x[:, -1, 0].astype(np.int64))
    return x, y


def load_digit_rows(threshold=0.5):
    """Bundled 8x8 digit images, one row per step (offline row-image task)."""
    from sklearn.datasets import load_digits

    digits = load_digits()
    images = digits.images / 16.0
    seqs = (images >= threshold).astype(np.float64)
    return seqs, digits.target.astype(np.int64)


def task_data(config: TrainConfig):
    rng = np.random.default_rng(config.seed + 1)
    if config.task == "delayed-parity":
        xtr, ytr = make_delayed_parity(rng, config.n_train, config.parity_len, config.parity_gap)
        xte, yte = make_delayed_parity(rng, config.n_test, config.parity_len, config.parity_gap)
        return xtr, ytr, xte, yte
    if config.task == "row-digits":
        seqs, labels = load_digit_rows(config.threshold)
        idx = rng.permutation(len(seqs))
        seqs, labels = seqs[idx], labels[idx]
        n = min(config.subset, len(seqs) - config.n_test)
        return seqs[:n], labels[:n], seqs[n : n + config.n_test], labels[n : n + config.n_test]
    if config.task == "idx":
        from capgru.modelio import load_idx

        seqs, labels = load_idx(
            config.idx_images, config.threshold, config.presentation, config.idx_labels
        )
        idx = rng.permutation(len(seqs))
        seqs, labels = seqs[idx], labels[idx]
        n = min(config.subset, len(seqs) - config.n_test)
        return seqs[:n], labels[:n], seqs[n : n + config.n_test], labels[n : n + config.n_test]
    raise ValueError(f"unknown task {config.task!r}")


# ---------------------------------------------------------------------------
# schedule


def evaluate(x, labels, state: TrainState, phase: QatPhase, batch=512):
    correct = 0
    for lo in range(0, len(x), batch):
        _, cache = forward_train(x[lo : lo + batch], labels[lo : lo + batch], state, phase)
        correct += int((cache["logits"].argmax(axis=1) == labels[lo : lo + batch]).sum())
    return correct / len(x)


def calibrate_thresholds(state: TrainState, x_sample, labels_sample, prev_phase: QatPhase):
    """Initialize comparator thresholds from pre-binarization statistics.

    Thresholds are inert until binarize_output turns on, so they carry no
    training signal from earlier phases. Setting each one to the median of
    its unit's state keeps the new binary features balanced and inside the
    estimator window when the binarization phase starts.
    """
    _, cache = forward_train(x_sample, labels_sample, state, prev_phase)
    for li, lc in enumerate(cache["layers"][:-1]):
        med = np.median(lc["h"], axis=(0, 1))
        state.thresholds[li] = np.clip(med, -THETA_LIMIT, THETA_LIMIT)
        state.velocity.pop(("thresholds", li), None)


def export_model(state: TrainState, config: TrainConfig,
                 volt: VoltageParams | None = None) -> Model:
    """Quantize the float shadow into a portable, calibrated model."""
    volt = volt or VoltageParams()
    layers = []
    for li, (n_in, n_out) in enumerate(zip(state.sizes[:-1], state.sizes[1:])):
        wh = quantize_weight(state.weights_h[li])
        wz = quantize_weight(state.weights_z[li])
        b_z = np.clip(np.rint(state.gate_bias[li] / codes.GATE_BIAS_STEP) + 32, 0, 63)
        b_h = np.clip(np.rint(32 - state.thresholds[li] / state.theta_scale), 0, 63)
        adc = solve_adc_for_gain(config.alpha_target, volt, n_in)
        layer = LayerParams(
            w_h=codes.weight_code(wh),
            w_z=codes.weight_code(wz),
            b_z=b_z.astype(np.int64),
            b_h=b_h.astype(np.int64),
            adc=adc,
            theta_scale=state.theta_scale,
        )
        layers.append(calibrate_layer(layer, volt))
    return Model(NetworkConfig(state.sizes), layers)


@dataclass
class ScheduleResult:
    model: Model
    volt: VoltageParams
    metrics: list  # rows: (phase, epoch, loss, train_acc, test_acc, flag)
    state: TrainState
    wall_seconds: float


def run_schedule(config: TrainConfig, volt: VoltageParams | None = None) -> ScheduleResult:
    """Execute all phases in order and export the hardened model."""
    t0 = time.monotonic()
    volt = volt or VoltageParams()
    schedule = default_schedule()
    if len(config.epochs) != len(schedule):
        raise ValueError("need one epoch count per phase")
    prev_flags = (False,) * 4
    for phase in schedule:
        flags = phase.flags()
        if any(p and not f for p, f in zip(prev_flags, flags)):
            raise ValueError("phases must only ever add constraints")
        prev_flags = flags

    xtr, ytr, xte, yte = task_data(config)
    n_classes = config.layer_sizes[-1]
    chance = 1.0 / n_classes
    state = TrainState.init(config, volt)
    rng = np.random.default_rng(config.seed + 2)
    metrics = []
    for pi, phase in enumerate(schedule):
        if phase.binarize_output and not schedule[pi - 1].binarize_output:
            sel = rng.permutation(len(xtr))[: min(512, len(xtr))]
            calibrate_thresholds(state, xtr[sel], ytr[sel], schedule[pi - 1])
        phase_accs = []
        for epoch in range(config.epochs[pi]):
            lr = config.lr * config.phase_lr_scale[pi] * config.lr_decay**epoch
            order = rng.permutation(len(xtr))
            losses = []
            for lo in range(0, len(order), config.batch_size):
                sel = order[lo : lo + config.batch_size]
                loss, cache = forward_train(
                    xtr[sel], ytr[sel], state, phase, config.logit_temp
                )
                grads = backward_train(cache)
                sgd_update(state, grads, lr, config.momentum, config.grad_clip)
                losses.append(loss)
            train_acc = evaluate(xtr, ytr, state, phase)
            test_acc = evaluate(xte, yte, state, phase)
            phase_accs.append(test_acc)
            metrics.append((phase.name, epoch, float(np.mean(losses)), train_acc, test_acc, ""))
        if pi > 0 and phase_accs and max(phase_accs) < chance:
            # the whole phase sat below chance: mark the regression
            name, epoch, loss, tr, te, _ = metrics[-1]
            metrics[-1] = (name, epoch, loss, tr, te, "phase-regression")
    model = export_model(state, config, volt)
    return ScheduleResult(model, volt, metrics, state, time.monotonic() - t0)


# ---------------------------------------------------------------------------
# gradient checking


def gradcheck(state: TrainState, x, labels, phase=None, eps=1e-5):
    """Central-difference check of the analytic gradients on the smooth
    (float-phase) path. Returns the max relative error per parameter group."""
    if phase is None:
        phase = QatPhase("float")
    loss, cache = forward_train(x, labels, state, phase)
    grads = backward_train(cache)
    report = {}
    for key in ("weights_h", "weights_z", "gate_bias", "thresholds"):
        params = getattr(state, key)
        worst = 0.0
        for li, p in enumerate(params):
            it = np.nditer(p, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + eps
                lp, _ = forward_train(x, labels, state, phase)
                p[idx] = orig - eps
                lm, _ = forward_train(x, labels, state, phase)
                p[idx] = orig
                num = (lp - lm) / (2 * eps)
                ana = grads[key][li][idx]
                denom = max(abs(num), abs(ana), 1e-8)
                worst = max(worst, abs(num - ana) / denom)
                it.iternext()
        report[key] = worst
    return report
