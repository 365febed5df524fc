"""Four-phase quantization-aware training and the three-model ablation.

Phases add constraints cumulatively: float baseline, 2 b weights and 6 b
biases, binary inter-layer activations, then the quantized hard-sigmoid
gate. The ablation's three variants stop the hardening at the matching
point:

* float-baseline      phase 1 only
* quantized-weights   phases 1-3 (quantized parameters, 1 b activations)
* fully-hardware      all four phases

Full sequential-MNIST runs need the IDX files (point MNIST_DIR at them)
and serious CPU time; every mechanism is also exercised by the fast
synthetic task in the tests.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from qat_export.data import load_mnist_sequences, synthetic_task
from qat_export.model import GatedStack, HardeningFlags

PHASES = ("float", "quant-weights", "binary-out", "hard-gate")


def phase_flags(name):
    return HardeningFlags(
        quantize_weights=name != "float",
        binarize_output=name in ("binary-out", "hard-gate"),
        hard_sigmoid_gate=name == "hard-gate",
        quantize_gate=name == "hard-gate",
    )


def variant_phases(variant):
    if variant == "float-baseline":
        return PHASES[:1]
    if variant == "quantized-weights":
        return PHASES[:3]
    if variant == "fully-hardware":
        return PHASES
    raise ValueError(f"unknown variant {variant!r}")


@dataclass
class RunConfig:
    variant: str = "fully-hardware"
    layer_sizes: tuple = (1, 64, 64, 64, 64, 10)
    seed: int = 0
    lr: float = 3e-3
    batch_size: int = 96
    epochs_per_phase: tuple = (40, 10, 15, 15)
    logit_temp: float = 8.0
    limit_train: int | None = None
    limit_test: int | None = None
    task: str = "mnist"  # or "synthetic"
    synthetic_n: int = 2048
    synthetic_len: int = 16
    synthetic_gap: int = 1


@dataclass
class RunResult:
    stack: GatedStack
    accuracy: float
    metrics: list = field(default_factory=list)
    wall_seconds: float = 0.0


def load_task(config: RunConfig, rng):
    if config.task == "mnist":
        xtr, ytr = load_mnist_sequences("train", limit=config.limit_train)
        xte, yte = load_mnist_sequences("test", limit=config.limit_test)
    else:
        xtr, ytr = synthetic_task(rng, config.synthetic_n, config.synthetic_len,
                                  config.synthetic_gap)
        xte, yte = synthetic_task(rng, config.synthetic_n // 4, config.synthetic_len,
                                  config.synthetic_gap)
    to = lambda a: torch.as_tensor(a, dtype=torch.float32)
    return to(xtr), torch.as_tensor(ytr), to(xte), torch.as_tensor(yte)


@torch.no_grad()
def accuracy(stack, flags, x, y, batch=512):
    hits = 0
    for lo in range(0, len(x), batch):
        logits = stack(x[lo : lo + batch], flags)
        hits += int((logits.argmax(dim=1) == y[lo : lo + batch]).sum())
    return hits / len(x)


def train_variant(config: RunConfig) -> RunResult:
    t0 = time.monotonic()
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    xtr, ytr, xte, yte = load_task(config, rng)
    stack = GatedStack(config.layer_sizes)
    phases = variant_phases(config.variant)
    metrics = []
    chance = 1.0 / config.layer_sizes[-1]
    for pi, phase in enumerate(phases):
        flags = phase_flags(phase)
        opt = torch.optim.Adam(stack.parameters(), lr=config.lr * (0.3 if pi else 1.0))
        epochs = config.epochs_per_phase[pi]
        for epoch in range(epochs):
            order = torch.randperm(len(xtr))
            losses = []
            for lo in range(0, len(order), config.batch_size):
                sel = order[lo : lo + config.batch_size]
                logits = stack(xtr[sel], flags)
                loss = torch.nn.functional.cross_entropy(
                    config.logit_temp * logits, ytr[sel]
                )
                opt.zero_grad()
                loss.backward()
                opt.step()
                stack.clamp_()
                losses.append(loss.item())
            acc = accuracy(stack, flags, xte, yte)
            metrics.append((phase, epoch, float(np.mean(losses)), acc))
        if pi == 0 and metrics and metrics[-1][3] < chance:
            raise RuntimeError(
                f"below-chance accuracy {metrics[-1][3]:.3f} after the float phase"
            )
    final_acc = metrics[-1][3] if metrics else float("nan")
    return RunResult(stack, final_acc, metrics, time.monotonic() - t0)


def run_ablation(config: RunConfig, seeds, variants=None):
    """Mean and standard deviation per variant across seeds."""
    variants = variants or ("float-baseline", "quantized-weights", "fully-hardware")
    table = {}
    for variant in variants:
        accs = []
        for seed in seeds:
            cfg = RunConfig(**{**config.__dict__, "variant": variant, "seed": seed})
            accs.append(train_variant(cfg).accuracy)
        table[variant] = (float(np.mean(accs)), float(np.std(accs)))
    return table
