"""Benchmark the numba loop kernels against the vectorized numpy fallback.

Runs both engines' layer kernels directly (no env juggling needed: the two
kernel modules are imported side by side) on a 4-core-sized stack and
reports per-sequence wall time plus the speedup.

    python3 benchmarks/bench_backends.py [--steps 784] [--repeats 5]
"""

import argparse
import time

import numpy as np


def build(rng, sizes):
    from capgru.params import random_model

    return random_model(rng, sizes, random_h_init=True)


def run_ideal(kern, model, x):
    from capgru import codes

    for layer in model.layers:
        z, ht, h, out = kern.ideal_layer_forward(
            x,
            codes.weight_value(layer.w_h),
            codes.weight_value(layer.w_z),
            layer.gate_scale,
            layer.gate_bias_vec(),
            layer.candidate_bias_vec(),
            layer.thresholds(),
            layer.h_init.copy(),
        )
        x = out.astype(np.float64)
    return h


def run_circuit(kern, model, volt, x):
    import capgru.circuit as circ

    old = circ._K
    circ._K = kern
    try:
        return circ.CircuitEngine(model, volt).run(x)
    finally:
        circ._K = old


def time_fn(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=784)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    from capgru import _kern_numpy
    from capgru.backend import BACKEND
    from capgru.params import VoltageParams

    if BACKEND != "numba":
        raise SystemExit(
            "numba backend unavailable (CAPGRU_BACKEND=numpy?); nothing to compare"
        )
    from capgru import _kern_loops

    rng = np.random.default_rng(0)
    volt = VoltageParams()
    model = build(rng, (1, 64, 64, 64, 64, 10))
    x = (rng.random((args.steps, 1)) < 0.5).astype(np.float64)

    # compile outside the timed region
    run_ideal(_kern_loops, model, x[:4])
    run_circuit(_kern_loops, model, volt, x[:4])

    rows = []
    for name, kern in (("numba", _kern_loops), ("numpy", _kern_numpy)):
        t_ideal = time_fn(lambda k=kern: run_ideal(k, model, x), args.repeats)
        t_circ = time_fn(lambda k=kern: run_circuit(k, model, volt, x), args.repeats)
        rows.append((name, t_ideal, t_circ))

    print(f"stack 1-64-64-64-64-10, {args.steps} steps, best of {args.repeats}")
    print(f"{'backend':<8} {'ideal (s)':>12} {'circuit (s)':>12}")
    for name, ti, tc in rows:
        print(f"{name:<8} {ti:>12.4f} {tc:>12.4f}")
    (_, i0, c0), (_, i1, c1) = rows
    print(f"speedup   {i1 / i0:>11.1f}x {c1 / c0:>11.1f}x")


if __name__ == "__main__":
    main()
