"""Command-line front end.

Subcommands:

* ``simulate``   run a model over a dataset with either engine; emits a
                 predictions CSV and optional trace CSVs
* ``compare``    run both engines on the same data and diff the recorded
                 gate codes and states; nonzero exit on divergence
* ``train``      desk-scale quantization-aware training from a JSON config
* ``energy``     per-step dissipation report for a circuit-engine run
* ``sweep-adc``  converter staircase families over slope/offset grids

Exit codes: 0 success, 1 tolerance or assertion failure, 2 usage/IO error.
The default output directory can be set via CAPGRU_OUT.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

OUT_ENV = "CAPGRU_OUT"


class CliError(Exception):
    """Usage or IO problem; maps to exit code 2."""


def _out_dir(args):
    out = args.out or os.environ.get(OUT_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_model(path):
    from capgru import modelio

    try:
        return modelio.load_model(path)
    except (OSError, modelio.ModelFormatError) as e:
        raise CliError(f"cannot load model {path}: {e}") from e


def _load_data(args):
    from capgru.modelio import DatasetSource, load_dataset

    spec = args.data
    if spec is None:
        raise CliError("--data is required")
    try:
        if ":" in spec and not spec.endswith(".csv"):
            images, labels = spec.split(":", 1)
            src = DatasetSource(
                "idx",
                images=images,
                labels=labels or None,
                threshold=args.threshold,
                presentation=args.presentation,
            )
        else:
            src = DatasetSource("csv", csv_path=spec, width=args.width)
        seqs, labels = load_dataset(src)
    except (OSError, ValueError) as e:
        raise CliError(f"cannot load dataset {spec}: {e}") from e
    if len(seqs) == 0:
        raise CliError(f"no sequences in dataset {spec}")
    if args.limit:
        seqs = seqs[: args.limit]
        labels = labels[: args.limit] if labels is not None else None
    return seqs, labels


def _engine(kind, bundle, args):
    from capgru.circuit import CircuitEngine
    from capgru import ideal

    if kind == "ideal":
        class _IdealRunner:
            def run(self, x):
                return ideal.forward_sequential(x, bundle.model)

        return _IdealRunner()
    if kind == "circuit":
        return CircuitEngine(
            bundle.model,
            bundle.volt,
            mismatch_sigma=args.mismatch_sigma,
            seed=args.seed,
            check_charge=False,
        )
    raise CliError(f"unknown engine {kind!r}")


def cmd_simulate(args):
    from capgru import modelio

    bundle = _load_model(args.model)
    seqs, labels = _load_data(args)
    out_dir = _out_dir(args)
    engine = _engine(args.engine, bundle, args)
    pred_path = os.path.join(out_dir, f"predictions_{args.engine}.csv")
    with open(pred_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sequence", "prediction"] + (["label"] if labels is not None else []))
        for i, x in enumerate(seqs):
            res = engine.run(x)
            row = [i, res.prediction]
            if labels is not None:
                row.append(int(labels[i]))
            w.writerow(row)
            if args.traces:
                modelio.write_trace_csv(
                    os.path.join(out_dir, f"trace_{args.engine}_{i:04d}.csv"), res
                )
    print(f"wrote {pred_path}")
    return 0


def cmd_compare(args):
    from capgru import ideal
    from capgru.circuit import CircuitEngine

    bundle = _load_model(args.model)
    seqs, _ = _load_data(args)
    circuit = CircuitEngine(
        bundle.model,
        bundle.volt,
        mismatch_sigma=args.mismatch_sigma,
        seed=args.seed,
    )
    worst = {"z": 0.0, "h_tilde": 0.0, "h": 0.0}
    first_divergence = None
    for si, x in enumerate(seqs):
        ri = ideal.forward_sequential(x, bundle.model)
        rc = circuit.run(x)
        for li, (a, b) in enumerate(zip(ri.traces, rc.traces)):
            dz = np.abs(a.z_code - b.z_code).astype(float)
            dht = np.abs(a.h_tilde - b.h_tilde)
            dh = np.abs(a.h - b.h)
            worst["z"] = max(worst["z"], float(dz.max()))
            worst["h_tilde"] = max(worst["h_tilde"], float(dht.max()))
            worst["h"] = max(worst["h"], float(dh.max()))
            if first_divergence is None:
                bad = np.maximum(np.maximum(dz, dht), dh) > args.tolerance
                if bad.any():
                    t, j = np.argwhere(bad)[0]
                    first_divergence = (si, int(t), li, int(j))
    print(
        "max |dz|={z:.3e} |dh~|={h_tilde:.3e} |dh|={h:.3e}".format(**worst)
    )
    if max(worst.values()) > args.tolerance:
        seq, step, layer, unit = first_divergence
        print(
            f"FIRST DIVERGENCE at sequence {seq}, step {step}, "
            f"layer {layer}, unit {unit} (tolerance {args.tolerance:g})"
        )
        return 1
    print(f"engines agree within {args.tolerance:g}")
    return 0


def cmd_train(args):
    from capgru import modelio
    from capgru.train import TrainConfig, run_schedule

    try:
        with open(args.config) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CliError(f"cannot read train config {args.config}: {e}") from e
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        config = TrainConfig(**raw)
    except TypeError as e:
        raise CliError(f"bad train config: {e}") from e
    out_dir = _out_dir(args)
    result = run_schedule(config)
    model_path = os.path.join(out_dir, "trained" + modelio.MODEL_SUFFIX)
    modelio.save_model(model_path, result.model, result.volt)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    with open(metrics_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["phase", "epoch", "loss", "train_acc", "test_acc", "flag"])
        w.writerows(result.metrics)
    final = result.metrics[-1]
    print(
        f"wrote {model_path} and {metrics_path}; final phase {final[0]} "
        f"test accuracy {final[4]:.4f} in {result.wall_seconds:.1f}s"
    )
    return 0


def cmd_energy(args):
    from capgru.circuit import CircuitEngine
    from capgru.energy import EnergyParams, energy_of_step, worst_case_bound

    bundle = _load_model(args.model)
    seqs, _ = _load_data(args)
    params = EnergyParams()
    if args.energy_config:
        try:
            with open(args.energy_config) as f:
                raw = json.load(f)
            params = EnergyParams(**raw)
        except (OSError, json.JSONDecodeError, TypeError, ValueError) as e:
            raise CliError(f"bad energy config {args.energy_config}: {e}") from e
    engine = CircuitEngine(bundle.model, bundle.volt, mismatch_sigma=args.mismatch_sigma,
                           seed=args.seed)
    out_dir = _out_dir(args)
    path = os.path.join(out_dir, "energy.csv")
    grand_total = 0.0
    bound_total = 0.0
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sequence", "step", "e_precharge_j", "e_share_j", "e_swap_j",
                    "e_switch_j", "e_total_j"])
        for i, x in enumerate(seqs):
            engine.run(x)
            report = energy_of_step(engine.last_energy, params)
            for step, *vals in report.rows():
                w.writerow([i, step] + [repr(float(v)) for v in vals])
            grand_total += report.total
            bound_total += worst_case_bound(bundle.model, params, bundle.volt,
                                            steps=x.shape[0])
    print(f"wrote {path}")
    print(f"measured total: {grand_total:.4e} J; worst-case bound: {bound_total:.4e} J")
    return 0


def cmd_sweep_adc(args):
    from capgru.circuit import sar_convert
    from capgru.params import AdcConfig, full_scale_volts, VoltageParams

    volt = VoltageParams()
    slopes = [int(s) for s in args.slope_segments.split(",") if s]
    offsets = [int(s) for s in args.offset_codes.split(",") if s]
    if not slopes or not offsets or args.points < 1:
        raise CliError("empty sweep range")
    out_dir = _out_dir(args)
    path = os.path.join(out_dir, "adc_sweep.csv")
    lo = volt.v0 - 0.6 * volt.v_span
    hi = volt.v0 + 0.6 * volt.v_span
    vins = np.linspace(lo, hi, args.points)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["slope_segments", "offset_code", "v_in", "code"])
        for s in slopes:
            for o in offsets:
                try:
                    adc = AdcConfig(slope_segments=s, c_dac=args.c_dac, offset_code=o)
                    full_scale_volts(adc, volt)
                except ValueError as e:
                    raise CliError(f"bad converter config: {e}") from e
                for v in vins:
                    w.writerow([s, o, repr(float(v)), sar_convert(float(v), adc, volt)])
    print(f"wrote {path}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="capgru",
        description="switched-capacitor gated-RNN simulation stack",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--model", help="model file (.mgru.json)")
        if data:
            sp.add_argument("--data", help="dataset: sequences.csv or images.idx:labels.idx")
            sp.add_argument("--threshold", type=float, default=0.5,
                            help="pixel binarization threshold in [0,1]")
            sp.add_argument("--presentation", choices=("pixel", "row"), default="pixel")
            sp.add_argument("--width", type=int, default=1,
                            help="inputs per step for CSV datasets")
            sp.add_argument("--limit", type=int, default=0,
                            help="use only the first N sequences")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
        sp.add_argument("--mismatch-sigma", type=float, default=0.0,
                        help="relative capacitor mismatch injected in the circuit engine")

    sp = sub.add_parser("simulate", help="run one engine over a dataset")
    common(sp)
    sp.add_argument("--engine", choices=("ideal", "circuit"), default="ideal")
    sp.add_argument("--traces", action="store_true", help="write per-sequence trace CSVs")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("compare", help="diff the two engines on the same data")
    common(sp)
    sp.add_argument("--tolerance", type=float, default=1e-12)
    sp.set_defaults(fn=cmd_compare)

    sp = sub.add_parser("train", help="run the quantization-aware schedule")
    sp.add_argument("--config", required=True, help="TrainConfig JSON")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("energy", help="dissipation report for a circuit run")
    common(sp)
    sp.add_argument("--energy-config", help="EnergyParams JSON (c_u, e_switch)")
    sp.set_defaults(fn=cmd_energy)

    sp = sub.add_parser("sweep-adc", help="converter staircase families")
    sp.add_argument("--slope-segments", default="1,2,4,8,16,32,64")
    sp.add_argument("--offset-codes", default="0,16,32,48,63")
    sp.add_argument("--points", type=int, default=256)
    sp.add_argument("--c-dac", type=float, default=3.0)
    sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
    sp.set_defaults(fn=cmd_sweep_adc)

    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
