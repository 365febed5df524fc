"""Entry points: train a variant and export, or run the full ablation.

    qat-export train --variant fully-hardware --out runs/
    qat-export ablation --seeds 10 --out runs/

Both need MNIST_DIR pointing at the IDX files for the real task; pass
--task synthetic to exercise the machinery without it.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np


def cmd_train(args):
    from qat_export.export import save_model
    from qat_export.schedule import RunConfig, train_variant
    from qat_export.verify import export_and_verify

    cfg = RunConfig(
        variant=args.variant,
        seed=args.seed,
        task=args.task,
        layer_sizes=tuple(int(s) for s in args.layer_sizes.split("-")),
        limit_train=args.limit_train or None,
        limit_test=args.limit_test or None,
        epochs_per_phase=tuple(int(e) for e in args.epochs.split(",")),
        lr=args.lr,
        batch_size=args.batch_size,
    )
    res = train_variant(cfg)
    os.makedirs(args.out, exist_ok=True)
    model_path = os.path.join(args.out, f"{args.variant}.mgru.json")
    save_model(model_path, res.stack)
    with open(os.path.join(args.out, f"{args.variant}_metrics.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["phase", "epoch", "loss", "test_acc"])
        w.writerows(res.metrics)
    print(f"{args.variant}: accuracy {res.accuracy:.4f} in {res.wall_seconds:.0f}s")
    if args.verify and args.variant == "fully-hardware":
        from qat_export.schedule import load_task

        _, _, xte, _ = load_task(cfg, np.random.default_rng(cfg.seed))
        report = export_and_verify(
            res.stack, xte[: args.verify].numpy(), os.path.join(args.out, "verify")
        )
        status = "PASS" if report.passed else f"FAIL {report.mismatched[:5]}"
        print(f"verify vs primary engine on {report.n_sequences} sequences: {status}")
        return 0 if report.passed else 1
    return 0


def cmd_ablation(args):
    from qat_export.schedule import RunConfig, run_ablation

    cfg = RunConfig(
        task=args.task,
        layer_sizes=tuple(int(s) for s in args.layer_sizes.split("-")),
        epochs_per_phase=tuple(int(e) for e in args.epochs.split(",")),
        lr=args.lr,
        batch_size=args.batch_size,
    )
    table = run_ablation(cfg, seeds=range(args.seeds))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "ablation.json")
    with open(path, "w") as f:
        json.dump(table, f, indent=1, sort_keys=True)
    for variant, (mean, std) in table.items():
        print(f"{variant}: {mean:.4f} +/- {std:.4f}")
    print(f"wrote {path}")
    return 0


def main(argv=None):
    p = argparse.ArgumentParser(prog="qat-export")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", help="train one variant and export it")
    sp.add_argument("--variant", default="fully-hardware",
                    choices=("float-baseline", "quantized-weights", "fully-hardware"))
    sp.add_argument("--task", default="mnist", choices=("mnist", "synthetic"))
    sp.add_argument("--layer-sizes", default="1-64-64-64-64-10")
    sp.add_argument("--epochs", default="40,10,15,15")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--lr", type=float, default=3e-3)
    sp.add_argument("--batch-size", type=int, default=96)
    sp.add_argument("--limit-train", type=int, default=0)
    sp.add_argument("--limit-test", type=int, default=0)
    sp.add_argument("--verify", type=int, default=100,
                    help="verify N sequences against the primary engine (0 to skip)")
    sp.add_argument("--out", default="runs")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("ablation", help="three-variant accuracy table")
    sp.add_argument("--task", default="mnist", choices=("mnist", "synthetic"))
    sp.add_argument("--seeds", type=int, default=10)
    sp.add_argument("--layer-sizes", default="1-64-64-64-64-10")
    sp.add_argument("--epochs", default="40,10,15,15")
    sp.add_argument("--lr", type=float, default=3e-3)
    sp.add_argument("--batch-size", type=int, default=96)
    sp.add_argument("--out", default="runs")
    sp.set_defaults(fn=cmd_ablation)

    args = p.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
