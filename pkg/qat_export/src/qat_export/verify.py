"""Cross-runtime verification against the inference stack.

The only contact points with the inference side are its external
interfaces: the model file, the labeled-sequences CSV, the ``simulate``
subcommand, and the trace CSV schema. Parity means identical predicted
classes on every sequence and, when traces are requested, identical gate
codes at every (step, layer, unit).
"""

import csv
import os
import subprocess
import sys
from dataclasses import dataclass, field

import numpy as np
import torch

from qat_export.export import save_model
from qat_export.model import GatedStack

SIMULATE_CMD = [sys.executable, "-m", "capgru.cli"]


def write_sequences_csv(path, x, labels=None):
    """x: (N, T, n_in) binary array; rows are label,flat-values."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for i in range(x.shape[0]):
            label = int(labels[i]) if labels is not None else 0
            w.writerow([label] + [int(v) for v in np.asarray(x[i]).ravel()])


def run_primary_simulate(model_path, data_path, out_dir, width, engine="ideal",
                         traces=False):
    cmd = SIMULATE_CMD + [
        "simulate",
        "--model", str(model_path),
        "--data", str(data_path),
        "--engine", engine,
        "--width", str(width),
        "--out", str(out_dir),
    ]
    if traces:
        cmd.append("--traces")
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(
            f"primary simulate failed ({proc.returncode}): {proc.stderr}"
        )
    preds_path = os.path.join(out_dir, f"predictions_{engine}.csv")
    with open(preds_path) as f:
        rows = list(csv.DictReader(f))
    return [int(r["prediction"]) for r in rows]


def read_trace_z_codes(path):
    by_layer = {}
    with open(path) as f:
        for row in csv.DictReader(f):
            key = int(row["layer"])
            by_layer.setdefault(key, []).append(
                (int(row["step"]), int(row["unit"]), int(row["z_code"]))
            )
    out = []
    for li in sorted(by_layer):
        entries = by_layer[li]
        T = max(e[0] for e in entries) + 1
        n = max(e[1] for e in entries) + 1
        arr = np.zeros((T, n), dtype=np.int64)
        for t, j, zc in entries:
            arr[t, j] = zc
        out.append(arr)
    return out


@dataclass
class VerifyReport:
    n_sequences: int
    mismatched: list = field(default_factory=list)
    z_code_checked: int = 0
    z_code_mismatches: int = 0

    @property
    def passed(self):
        return not self.mismatched and self.z_code_mismatches == 0


def export_and_verify(stack: GatedStack, x, workdir, engine="ideal",
                      check_traces=4) -> VerifyReport:
    """Export the stack, run the primary engine on x, compare predictions.

    x: (N, T, n_in) binary numpy array or torch tensor. The first
    ``check_traces`` sequences are additionally compared gate code by gate
    code through the trace CSV interface.
    """
    os.makedirs(workdir, exist_ok=True)
    x = torch.as_tensor(np.asarray(x), dtype=torch.float64)
    model_path = os.path.join(workdir, "exported.mgru.json")
    data_path = os.path.join(workdir, "sequences.csv")
    save_model(model_path, stack)
    write_sequences_csv(data_path, x.numpy())

    logits, z_codes, _ = stack.hardened_run(x)
    own_preds = logits.argmax(dim=1).tolist()

    primary_preds = run_primary_simulate(
        model_path, data_path, workdir, width=x.shape[2], engine=engine,
        traces=check_traces > 0,
    )
    report = VerifyReport(n_sequences=len(own_preds))
    for i, (a, b) in enumerate(zip(own_preds, primary_preds)):
        if a != b:
            report.mismatched.append((i, a, b))

    for i in range(min(check_traces, x.shape[0])):
        trace_path = os.path.join(workdir, f"trace_{engine}_{i:04d}.csv")
        primary_z = read_trace_z_codes(trace_path)
        for li, arr in enumerate(primary_z):
            own = z_codes[li][i].numpy()
            report.z_code_checked += arr.size
            report.z_code_mismatches += int((own != arr).sum())
    return report
