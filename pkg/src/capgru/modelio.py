"""Portable serialization: model files, datasets, traces.

Model container is versioned JSON with canonical key order, so identical
models serialize to identical bytes (safe to hash). All quantized
parameters are stored as plain integers; only calibration constants and
initial states are floats (serialized via repr, which round-trips float64
exactly). Full schema: docs/model_format.md.

Datasets come from MNIST-style IDX files (big-endian dims, magic
0x00000803 for images / 0x00000801 for labels), or from a simple CSV of
labeled binary sequences.
"""

import csv
import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from capgru.ideal import LayerTrace, RunResult
from capgru.params import AdcConfig, LayerParams, Model, NetworkConfig, VoltageParams

FORMAT_VERSION = 1
MODEL_SUFFIX = ".mgru.json"


class ModelFormatError(ValueError):
    """Malformed model file."""


class ModelVersionError(ModelFormatError):
    """Unknown or unsupported format_version."""


class ModelRangeError(ModelFormatError):
    """A code field lies outside its legal range."""


class ModelDimError(ModelFormatError):
    """Array shapes are inconsistent with layer_sizes."""


@dataclass
class ModelBundle:
    model: Model
    volt: VoltageParams


def _layer_dict(layer: LayerParams) -> dict:
    d = {
        "n_in": layer.n_in,
        "n_out": layer.n_out,
        "w_h": layer.w_h.tolist(),
        "w_z": layer.w_z.tolist(),
        "b_z": layer.b_z.tolist(),
        "b_h": layer.b_h.tolist(),
        "adc": {
            "slope_segments": layer.adc.slope_segments,
            "offset_code": layer.adc.offset_code,
            "c_dac": layer.adc.c_dac,
        },
        "gate_scale": layer.gate_scale,
        "theta_scale": layer.theta_scale,
        "h_init": layer.h_init.tolist(),
    }
    if layer.theta_offset is not None and np.any(layer.theta_offset != 0.0):
        d["theta_offset"] = layer.theta_offset.tolist()
    return d


def dumps_model(model: Model, volt: VoltageParams | None = None) -> str:
    if volt is None:
        volt = VoltageParams()
    for layer in model.layers:
        if layer.candidate_bias is not None and np.any(layer.candidate_bias != 0.0):
            raise ModelFormatError(
                "candidate-bias form is not portable; apply "
                "bias_equivalence_transform before saving"
            )
    doc = {
        "format_version": FORMAT_VERSION,
        "layer_sizes": list(model.config.layer_sizes),
        "readout": model.config.readout,
        "voltages": {
            "v0": volt.v0,
            "v_lsb": volt.v_lsb,
            "v_ref_lo": volt.v_ref_lo,
            "v_ref_hi": volt.v_ref_hi,
            "c_unit": volt.c_unit,
        },
        "layers": [_layer_dict(layer) for layer in model.layers],
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def _require(cond, err_cls, msg):
    if not cond:
        raise err_cls(msg)


def _int_array(obj, name, lo, hi, shape):
    arr = np.asarray(obj)
    _require(arr.shape == shape, ModelDimError, f"{name} has shape {arr.shape}, expected {shape}")
    _require(
        arr.size == 0 or (np.issubdtype(arr.dtype, np.integer)
                          and arr.min() >= lo and arr.max() <= hi),
        ModelRangeError,
        f"{name} codes must be integers in [{lo}, {hi}]",
    )
    return arr.astype(np.int64)


def loads_model(text: str) -> ModelBundle:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"not valid JSON: {e}") from e
    _require(isinstance(doc, dict), ModelFormatError, "top level must be an object")
    version = doc.get("format_version")
    _require(version == FORMAT_VERSION, ModelVersionError,
             f"unsupported format_version {version!r}")
    sizes = doc.get("layer_sizes")
    _require(isinstance(sizes, list) and len(sizes) >= 2, ModelDimError,
             "layer_sizes must list input width plus at least one layer")
    v = doc.get("voltages", {})
    volt = VoltageParams(
        v0=v.get("v0", 0.5),
        v_lsb=v.get("v_lsb", 0.0625),
        v_ref_lo=v.get("v_ref_lo", 0.0),
        v_ref_hi=v.get("v_ref_hi", 1.0),
        c_unit=v.get("c_unit", 1.0),
    )
    raw_layers = doc.get("layers")
    _require(isinstance(raw_layers, list) and len(raw_layers) == len(sizes) - 1,
             ModelDimError, "layer count does not match layer_sizes")
    layers = []
    for idx, (raw, n_in, n_out) in enumerate(zip(raw_layers, sizes[:-1], sizes[1:])):
        name = f"layer {idx}"
        w_h = _int_array(raw.get("w_h"), f"{name} w_h", 0, 3, (n_out, n_in))
        w_z = _int_array(raw.get("w_z"), f"{name} w_z", 0, 3, (n_out, n_in))
        b_z = _int_array(raw.get("b_z"), f"{name} b_z", 0, 63, (n_out,))
        b_h = _int_array(raw.get("b_h"), f"{name} b_h", 0, 63, (n_out,))
        adc_raw = raw.get("adc", {})
        try:
            adc = AdcConfig(
                slope_segments=int(adc_raw.get("slope_segments", 13)),
                c_dac=float(adc_raw.get("c_dac", 3.0)),
                offset_code=int(adc_raw.get("offset_code", 32)),
            )
        except ValueError as e:
            raise ModelRangeError(f"{name} adc: {e}") from e
        theta_offset = raw.get("theta_offset")
        try:
            layer = LayerParams(
                w_h=w_h,
                w_z=w_z,
                b_z=b_z,
                b_h=b_h,
                adc=adc,
                gate_scale=float(raw.get("gate_scale", 2.0)),
                theta_scale=float(raw.get("theta_scale", 0.25)),
                h_init=np.asarray(raw.get("h_init", np.zeros(n_out)), dtype=np.float64),
                theta_offset=None if theta_offset is None else np.asarray(theta_offset),
            )
        except ValueError as e:
            raise ModelDimError(f"{name}: {e}") from e
        layers.append(layer)
    try:
        model = Model(NetworkConfig(tuple(int(s) for s in sizes),
                                    readout=doc.get("readout", "last-step-argmax")),
                      layers)
    except ValueError as e:
        raise ModelDimError(str(e)) from e
    return ModelBundle(model, volt)


def save_model(path, model: Model, volt: VoltageParams | None = None):
    text = dumps_model(model, volt)
    with open(path, "w") as f:
        f.write(text)


def load_model(path) -> ModelBundle:
    with open(path) as f:
        return loads_model(f.read())


def model_digest(path) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


# ---------------------------------------------------------------------------
# IDX datasets

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801


def read_idx(path) -> np.ndarray:
    """Decode one IDX file (unsigned byte payloads only)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic not in (IDX_MAGIC_IMAGES, IDX_MAGIC_LABELS):
        raise ValueError(f"{path}: bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ValueError(f"{path}: truncated IDX dimension block")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    body = raw[header:]
    if len(body) != count:
        raise ValueError(
            f"{path}: payload is {len(body)} bytes, dims {dims} need {count}"
        )
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


@dataclass(frozen=True)
class DatasetSource:
    """Where sequences come from and how pixels become binary steps.

    kind: 'idx' (images + labels paths) or 'csv' (one labeled sequence per
    row). threshold applies to pixels normalized to [0, 1]. presentation:
    'pixel' streams one pixel per step (784 x 1 for MNIST), 'row' streams
    one image row per step (28 x 28).
    """

    kind: str
    images: str | None = None
    labels: str | None = None
    csv_path: str | None = None
    threshold: float = 0.5
    presentation: str = "pixel"
    width: int = 1

    def __post_init__(self):
        if self.kind not in ("idx", "csv"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.presentation not in ("pixel", "row"):
            raise ValueError(f"unknown presentation {self.presentation!r}")


def load_idx(images_path, threshold=0.5, presentation="pixel", labels_path=None):
    """Load an IDX image file as binary sequences.

    Pixels are normalized to [0, 1]; values at or above the threshold
    become 1. 'pixel' presentation flattens each image row-major into a
    (T, 1) stream; 'row' presents one row per step.
    """
    images = read_idx(images_path)
    if images.ndim != 3:
        raise ValueError(f"{images_path}: expected a 3-d image file")
    n, h, w = images.shape
    bits = (images.astype(np.float64) / 255.0 >= threshold).astype(np.float64)
    if presentation == "pixel":
        seqs = bits.reshape(n, h * w, 1)
    elif presentation == "row":
        seqs = bits.reshape(n, h, w)
    else:
        raise ValueError(f"unknown presentation {presentation!r}")
    labels = None
    if labels_path is not None:
        labels = read_idx(labels_path)
        if labels.ndim != 1:
            raise ValueError(f"{labels_path}: expected a 1-d label file")
        if labels.shape[0] != n:
            raise ValueError("image and label counts differ")
        labels = labels.astype(np.int64)
    return seqs, labels


def load_csv_sequences(path, width=1):
    """CSV rows 'label,v0,v1,...' of binary values; width columns per step."""
    seqs = []
    labels = []
    with open(path) as f:
        for row in csv.reader(f):
            if not row or row[0].startswith("#"):
                continue
            labels.append(int(row[0]))
            vals = np.asarray([float(v) for v in row[1:]])
            if vals.size % width:
                raise ValueError(f"{path}: row length not divisible by width {width}")
            seqs.append(vals.reshape(-1, width))
    if not seqs:
        return np.zeros((0, 0, width)), np.zeros(0, dtype=np.int64)
    lens = {s.shape[0] for s in seqs}
    if len(lens) != 1:
        raise ValueError(f"{path}: sequences have mixed lengths {sorted(lens)}")
    return np.stack(seqs), np.asarray(labels, dtype=np.int64)


def load_dataset(source: DatasetSource):
    if source.kind == "idx":
        return load_idx(
            source.images, source.threshold, source.presentation, source.labels
        )
    return load_csv_sequences(source.csv_path, source.width)


# ---------------------------------------------------------------------------
# Trace CSV (shared schema for both engines; see docs/model_format.md)

TRACE_HEADER = ["step", "layer", "unit", "z_code", "v_htilde", "v_h", "out"]


def write_trace_csv(path, result: RunResult):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRACE_HEADER)
        for li, trace in enumerate(result.traces):
            T, n = trace.z_code.shape
            for t in range(T):
                for j in range(n):
                    w.writerow(
                        [
                            t,
                            li,
                            j,
                            int(trace.z_code[t, j]),
                            repr(float(trace.h_tilde[t, j])),
                            repr(float(trace.h[t, j])),
                            int(trace.out[t, j]),
                        ]
                    )


def read_trace_csv(path):
    """Reassemble per-layer trace arrays from a trace CSV."""
    rows = []
    with open(path) as f:
        r = csv.reader(f)
        header = next(r)
        if header != TRACE_HEADER:
            raise ValueError(f"{path}: unexpected trace header {header}")
        for row in r:
            rows.append(row)
    if not rows:
        return []
    arr = np.asarray(rows, dtype=object)
    steps = arr[:, 0].astype(int)
    layers = arr[:, 1].astype(int)
    units = arr[:, 2].astype(int)
    traces = []
    for li in range(layers.max() + 1):
        sel = layers == li
        T = steps[sel].max() + 1
        n = units[sel].max() + 1
        lt = LayerTrace(
            z_code=np.zeros((T, n), dtype=np.int64),
            h_tilde=np.zeros((T, n)),
            h=np.zeros((T, n)),
            out=np.zeros((T, n), dtype=np.uint8),
        )
        for row in arr[sel]:
            t, _, j = int(row[0]), int(row[1]), int(row[2])
            lt.z_code[t, j] = int(row[3])
            lt.h_tilde[t, j] = float(row[4])
            lt.h[t, j] = float(row[5])
            lt.out[t, j] = int(row[6])
        traces.append(lt)
    return traces
