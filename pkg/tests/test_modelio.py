import json
import os
import struct

import numpy as np
import pytest

from capgru import ideal, modelio
from capgru.params import VoltageParams, random_model

from conftest import make_model, random_bits

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")
GOLDEN_MODEL = os.path.join(GOLDEN_DIR, "model_142.mgru.json")
GOLDEN_DIGEST = "6af07f3c6d62b27f1656ef1cd22fcaa342b8c3f2996dae893e82e30633e286a6"


# ---------------------------------------------------------------------------
# model round trips


def test_round_trip_identity():
    rng = np.random.default_rng(0)
    volt = VoltageParams()
    model = random_model(rng, (1, 8, 4), volt, random_h_init=True)
    text = modelio.dumps_model(model, volt)
    bundle = modelio.loads_model(text)
    assert bundle.volt == volt
    assert bundle.model.config.layer_sizes == (1, 8, 4)
    for a, b in zip(model.layers, bundle.model.layers):
        assert np.array_equal(a.w_h, b.w_h)
        assert np.array_equal(a.w_z, b.w_z)
        assert np.array_equal(a.b_z, b.b_z)
        assert np.array_equal(a.b_h, b.b_h)
        assert a.gate_scale == b.gate_scale
        assert a.theta_scale == b.theta_scale
        assert a.adc == b.adc
        assert np.array_equal(a.h_init, b.h_init)
    # canonical bytes: serializing the reloaded model reproduces the text
    assert modelio.dumps_model(bundle.model, bundle.volt) == text


def test_round_trip_preserves_forward_outputs():
    rng = np.random.default_rng(1)
    model = random_model(rng, (5, 6, 3), random_h_init=True)
    bundle = modelio.loads_model(modelio.dumps_model(model))
    x = random_bits(rng, 9, 5)
    a = ideal.forward_sequential(x, model)
    b = ideal.forward_sequential(x, bundle.model)
    assert np.array_equal(a.logits, b.logits)


def test_weight_code_out_of_range_rejected():
    rng = np.random.default_rng(2)
    model = random_model(rng, (2, 3, 2))
    doc = json.loads(modelio.dumps_model(model))
    doc["layers"][0]["w_h"][0][0] = 4
    with pytest.raises(modelio.ModelRangeError):
        modelio.loads_model(json.dumps(doc))


def test_bias_code_out_of_range_rejected():
    rng = np.random.default_rng(3)
    model = random_model(rng, (2, 3, 2))
    doc = json.loads(modelio.dumps_model(model))
    doc["layers"][1]["b_z"][0] = 64
    with pytest.raises(modelio.ModelRangeError):
        modelio.loads_model(json.dumps(doc))


def test_unknown_version_rejected():
    rng = np.random.default_rng(4)
    model = random_model(rng, (2, 3, 2))
    doc = json.loads(modelio.dumps_model(model))
    doc["format_version"] = 2
    with pytest.raises(modelio.ModelVersionError):
        modelio.loads_model(json.dumps(doc))


def test_dim_mismatch_rejected():
    rng = np.random.default_rng(5)
    model = random_model(rng, (2, 3, 2))
    doc = json.loads(modelio.dumps_model(model))
    doc["layers"][0]["w_h"] = [[1, 1]]  # wrong unit count
    with pytest.raises(modelio.ModelDimError):
        modelio.loads_model(json.dumps(doc))


def test_float_fields_round_trip_exactly():
    rng = np.random.default_rng(6)
    volt = VoltageParams(v_lsb=0.0625 * (1 + 2**-40))
    model = random_model(rng, (3, 2), volt, random_h_init=True)
    bundle = modelio.loads_model(modelio.dumps_model(model, volt))
    assert bundle.volt.v_lsb == volt.v_lsb
    assert bundle.model.layers[0].gate_scale == model.layers[0].gate_scale


def test_golden_model_digest_frozen():
    assert modelio.model_digest(GOLDEN_MODEL) == GOLDEN_DIGEST
    bundle = modelio.load_model(GOLDEN_MODEL)
    assert bundle.model.config.layer_sizes == (1, 4, 2)


# ---------------------------------------------------------------------------
# IDX datasets


def write_idx_images(path, images):
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", modelio.IDX_MAGIC_IMAGES, n, h, w))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", modelio.IDX_MAGIC_LABELS, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def test_idx_all_zero_image(tmp_path):
    p = tmp_path / "imgs.idx"
    write_idx_images(p, np.zeros((2, 4, 4), dtype=np.uint8))
    seqs, _ = modelio.load_idx(p, threshold=0.5)
    assert seqs.shape == (2, 16, 1)
    assert not seqs.any()


def test_idx_all_255_image(tmp_path):
    p = tmp_path / "imgs.idx"
    write_idx_images(p, np.full((1, 3, 3), 255, dtype=np.uint8))
    seqs, _ = modelio.load_idx(p, threshold=0.5)
    assert seqs.min() == 1.0


def test_idx_threshold_and_count_cross_check(tmp_path):
    # independent reference decoder built from struct in this test
    rng = np.random.default_rng(7)
    images = rng.integers(0, 256, size=(5, 6, 6)).astype(np.uint8)
    p = tmp_path / "imgs.idx"
    write_idx_images(p, images)
    with open(p, "rb") as f:
        raw = f.read()
    magic, n, h, w = struct.unpack(">IIII", raw[:16])
    assert magic == 0x00000803 and (n, h, w) == (5, 6, 6)
    ref = np.frombuffer(raw[16:], dtype=np.uint8).reshape(5, 6, 6)
    on_ref = int((ref.astype(float) / 255.0 >= 0.5).sum())
    seqs, _ = modelio.load_idx(p, threshold=0.5)
    assert int(seqs.sum()) == on_ref


def test_idx_row_presentation(tmp_path):
    images = np.zeros((1, 4, 3), dtype=np.uint8)
    images[0, 2, :] = 255
    p = tmp_path / "imgs.idx"
    write_idx_images(p, images)
    seqs, _ = modelio.load_idx(p, threshold=0.5, presentation="row")
    assert seqs.shape == (1, 4, 3)
    assert seqs[0, 2].all() and seqs[0, [0, 1, 3]].sum() == 0


def test_idx_labels_and_count_mismatch(tmp_path):
    imgs = tmp_path / "imgs.idx"
    lbls = tmp_path / "lbls.idx"
    write_idx_images(imgs, np.zeros((3, 2, 2), dtype=np.uint8))
    write_idx_labels(lbls, [1, 2, 3])
    seqs, labels = modelio.load_idx(imgs, labels_path=lbls)
    assert np.array_equal(labels, [1, 2, 3])
    write_idx_labels(lbls, [1, 2])
    with pytest.raises(ValueError, match="counts differ"):
        modelio.load_idx(imgs, labels_path=lbls)


def test_idx_bad_magic(tmp_path):
    p = tmp_path / "bad.idx"
    with open(p, "wb") as f:
        f.write(struct.pack(">I", 0xDEADBEEF))
    with pytest.raises(ValueError, match="magic"):
        modelio.read_idx(p)


def test_idx_truncated(tmp_path):
    p = tmp_path / "trunc.idx"
    with open(p, "wb") as f:
        f.write(struct.pack(">IIII", modelio.IDX_MAGIC_IMAGES, 2, 4, 4))
        f.write(b"\x00" * 10)  # needs 32
    with pytest.raises(ValueError, match="payload"):
        modelio.read_idx(p)


# ---------------------------------------------------------------------------
# CSV sequences and traces


def test_csv_sequences_round_trip(tmp_path):
    p = tmp_path / "seqs.csv"
    with open(p, "w") as f:
        f.write("# comment\n")
        f.write("1,0,1,1,0\n")
        f.write("0,1,1,0,0\n")
    seqs, labels = modelio.load_csv_sequences(p, width=2)
    assert seqs.shape == (2, 2, 2)
    assert np.array_equal(labels, [1, 0])
    assert np.array_equal(seqs[0], [[0, 1], [1, 0]])


def test_csv_sequences_bad_width(tmp_path):
    p = tmp_path / "seqs.csv"
    with open(p, "w") as f:
        f.write("1,0,1,1\n")
    with pytest.raises(ValueError, match="width"):
        modelio.load_csv_sequences(p, width=2)


def test_trace_csv_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    model = make_model(rng, (4, 3, 2), random_h_init=True)
    x = random_bits(rng, 6, 4)
    res = ideal.forward_sequential(x, model)
    p = tmp_path / "trace.csv"
    modelio.write_trace_csv(p, res)
    traces = modelio.read_trace_csv(p)
    assert len(traces) == 2
    for a, b in zip(res.traces, traces):
        assert np.array_equal(a.z_code, b.z_code)
        assert np.array_equal(a.h_tilde, b.h_tilde)  # repr round-trips floats
        assert np.array_equal(a.h, b.h)
        assert np.array_equal(a.out, b.out)
