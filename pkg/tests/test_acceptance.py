"""Acceptance suite: one test per top-level criterion, each printing a
PASS line with the measured figure next to its pinned tolerance. Run with
``pytest tests/test_acceptance.py -v -s``.
"""

import time

import numpy as np

from capgru import ideal
from capgru import train as T
from capgru.backend import get_kernels
from capgru.circuit import CircuitEngine, sar_convert
from capgru.energy import EnergyParams, energy_of_step, worst_case_bound
from capgru.params import AdcConfig, LayerParams, full_scale_volts

from conftest import make_layer, make_model, random_bits

_K = get_kernels()


def _report(name, detail):
    print(f"\n[PASS] {name}: {detail}", flush=True)


def test_engine_equivalence_1000_draws(volt):
    """Gate codes exact and states within 1e-12 across both engines."""
    rng = np.random.default_rng(101)
    t0 = time.monotonic()
    worst_ht = 0.0
    worst_h = 0.0
    draws = 0
    for _ in range(1000):
        depth = int(rng.integers(1, 4))
        sizes = [int(rng.integers(1, 12)) for _ in range(depth + 1)]
        if rng.random() < 0.1:
            sizes[int(rng.integers(0, depth + 1))] = int(rng.integers(60, 70))
        model = make_model(rng, sizes, random_h_init=True)
        x = random_bits(rng, int(rng.integers(1, 8)), sizes[0])
        ri = ideal.forward_sequential(x, model)
        rc = CircuitEngine(model, volt).run(x)
        for a, b in zip(ri.traces, rc.traces):
            assert np.array_equal(a.z_code, b.z_code), "gate code mismatch"
            worst_ht = max(worst_ht, float(np.abs(a.h_tilde - b.h_tilde).max()))
            worst_h = max(worst_h, float(np.abs(a.h - b.h).max()))
            assert np.array_equal(a.out, b.out)
        draws += 1
    assert worst_ht <= 1e-12 and worst_h <= 1e-12
    _report(
        "engine equivalence",
        f"{draws} draws, z codes exact, max|dh~|={worst_ht:.2e}, "
        f"max|dh|={worst_h:.2e} <= 1e-12 in {time.monotonic() - t0:.1f}s",
    )


def test_charge_conservation_full_run(volt):
    """Every share/swap conserves total charge to 1e-15 relative."""
    seqs, labels = T.load_digit_rows()
    rng = np.random.default_rng(102)
    model = make_model(rng, (8, 32, 16, 10), random_h_init=True)
    eng = CircuitEngine(model, volt, check_charge=True)
    n = 100
    for x in seqs[:n]:
        eng.run(x)
    assert eng.max_charge_err <= 1e-15
    _report(
        "charge conservation",
        f"{n} image sequences x {seqs.shape[1]} steps, worst relative "
        f"charge error {eng.max_charge_err:.2e} <= 1e-15",
    )


def test_adc_characteristics(volt):
    """Monotone staircases, linear offset shifts, capacitive full scale."""
    c_dac = 3.0
    slopes = [1, 2, 4, 8, 16, 32, 64]
    checked = 0
    for segs in slopes:
        adc0 = AdcConfig(slope_segments=segs, c_dac=c_dac, offset_code=32)
        fs = full_scale_volts(adc0, volt)
        # full scale follows the capacitive divider to 1e-9 relative
        want = (c_dac / (segs * volt.c_unit + c_dac)) * volt.v_span
        assert abs(fs - want) <= 1e-9 * want
        lsb = fs / 64.0
        dv = np.linspace(-1.1 * fs, 1.1 * fs, 1408)
        for off in range(64):
            o_eff = float(off)
            got = _K.sar_sweep(dv, lsb, o_eff)
            # closed-form oracle from the trial recursion
            oracle = np.clip(np.floor(dv / lsb + o_eff), 0, 63).astype(np.int64)
            assert np.array_equal(got, oracle)
            assert np.all(np.diff(got) >= 0)
            checked += 1
        # offset moves the code-32 midpoint by one LSB per code: the
        # midpoint must sit within a quarter LSB of the linear prediction
        edges = (32.0 - np.arange(64)) * lsb
        for off in (0, 15, 32, 47, 63):
            below = sar_convert(volt.v0 + edges[off] - 0.25 * lsb,
                                AdcConfig(segs, c_dac, off), volt)
            above = sar_convert(volt.v0 + edges[off] + 0.25 * lsb,
                                AdcConfig(segs, c_dac, off), volt)
            assert below == 31 and above == 32
    _report(
        "converter characteristics",
        f"{checked} staircases monotone and equal to the closed form; "
        f"midpoint shift = full_scale/64 per offset code; full scale "
        f"follows c_dac/c_tot to 1e-9",
    )


def test_scan_equivalence_100_nets():
    """Prefix-scan forward equals sequential within 1e-9, T = 64."""
    rng = np.random.default_rng(103)
    worst = 0.0
    for _ in range(100):
        depth = int(rng.integers(1, 4))
        sizes = [int(rng.integers(1, 10)) for _ in range(depth + 1)]
        model = make_model(rng, sizes, random_h_init=True)
        x = random_bits(rng, 64, sizes[0])
        a = ideal.forward_sequential(x, model)
        b = ideal.parallel_scan_forward(x, model)
        for ta, tb in zip(a.traces, b.traces):
            assert np.array_equal(ta.z_code, tb.z_code)
            worst = max(worst, float(np.abs(ta.h - tb.h).max()))
    assert worst <= 1e-9
    _report("scan equivalence", f"100 nets, T=64, max|dh| = {worst:.2e} <= 1e-9")


def test_bias_form_equivalence_100_sequences():
    """Candidate-bias form and threshold form emit identical binaries."""
    rng = np.random.default_rng(104)
    for _ in range(100):
        n_in = int(rng.integers(1, 9))
        n_out = int(rng.integers(1, 7))
        base = make_layer(rng, n_in, n_out)
        biased = LayerParams(
            w_h=base.w_h, w_z=base.w_z, b_z=base.b_z, b_h=base.b_h,
            adc=base.adc, gate_scale=base.gate_scale,
            theta_scale=base.theta_scale,
            h_init=rng.uniform(-1, 1, n_out),
            candidate_bias=rng.uniform(-1, 1, n_out),
        )
        thresh = ideal.bias_equivalence_transform(biased)
        x = random_bits(rng, int(rng.integers(1, 32)), n_in)
        h_b = biased.h_init.copy()
        h_t = thresh.h_init.copy()
        for t in range(x.shape[0]):
            h_b, zb, _ = ideal.gru_step(x[t], h_b, biased)
            h_t, zt, _ = ideal.gru_step(x[t], h_t, thresh)
            assert np.array_equal(zb, zt)
            assert np.array_equal(h_b >= biased.thresholds(),
                                  h_t >= thresh.thresholds())
    _report("bias-form equivalence", "100 random layers/sequences, outputs identical")


def test_gradient_check_142():
    """Analytic gradients within 1e-4 of central differences."""
    cfg = T.TrainConfig(layer_sizes=(1, 4, 2), parity_len=5, parity_gap=2, seed=0)
    state = T.TrainState.init(cfg)
    rng = np.random.default_rng(105)
    x, y = T.make_delayed_parity(rng, 8, 5, 2)
    report = T.gradcheck(state, x, y, eps=1e-5)
    worst = max(report.values())
    assert worst <= 1e-4
    _report(
        "gradient check",
        "1-4-2 net, T=5: max relative error "
        + ", ".join(f"{k}={v:.2e}" for k, v in report.items())
        + " <= 1e-4",
    )


def test_desk_scale_delayed_parity():
    """Fully hardened training reaches 95% inside five minutes."""
    cfg = T.TrainConfig(
        layer_sizes=(1, 128, 2),
        task="delayed-parity",
        parity_len=8,
        parity_gap=1,
        seed=0,
        lr=1.0,
        batch_size=16,
        epochs=(80, 25, 60, 50),
        lr_decay=0.98,
        logit_temp=8.0,
        phase_lr_scale=(1.0, 0.25, 0.75, 0.3),
    )
    res = T.run_schedule(cfg)
    final = res.metrics[-1]
    assert final[0] == "hard-gate"
    assert res.wall_seconds < 300.0
    assert final[4] >= 0.95
    # and the exported model reproduces that accuracy on the engine
    _, _, xte, yte = T.task_data(cfg)
    acc = np.mean(
        [ideal.forward_sequential(x, res.model).prediction == y
         for x, y in zip(xte, yte)]
    )
    assert acc >= 0.95
    _report(
        "desk-scale learning",
        f"hardened delayed-parity test accuracy {final[4]:.3f} "
        f"(engine replay {acc:.3f}) >= 0.95 in {res.wall_seconds:.0f}s < 300s",
    )


def test_energy_properties(volt):
    """Bound dominance, switch-energy maximization, calibration window."""
    rng = np.random.default_rng(106)
    params = EnergyParams()
    # dominance on 100 random runs
    for _ in range(100):
        sizes = [int(rng.integers(1, 20)) for _ in range(rng.integers(2, 4))]
        model = make_model(rng, sizes, random_h_init=True)
        Tn = int(rng.integers(1, 8))
        x = random_bits(rng, Tn, sizes[0])
        eng = CircuitEngine(model, volt)
        eng.run(x)
        rep = energy_of_step(eng.last_energy, params)
        assert rep.total <= worst_case_bound(model, params, volt, steps=Tn)
    # constant max-z maximizes switch energy
    sat = make_model(rng, (8, 4), w_z=np.full((4, 8), 3), b_z=np.full(4, 63))
    eng = CircuitEngine(sat, volt)
    eng.run(np.ones((6, 8)))
    e_max = energy_of_step(eng.last_energy, params).e_switch.sum()
    for _ in range(25):
        model = make_model(rng, (8, 4))
        eng = CircuitEngine(model, volt)
        eng.run(random_bits(rng, 6, 8))
        assert energy_of_step(eng.last_energy, params).e_switch.sum() <= e_max + 1e-30
    # calibrated four-core worst case lands within 3x of 169 pJ
    bound = worst_case_bound([64, 64, 64, 64, 64], params, volt)
    assert 169e-12 / 3 <= bound <= 3 * 169e-12
    _report(
        "energy properties",
        f"bound dominates 100 runs; max-z maximizes switch energy; "
        f"4-core worst case {bound * 1e12:.1f} pJ within 3x of 169 pJ",
    )


def test_row_subset_regression_primary_standalone():
    """Full-scale image accuracies are out of primary scope; the bundled
    row-image subset regression must stay well above the 10% chance floor
    (baseline run: 0.65) without touching the secondary component."""
    cfg = T.TrainConfig(
        layer_sizes=(8, 64, 10),
        task="row-digits",
        seed=0,
        lr=1.0,
        batch_size=32,
        subset=1000,
        epochs=(30, 10, 20, 15),
        lr_decay=0.97,
        logit_temp=8.0,
        phase_lr_scale=(1.0, 0.25, 0.75, 0.3),
    )
    res = T.run_schedule(cfg)
    final_acc = res.metrics[-1][4]
    assert final_acc >= 0.45  # frozen from the 0.65 baseline with margin
    import sys

    assert not any(m.startswith("qat_export") for m in sys.modules)
    _report(
        "row-subset regression",
        f"hardened row-image accuracy {final_acc:.3f} >= 0.45 "
        f"(chance 0.10); primary suite runs without the secondary package",
    )
