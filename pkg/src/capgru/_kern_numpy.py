"""Vectorized numpy kernels, the fallback backend for ``_kern_loops``.

Same contracts, same bit-level results in the mismatch-free regime (every
sum there is an exact dyadic sum, so summation order cannot matter); with
mismatch the two backends may differ by float reassociation.
"""

import numpy as np


def ideal_layer_forward(xb, wh_val, wz_val, alpha, bias_gate, cand_bias, theta, h0):
    T, n_in = xb.shape
    n_out = wh_val.shape[0]
    m_z = xb @ wz_val.T  # exact: integer-valued float64
    m_h = xb @ wh_val.T
    a = (alpha * m_z) / n_in + bias_gate
    u = np.floor((a * 64.0 + 192.0) / 6.0)
    z_code = np.clip(u, 0, 63).astype(np.int64)
    z = z_code / 64.0
    h_tilde = m_h / n_in + cand_bias
    h = np.empty((T, n_out), dtype=np.float64)
    h_prev = h0.copy()
    for t in range(T):
        h_prev = z[t] * h_tilde[t] + (1.0 - z[t]) * h_prev
        h[t] = h_prev
    out = (h >= theta).astype(np.uint8)
    return z_code, h_tilde, h, out


def sar_sweep(dv_in, adc_lsb, o_eff):
    """6-trial successive approximation; o_eff may be scalar or per-element."""
    acc = np.zeros(np.shape(dv_in)[0], dtype=np.int64)
    for b in range(5, -1, -1):
        trial = acc + (1 << b)
        keep = dv_in - adc_lsb * (trial - o_eff) >= 0.0
        acc = np.where(keep, trial, acc)
    return acc


def _share(c, v, v0, check):
    """Short a capacitor group: return (settled voltage, loss, charge error)."""
    q = (c * v).sum(axis=0)
    csum = c.sum(axis=0)
    vbar = q / csum
    err = 0.0
    if check:
        err = float(np.max(np.abs(csum * vbar - q) / (csum * v0 + np.abs(q))))
    loss = 0.5 * (c * (v - vbar) ** 2).sum()
    return vbar, loss, err


def circuit_layer_forward(
    xpad,
    dvw_h,
    dvw_z,
    cz,
    ca,
    cb,
    role_a,
    dva,
    dvb,
    dvz,
    o_eff,
    adc_lsb,
    seg_per_code,
    dv_th,
    v0,
    check_charge,
):
    T, R = xpad.shape
    n_out = dvw_h.shape[1]
    z_code = np.empty((T, n_out), dtype=np.int64)
    dv_ht_rec = np.empty((T, n_out), dtype=np.float64)
    dv_h_rec = np.empty((T, n_out), dtype=np.float64)
    out = np.empty((T, n_out), dtype=np.uint8)
    e_pre = np.zeros(T, dtype=np.float64)
    e_share = np.zeros(T, dtype=np.float64)
    e_swap = np.zeros(T, dtype=np.float64)
    n_swap = np.zeros(T, dtype=np.int64)
    max_err = 0.0
    row_idx = np.arange(R)[:, None]

    for t in range(T):
        x = xpad[t][:, None]

        # gate line
        nv = x * dvw_z
        e_pre[t] += 0.5 * (cz * (nv - dvz) ** 2).sum()
        vbar_z, loss, err = _share(cz, nv, v0, check_charge)
        e_share[t] += loss
        max_err = max(max_err, err)
        dvz[:] = vbar_z

        codes = sar_sweep(vbar_z, adc_lsb, o_eff)
        z_code[t] = codes

        # candidate line: precharge whichever state cap is not holding h
        c_ht = np.where(role_a, cb, ca)
        v_ht = np.where(role_a, dvb, dva)
        nv = x * dvw_h
        e_pre[t] += 0.5 * (c_ht * (nv - v_ht) ** 2).sum()
        vbar_ht, loss, err = _share(c_ht, nv, v0, check_charge)
        e_share[t] += loss
        max_err = max(max_err, err)
        dvb[:] = np.where(role_a, vbar_ht, dvb)
        dva[:] = np.where(role_a, dva, vbar_ht)
        dv_ht_rec[t] = vbar_ht

        # state update: flip the k lowest-index synapses, then share h
        k = codes * seg_per_code
        flip = row_idx < k
        role_a ^= flip
        n_swap[t] = 2 * int(k.sum())
        c_h = np.where(role_a, ca, cb)
        v_h = np.where(role_a, dva, dvb)
        vbar_h, loss, err = _share(c_h, v_h, v0, check_charge)
        e_swap[t] += loss
        max_err = max(max_err, err)
        dva[:] = np.where(role_a, vbar_h, dva)
        dvb[:] = np.where(role_a, dvb, vbar_h)
        dv_h_rec[t] = vbar_h
        out[t] = (vbar_h >= dv_th).astype(np.uint8)

    return z_code, dv_ht_rec, dv_h_rec, out, e_pre, e_share, e_swap, n_swap, max_err
