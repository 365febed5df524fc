"""Loop kernels for the hot per-timestep paths (numba-compiled when active).

Semantics must stay in lockstep with ``_kern_numpy``; the engine tests
assert bit-identical outputs between the two in the mismatch-free regime.
All voltages are carried as deltas against the zero potential v0, which
keeps the all-zero paths exactly 0.0 and avoids cancellation.
"""

import numpy as np

from capgru.backend import njit


@njit(cache=True)
def ideal_layer_forward(xb, wh_val, wz_val, alpha, bias_gate, cand_bias, theta, h0):
    """Sequential value-domain forward pass of one layer.

    xb: (T, n_in) binary inputs as float64. wh_val/wz_val: (n_out, n_in)
    weight values. bias_gate: per-unit gate pre-activation offset.
    Returns (z_code, h_tilde, h, out) with leading time axis.
    """
    T, n_in = xb.shape
    n_out = wh_val.shape[0]
    z_code = np.empty((T, n_out), dtype=np.int64)
    h_tilde = np.empty((T, n_out), dtype=np.float64)
    h = np.empty((T, n_out), dtype=np.float64)
    out = np.empty((T, n_out), dtype=np.uint8)
    h_prev = h0.copy()
    for t in range(T):
        for j in range(n_out):
            m_z = 0.0
            m_h = 0.0
            for i in range(n_in):
                if xb[t, i] != 0.0:
                    m_z += wz_val[j, i]
                    m_h += wh_val[j, i]
            a = (alpha * m_z) / n_in + bias_gate[j]
            u = np.floor((a * 64.0 + 192.0) / 6.0)
            if u < 0.0:
                code = 0
            elif u > 63.0:
                code = 63
            else:
                code = int(u)
            z = code / 64.0
            ht = m_h / n_in + cand_bias[j]
            hn = z * ht + (1.0 - z) * h_prev[j]
            z_code[t, j] = code
            h_tilde[t, j] = ht
            h[t, j] = hn
            out[t, j] = 1 if hn >= theta[j] else 0
            h_prev[j] = hn
    return z_code, h_tilde, h, out


@njit(cache=True)
def sar_sweep(dv_in, adc_lsb, o_eff):
    """6-trial successive approximation for a batch of node voltages."""
    n = dv_in.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        acc = 0
        for b in range(5, -1, -1):
            trial = acc + (1 << b)
            # comparator: node stays at/above the reference -> keep the bit
            if dv_in[i] - adc_lsb * (trial - o_eff) >= 0.0:
                acc = trial
        out[i] = acc
    return out


@njit(cache=True)
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
    """Charge-domain forward pass of one layer column bank.

    xpad: (T, R) inputs padded to the physical column height. dvw_*: per-cap
    precharge deltas for x=1 (zero rows beyond n_in). cz/ca/cb: capacitances.
    role_a marks which state cap currently holds h. State arrays are
    mutated in place. Energies are returned in 0.5*C*dV^2 units of c_unit.
    """
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

    for t in range(T):
        for j in range(n_out):
            # gate line: precharge to weight potentials, then share
            q = 0.0
            csum = 0.0
            for i in range(R):
                nv = xpad[t, i] * dvw_z[i, j]
                d = nv - dvz[i, j]
                e_pre[t] += 0.5 * cz[i, j] * d * d
                dvz[i, j] = nv
                q += cz[i, j] * nv
                csum += cz[i, j]
            vbar_z = q / csum
            if check_charge:
                q2 = csum * vbar_z
                err = abs(q2 - q) / (csum * v0 + abs(q))
                if err > max_err:
                    max_err = err
            for i in range(R):
                d = dvz[i, j] - vbar_z
                e_share[t] += 0.5 * cz[i, j] * d * d
                dvz[i, j] = vbar_z

            # successive approximation against the per-unit offset pre-set
            acc = 0
            for b in range(5, -1, -1):
                trial = acc + (1 << b)
                if vbar_z - adc_lsb * (trial - o_eff[j]) >= 0.0:
                    acc = trial
            code = acc
            z_code[t, j] = code

            # candidate line: precharge the non-h caps, then share
            q = 0.0
            csum = 0.0
            for i in range(R):
                nv = xpad[t, i] * dvw_h[i, j]
                if role_a[i, j]:
                    c = cb[i, j]
                    d = nv - dvb[i, j]
                    dvb[i, j] = nv
                else:
                    c = ca[i, j]
                    d = nv - dva[i, j]
                    dva[i, j] = nv
                e_pre[t] += 0.5 * c * d * d
                q += c * nv
                csum += c
            vbar_ht = q / csum
            if check_charge:
                err = abs(csum * vbar_ht - q) / (csum * v0 + abs(q))
                if err > max_err:
                    max_err = err
            for i in range(R):
                if role_a[i, j]:
                    d = dvb[i, j] - vbar_ht
                    e_share[t] += 0.5 * cb[i, j] * d * d
                    dvb[i, j] = vbar_ht
                else:
                    d = dva[i, j] - vbar_ht
                    e_share[t] += 0.5 * ca[i, j] * d * d
                    dva[i, j] = vbar_ht
            dv_ht_rec[t, j] = vbar_ht

            # state update: swap the k lowest-index synapses, then share h
            k = code * seg_per_code
            for i in range(k):
                role_a[i, j] = not role_a[i, j]
            n_swap[t] += 2 * k
            q = 0.0
            csum = 0.0
            for i in range(R):
                if role_a[i, j]:
                    q += ca[i, j] * dva[i, j]
                    csum += ca[i, j]
                else:
                    q += cb[i, j] * dvb[i, j]
                    csum += cb[i, j]
            vbar_h = q / csum
            if check_charge:
                err = abs(csum * vbar_h - q) / (csum * v0 + abs(q))
                if err > max_err:
                    max_err = err
            for i in range(R):
                if role_a[i, j]:
                    d = dva[i, j] - vbar_h
                    e_swap[t] += 0.5 * ca[i, j] * d * d
                    dva[i, j] = vbar_h
                else:
                    d = dvb[i, j] - vbar_h
                    e_swap[t] += 0.5 * cb[i, j] * d * d
                    dvb[i, j] = vbar_h
            dv_h_rec[t, j] = vbar_h
            out[t, j] = 1 if vbar_h >= dv_th[j] else 0

    return z_code, dv_ht_rec, dv_h_rec, out, e_pre, e_share, e_swap, n_swap, max_err
