"""Reference numpy implementations of the hot kernels.

These are the semantics the numba backend (`impl_nb`) must match; the
parity test pins both backends together. Shapes are time-major
([T, N, ...]) so per-step slices are C-contiguous.

Gate layout along the 4H axis is [input | forget | cell | output].
"""

import numpy as np


def lstm_forward(xt, wx, wh, b):
    """Run an LSTM over a batch of sequences from zero initial state.

    xt: [T, N, F] inputs, wx: [F, 4H], wh: [H, 4H], b: [4H].
    Returns (h, gi, gf, gg, go, cs, tc), each [T, N, H]; the gate and
    cell caches feed `lstm_backward`.
    """
    T, N, F = xt.shape
    H = wh.shape[0]
    # input projection for every step in one GEMM
    zx = (np.dot(xt.reshape(T * N, F), wx) + b).reshape(T, N, 4 * H)
    h = np.zeros((T, N, H))
    gi = np.zeros((T, N, H))
    gf = np.zeros((T, N, H))
    gg = np.zeros((T, N, H))
    go = np.zeros((T, N, H))
    cs = np.zeros((T, N, H))
    tc = np.zeros((T, N, H))
    hprev = np.zeros((N, H))
    cprev = np.zeros((N, H))
    for t in range(T):
        z = zx[t] + np.dot(hprev, wh)
        # clamp keeps exp() inside float64 range
        z = np.minimum(np.maximum(z, -500.0), 500.0)
        i = 1.0 / (1.0 + np.exp(-z[:, :H]))
        f = 1.0 / (1.0 + np.exp(-z[:, H:2 * H]))
        g = np.tanh(z[:, 2 * H:3 * H])
        o = 1.0 / (1.0 + np.exp(-z[:, 3 * H:]))
        c = f * cprev + i * g
        tch = np.tanh(c)
        gi[t] = i
        gf[t] = f
        gg[t] = g
        go[t] = o
        cs[t] = c
        tc[t] = tch
        h[t] = o * tch
        hprev = h[t]
        cprev = c
    return h, gi, gf, gg, go, cs, tc


def lstm_backward(xt, wx, wh, h, gi, gf, gg, go, cs, tc, dh_out):
    """Reverse-mode pass matching `lstm_forward`.

    dh_out: [T, N, H] upstream gradient w.r.t. every hidden state.
    Returns (dx [T,N,F], dwx, dwh, db).
    """
    T, N, F = xt.shape
    H = wh.shape[0]
    dz_all = np.zeros((T, N, 4 * H))
    whT = wh.T.copy()
    wxT = wx.T.copy()
    dh_carry = np.zeros((N, H))
    dc_carry = np.zeros((N, H))
    for t in range(T - 1, -1, -1):
        i = gi[t]
        f = gf[t]
        g = gg[t]
        o = go[t]
        tch = tc[t]
        cprev = cs[t - 1] if t > 0 else np.zeros((N, H))
        dh = dh_out[t] + dh_carry
        do = dh * tch
        dc = dh * o * (1.0 - tch * tch) + dc_carry
        dz_all[t, :, :H] = (dc * g) * i * (1.0 - i)
        dz_all[t, :, H:2 * H] = (dc * cprev) * f * (1.0 - f)
        dz_all[t, :, 2 * H:3 * H] = (dc * i) * (1.0 - g * g)
        dz_all[t, :, 3 * H:] = do * o * (1.0 - o)
        dc_carry = dc * f
        dh_carry = np.dot(dz_all[t], whT)
    dz2 = dz_all.reshape(T * N, 4 * H)
    dx = np.dot(dz2, wxT).reshape(T, N, F)
    dwx = np.dot(xt.reshape(T * N, F).T, dz2)
    hprev_all = np.zeros((T, N, H))
    hprev_all[1:] = h[:-1]
    dwh = np.dot(hprev_all.reshape(T * N, H).T, dz2)
    db = dz2.sum(axis=0)
    return dx, dwx, dwh, db


def simulate_temps(phi_air, k, a, up_indptr, up_indices, noise):
    """First-order water temperature recursion over a segment network.

    y[i,0]   = phi_air[i,0]
    y[i,t]   = (1-k_i-a_i) y[i,t-1] + k_i phi_air[i,t]
               + a_i mean_{j in up(i)} y[j,t-1] + noise[i,t]

    Upstream neighbor lists are CSR-packed (up_indptr, up_indices);
    a_i must be 0 for segments without upstream neighbors. Written as
    plain loops so the numba backend can jit it unchanged.
    """
    n, T = phi_air.shape
    y = np.zeros((n, T))
    for i in range(n):
        y[i, 0] = phi_air[i, 0]
    for t in range(1, T):
        for i in range(n):
            lo = up_indptr[i]
            hi = up_indptr[i + 1]
            up_mean = 0.0
            if hi > lo:
                s = 0.0
                for p in range(lo, hi):
                    s += y[up_indices[p], t - 1]
                up_mean = s / (hi - lo)
            y[i, t] = ((1.0 - k[i] - a[i]) * y[i, t - 1]
                       + k[i] * phi_air[i, t]
                       + a[i] * up_mean
                       + noise[i, t])
    return y
