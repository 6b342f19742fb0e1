"""Sequence scan kernels, numba-compiled twins of :mod:`.scans`.

Same signatures, same math, same storage contract. Heads and batch are
explicit loops here; the per-head dimensions are small (8..64), so plain
loops beat BLAS call overhead and the compiler vectorizes them.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _softmax1d(x):
    n = x.shape[0]
    m = x[0]
    for i in range(1, n):
        if x[i] > m:
            m = x[i]
    e = np.empty_like(x)
    s = 0.0
    for i in range(n):
        e[i] = np.exp(x[i] - m)
        s += e[i]
    for i in range(n):
        e[i] = e[i] / s
    return e


@njit(cache=True)
def _sig(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _mv(W, x, out):
    for i in range(W.shape[0]):
        s = 0.0
        for j in range(W.shape[1]):
            s += W[i, j] * x[j]
        out[i] = s


@njit(cache=True)
def _delta_write(W, k, v, beta, v_bar):
    """v_bar <- W k; W += beta (v - v_bar) (x) k, all in place."""
    _mv(W, k, v_bar)
    for i in range(W.shape[0]):
        ci = beta * (v[i] - v_bar[i])
        for j in range(W.shape[1]):
            W[i, j] += ci * k[j]


@njit(cache=True)
def _delta_unwrite(W, A, k, v, v_bar, beta, gk, gv, out_gbeta):
    """Reverse a delta write: restore W, push its adjoint A one step back."""
    dv, dk = W.shape
    for i in range(dv):
        ci = beta * (v[i] - v_bar[i])
        for j in range(dk):
            W[i, j] -= ci * k[j]
    gbeta = 0.0
    for i in range(dv):
        di = v[i] - v_bar[i]
        s = 0.0
        for j in range(dk):
            s += A[i, j] * k[j]
        gbeta += di * s
        gv[i] = beta * s
    out_gbeta[0] = gbeta
    for j in range(dk):
        s1 = 0.0
        s2 = 0.0
        for i in range(dv):
            s1 += A[i, j] * (v[i] - v_bar[i])
            s2 += W[i, j] * gv[i]
        gk[j] = beta * s1 - s2
    for i in range(dv):
        gvi = gv[i]
        for j in range(dk):
            A[i, j] -= gvi * k[j]


# ---------------------------------------------------------------- additive

@njit(cache=True)
def _lt_fwd(q, k, v, W, Y):
    B, H, Tn, dk = q.shape
    dv = v.shape[3]
    for b in range(B):
        for h in range(H):
            Wl = W[b, h]
            for t in range(Tn):
                for i in range(dv):
                    vi = v[b, h, t, i]
                    for j in range(dk):
                        Wl[i, j] += vi * k[b, h, t, j]
                _mv(Wl, q[b, h, t], Y[b, h, t])


def lt_scan_fwd(q, k, v, W0):
    W = W0.copy()
    Y = np.empty(q.shape[:-1] + (v.shape[-1],), dtype=v.dtype)
    _lt_fwd(q, k, v, W, Y)
    return Y, W


@njit(cache=True)
def _lt_bwd(q, k, v, W, A, gY, gq, gk, gv):
    B, H, Tn, dk = q.shape
    dv = v.shape[3]
    for b in range(B):
        for h in range(H):
            Wl = W[b, h]
            Al = A[b, h]
            for t in range(Tn - 1, -1, -1):
                for i in range(dv):
                    gyi = gY[b, h, t, i]
                    for j in range(dk):
                        Al[i, j] += gyi * q[b, h, t, j]
                for j in range(dk):
                    s = 0.0
                    for i in range(dv):
                        s += Wl[i, j] * gY[b, h, t, i]
                    gq[b, h, t, j] = s
                for i in range(dv):
                    s = 0.0
                    for j in range(dk):
                        s += Al[i, j] * k[b, h, t, j]
                    gv[b, h, t, i] = s
                for j in range(dk):
                    s = 0.0
                    for i in range(dv):
                        s += Al[i, j] * v[b, h, t, i]
                    gk[b, h, t, j] = s
                for i in range(dv):
                    vi = v[b, h, t, i]
                    for j in range(dk):
                        Wl[i, j] -= vi * k[b, h, t, j]


def lt_scan_bwd(q, k, v, WT, gY, gWT):
    W = WT.copy()
    A = gWT.copy()
    gq = np.empty_like(q)
    gk = np.empty_like(k)
    gv = np.empty_like(v)
    _lt_bwd(q, k, v, W, A, gY, gq, gk, gv)
    return gq, gk, gv, A


# ------------------------------------------------------------------- delta

@njit(cache=True)
def _delta_fwd(q, k, v, beta, W, Y, Vbar):
    B, H, Tn, _ = q.shape
    for b in range(B):
        for h in range(H):
            Wl = W[b, h]
            for t in range(Tn):
                _delta_write(Wl, k[b, h, t], v[b, h, t], beta[b, h, t],
                             Vbar[b, h, t])
                _mv(Wl, q[b, h, t], Y[b, h, t])


def delta_scan_fwd(q, k, v, beta, W0):
    W = W0.copy()
    Y = np.empty(q.shape[:-1] + (v.shape[-1],), dtype=v.dtype)
    Vbar = np.empty_like(Y)
    _delta_fwd(q, k, v, beta, W, Y, Vbar)
    return Y, Vbar, W


@njit(cache=True)
def _delta_bwd(q, k, v, beta, W, A, Vbar, gY, gq, gk, gv, gbeta):
    B, H, Tn, dk = q.shape
    dv = v.shape[3]
    gb1 = np.empty(1, dtype=v.dtype)
    for b in range(B):
        for h in range(H):
            Wl = W[b, h]
            Al = A[b, h]
            for t in range(Tn - 1, -1, -1):
                for i in range(dv):
                    gyi = gY[b, h, t, i]
                    for j in range(dk):
                        Al[i, j] += gyi * q[b, h, t, j]
                for j in range(dk):
                    s = 0.0
                    for i in range(dv):
                        s += Wl[i, j] * gY[b, h, t, i]
                    gq[b, h, t, j] = s
                _delta_unwrite(Wl, Al, k[b, h, t], v[b, h, t],
                               Vbar[b, h, t], beta[b, h, t],
                               gk[b, h, t], gv[b, h, t], gb1)
                gbeta[b, h, t] = gb1[0]


def delta_scan_bwd(q, k, v, beta, WT, Vbar, gY, gWT):
    W = WT.copy()
    A = gWT.copy()
    gq = np.empty_like(q)
    gk = np.empty_like(k)
    gv = np.empty_like(v)
    gbeta = np.empty_like(beta)
    _delta_bwd(q, k, v, beta, W, A, Vbar, gY, gq, gk, gv, gbeta)
    return gq, gk, gv, gbeta, A


# --------------------------------------------------------------- delta RNN

@njit(cache=True)
def _drnn_fwd(version_b, qw, kw, vw, bw, kr, vr, br, W, R, y0, Y,
              VbarW, VbarR):
    B, H, Tn, _ = qw.shape
    dv = vw.shape[3]
    z = np.empty(dv, dtype=vw.dtype)
    r = np.empty(dv, dtype=vw.dtype)
    for b in range(B):
        for h in range(H):
            Wl = W[b, h]
            Rl = R[b, h]
            y = y0[b, h].copy()
            for t in range(Tn):
                _delta_write(Wl, kw[b, h, t], vw[b, h, t], bw[b, h, t],
                             VbarW[b, h, t])
                _delta_write(Rl, kr[b, h, t], vr[b, h, t], br[b, h, t],
                             VbarR[b, h, t])
                _mv(Wl, qw[b, h, t], z)
                if version_b:
                    s = _softmax1d(y)
                    _mv(Rl, s, r)
                    for i in range(dv):
                        y[i] = z[i] + r[i]
                else:
                    _mv(Rl, y, r)
                    for i in range(dv):
                        z[i] = z[i] + r[i]
                    y = _softmax1d(z)
                for i in range(dv):
                    Y[b, h, t, i] = y[i]


def drnn_scan_fwd(version_b, qw, kw, vw, bw, kr, vr, br, W0, R0, y0):
    W = W0.copy()
    R = R0.copy()
    Y = np.empty(qw.shape[:-1] + (vw.shape[-1],), dtype=vw.dtype)
    VbarW = np.empty_like(Y)
    VbarR = np.empty_like(Y)
    _drnn_fwd(version_b, qw, kw, vw, bw, kr, vr, br, W, R, y0, Y,
              VbarW, VbarR)
    return Y, VbarW, VbarR, W, R


@njit(cache=True)
def _softmax_bwd1d(g, s, out):
    dot = 0.0
    for i in range(g.shape[0]):
        dot += g[i] * s[i]
    for i in range(g.shape[0]):
        out[i] = s[i] * (g[i] - dot)


@njit(cache=True)
def _drnn_bwd(version_b, qw, kw, vw, bw, kr, vr, br, y0, Y, VbarW, VbarR,
              W, R, AW, AR, gY, gyT,
              gqw, gkw, gvw, gbw, gkr, gvr, gbr, gy0):
    B, H, Tn, dk = qw.shape
    dv = vw.shape[3]
    gb1 = np.empty(1, dtype=vw.dtype)
    gy = np.empty(dv, dtype=vw.dtype)
    gz = np.empty(dv, dtype=vw.dtype)
    for b in range(B):
        for h in range(H):
            Wl = W[b, h]
            Rl = R[b, h]
            AWl = AW[b, h]
            ARl = AR[b, h]
            carry = gyT[b, h].copy()
            for t in range(Tn - 1, -1, -1):
                y_prev = Y[b, h, t - 1] if t > 0 else y0[b, h]
                for i in range(dv):
                    gy[i] = gY[b, h, t, i] + carry[i]
                if version_b:
                    s = _softmax1d(y_prev)
                    for i in range(dv):
                        gyi = gy[i]
                        for j in range(dk):
                            AWl[i, j] += gyi * qw[b, h, t, j]
                        for j in range(dv):
                            ARl[i, j] += gyi * s[j]
                    for j in range(dk):
                        acc = 0.0
                        for i in range(dv):
                            acc += Wl[i, j] * gy[i]
                        gqw[b, h, t, j] = acc
                    for j in range(dv):
                        acc = 0.0
                        for i in range(dv):
                            acc += Rl[i, j] * gy[i]
                        gz[j] = acc  # dL/ds
                    _softmax_bwd1d(gz, s, carry)
                else:
                    _softmax_bwd1d(gy, Y[b, h, t], gz)
                    for i in range(dv):
                        gzi = gz[i]
                        for j in range(dk):
                            AWl[i, j] += gzi * qw[b, h, t, j]
                        for j in range(dv):
                            ARl[i, j] += gzi * y_prev[j]
                    for j in range(dk):
                        acc = 0.0
                        for i in range(dv):
                            acc += Wl[i, j] * gz[i]
                        gqw[b, h, t, j] = acc
                    for j in range(dv):
                        acc = 0.0
                        for i in range(dv):
                            acc += Rl[i, j] * gz[i]
                        carry[j] = acc
                _delta_unwrite(Wl, AWl, kw[b, h, t], vw[b, h, t],
                               VbarW[b, h, t], bw[b, h, t],
                               gkw[b, h, t], gvw[b, h, t], gb1)
                gbw[b, h, t] = gb1[0]
                _delta_unwrite(Rl, ARl, kr[b, h, t], vr[b, h, t],
                               VbarR[b, h, t], br[b, h, t],
                               gkr[b, h, t], gvr[b, h, t], gb1)
                gbr[b, h, t] = gb1[0]
            for i in range(dv):
                gy0[b, h, i] = carry[i]


def drnn_scan_bwd(version_b, qw, kw, vw, bw, kr, vr, br, y0, Y,
                  VbarW, VbarR, WT, RT, gY, gWT, gRT, gyT):
    W = WT.copy()
    R = RT.copy()
    AW = gWT.copy()
    AR = gRT.copy()
    gqw = np.empty_like(qw)
    gkw = np.empty_like(kw)
    gvw = np.empty_like(vw)
    gbw = np.empty_like(bw)
    gkr = np.empty_like(kr)
    gvr = np.empty_like(vr)
    gbr = np.empty_like(br)
    gy0 = np.empty_like(y0)
    _drnn_bwd(version_b, qw, kw, vw, bw, kr, vr, br, y0, Y, VbarW, VbarR,
              W, R, AW, AR, gY, gyT, gqw, gkw, gvw, gbw, gkr, gvr, gbr, gy0)
    return gqw, gkw, gvw, gbw, gkr, gvr, gbr, AW, AR, gy0


# -------------------------------------------------------------- delta LSTM

@njit(cache=True)
def _dlstm_fwd(version, q, ks, vs, bs, rks, rvs, rbs, bf, Ws, Rs, y0, c0, Y):
    B, H, Tn, dk = q.shape
    dv = vs.shape[4]
    vb = np.empty(dv, dtype=vs.dtype)
    zf = np.empty(dv, dtype=vs.dtype)
    zo = np.empty(dv, dtype=vs.dtype)
    z_ff = np.empty(dv, dtype=vs.dtype)
    zu = np.empty(dv, dtype=vs.dtype)
    r = np.empty(dv, dtype=vs.dtype)
    for b in range(B):
        for h in range(H):
            y = y0[b, h].copy()
            c = c0[b, h].copy()
            for t in range(Tn):
                s = y if version == 0 else _softmax1d(y)
                for g in range(3):
                    _delta_write(Ws[g, b, h], ks[g, b, h, t], vs[g, b, h, t],
                                 bs[g, b, h, t], vb)
                    _delta_write(Rs[g, b, h], rks[g, b, h, t],
                                 rvs[g, b, h, t], rbs[g, b, h, t], vb)
                qt = q[b, h, t]
                _mv(Ws[0, b, h], qt, z_ff)
                _mv(Rs[0, b, h], s, r)
                for i in range(dv):
                    zu[i] = z_ff[i] + r[i]
                _mv(Ws[1, b, h], qt, zf)
                _mv(Rs[1, b, h], s, r)
                for i in range(dv):
                    zf[i] = zf[i] + r[i] + bf[h, i]
                _mv(Ws[2, b, h], qt, zo)
                _mv(Rs[2, b, h], s, r)
                for i in range(dv):
                    zo[i] = zo[i] + r[i]
                for i in range(dv):
                    f = _sig(zf[i])
                    u = zu[i] if version == 3 else _sig(zu[i])
                    c[i] = f * c[i] + (1.0 - f) * u
                    y[i] = c[i] * _sig(zo[i])
                if version == 0:
                    y = _softmax1d(y)
                elif version == 2:
                    for i in range(dv):
                        y[i] = y[i] + z_ff[i]
                for i in range(dv):
                    Y[b, h, t, i] = y[i]
            for i in range(dv):
                y0[b, h, i] = y[i]
                c0[b, h, i] = c[i]


def dlstm_scan_fwd(version, q, ks, vs, bs, rks, rvs, rbs, bf, Ws0, Rs0,
                   y0, c0):
    Ws = Ws0.copy()
    Rs = Rs0.copy()
    y = y0.copy()
    c = c0.copy()
    Y = np.empty(q.shape[:2] + (q.shape[2], vs.shape[-1]), dtype=vs.dtype)
    _dlstm_fwd(version, q, ks, vs, bs, rks, rvs, rbs, bf, Ws, Rs, y, c, Y)
    return Y, Ws, Rs, y, c


# --------------------------------------------------------------- delta MLP

@njit(cache=True)
def _dmlp_fwd(q, k1, v1, b1, ks, vs, bs, W1, Ws, Y):
    B, H, Tn, _ = q.shape
    dv = v1.shape[3]
    K1 = Ws.shape[0]
    vb = np.empty(dv, dtype=v1.dtype)
    h_cur = np.empty(dv, dtype=v1.dtype)
    for b in range(B):
        for h in range(H):
            for t in range(Tn):
                _delta_write(W1[b, h], k1[b, h, t], v1[b, h, t],
                             b1[b, h, t], vb)
                for j in range(K1):
                    _delta_write(Ws[j, b, h], ks[j, b, h, t], vs[j, b, h, t],
                                 bs[j, b, h, t], vb)
                _mv(W1[b, h], q[b, h, t], h_cur)
                for j in range(K1):
                    _mv(Ws[j, b, h], _softmax1d(h_cur), vb)
                    for i in range(dv):
                        h_cur[i] = vb[i]
                for i in range(dv):
                    Y[b, h, t, i] = h_cur[i]


def dmlp_scan_fwd(q, k1, v1, b1, ks, vs, bs, W1_0, Ws0):
    W1 = W1_0.copy()
    Ws = Ws0.copy()
    Y = np.empty(q.shape[:-1] + (v1.shape[-1],), dtype=v1.dtype)
    _dmlp_fwd(q, k1, v1, b1, ks, vs, bs, W1, Ws, Y)
    return Y, W1, Ws


# --------------------------------------------------------------------- RDN

@njit(cache=True)
def _rdn_fwd(kx, vx, qx, bx, rk, rv, rq, rb, W, y0, Y):
    B, Tn, d_key = kx.shape
    d_out = vx.shape[2]
    H = bx.shape[2]
    dk = d_key // H
    dv = d_out // H
    vb = np.empty(dv, dtype=vx.dtype)
    for b in range(B):
        y = y0[b].copy()
        for t in range(Tn):
            ty = np.tanh(y)
            kf = kx[b, t] + np.dot(rk, ty)
            vf = vx[b, t] + np.dot(rv, ty)
            qf = qx[b, t] + np.dot(rq, ty)
            bt = bx[b, t] + np.dot(rb, ty)
            for h in range(H):
                kh = _softmax1d(kf[h * dk:(h + 1) * dk])
                qh = _softmax1d(qf[h * dk:(h + 1) * dk])
                _delta_write(W[b, h], kh, vf[h * dv:(h + 1) * dv],
                             _sig(bt[h]), vb)
                _mv(W[b, h], qh, y[h * dv:(h + 1) * dv])
            for i in range(d_out):
                Y[b, t, i] = y[i]
        for i in range(d_out):
            y0[b, i] = y[i]


def rdn_scan_fwd(kx, vx, qx, bx, rk, rv, rq, rb, W0, y0):
    W = W0.copy()
    y = y0.copy()
    Y = np.empty(vx.shape, dtype=vx.dtype)
    _rdn_fwd(kx, vx, qx, bx, np.ascontiguousarray(rk),
             np.ascontiguousarray(rv), np.ascontiguousarray(rq),
             np.ascontiguousarray(rb), W, y, Y)
    return Y, W, y


# ------------------------------------------------------------- delta delta

@njit(cache=True)
def _ddelta_fwd(k, q, v, beta, Wo, Wi, Y):
    B, H, Tn, dh = k.shape
    d_big = v.shape[3]
    vbo = np.empty(d_big, dtype=v.dtype)
    vbi = np.empty(dh, dtype=v.dtype)
    z = np.empty(d_big, dtype=v.dtype)
    for b in range(B):
        for h in range(H):
            for t in range(Tn):
                _delta_write(Wo[b, h], k[b, h, t], v[b, h, t],
                             beta[b, h, t], vbo)
                _mv(Wo[b, h], q[b, h, t], z)
                k_in = _softmax1d(z[:dh])
                q_in = _softmax1d(z[2 * dh:3 * dh])
                b_in = _sig(z[3 * dh])
                _delta_write(Wi[b, h], k_in, z[dh:2 * dh], b_in, vbi)
                _mv(Wi[b, h], q_in, Y[b, h, t])


def ddelta_scan_fwd(k, q, v, beta, Wo0, Wi0):
    Wo = Wo0.copy()
    Wi = Wi0.copy()
    Y = np.empty(q.shape, dtype=v.dtype)
    _ddelta_fwd(k, q, v, beta, Wo, Wi, Y)
    return Y, Wo, Wi
