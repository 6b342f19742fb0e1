"""Sequence scan kernels, pure numpy.

These process a whole (B, H, T, ...) sequence with one python loop over time,
vectorized over batch and heads. Forward scans exist for every fast-weight
variant (used at eval); the three training workhorses (additive, delta,
delta-RNN) also get hand-derived reverse scans so a whole sequence becomes a
single node on the tape.

All scans are functional: input state arrays are copied, never mutated.
Activations applied to slow-net projections (phi on keys/queries, sigmoid on
betas) happen *outside*; activations on recurrent quantities (previous
outputs, fast-MLP hiddens, the two-level layer's inner instructions) happen
inside, because they depend on state.

The reverse scans rebuild intermediate fast matrices by undoing updates step
by step (W_{t-1} = W_t - correction), trading a second pass of rank-1 work
for not storing T matrices.
"""
from __future__ import annotations

import numpy as np


def _mv(M, x):
    """(..., i, j) x (..., j) -> (..., i)."""
    return np.matmul(M, x[..., None])[..., 0]


def _mtv(M, x):
    """(..., i, j) x (..., i) -> (..., j)."""
    return np.matmul(M.swapaxes(-1, -2), x[..., None])[..., 0]


def _outer(u, v):
    return u[..., :, None] * v[..., None, :]


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_bwd(g, s):
    """Gradient through y = softmax(x) given g = dL/dy and s = y."""
    return s * (g - (g * s).sum(axis=-1, keepdims=True))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------- additive

def lt_scan_fwd(q, k, v, W0):
    W = W0.copy()
    Y = np.empty(q.shape[:-1] + (v.shape[-1],), dtype=v.dtype)
    for t in range(q.shape[2]):
        W += _outer(v[:, :, t], k[:, :, t])
        Y[:, :, t] = _mv(W, q[:, :, t])
    return Y, W


def lt_scan_bwd(q, k, v, WT, gY, gWT):
    W = WT.copy()
    A = gWT.copy()
    gq = np.empty_like(q)
    gk = np.empty_like(k)
    gv = np.empty_like(v)
    for t in range(q.shape[2] - 1, -1, -1):
        gy = gY[:, :, t]
        A += _outer(gy, q[:, :, t])
        gq[:, :, t] = _mtv(W, gy)
        gv[:, :, t] = _mv(A, k[:, :, t])
        gk[:, :, t] = _mtv(A, v[:, :, t])
        W -= _outer(v[:, :, t], k[:, :, t])
    return gq, gk, gv, A


# ------------------------------------------------------------------- delta

def _delta_fwd_step(W, k, v, beta):
    """In-place delta write; returns what W had stored under k."""
    v_bar = _mv(W, k)
    W += beta[..., None, None] * _outer(v - v_bar, k)
    return v_bar


def _delta_bwd_step(W, A, k, v, v_bar, beta):
    """Reverse one delta write.

    On entry W is the post-update matrix and A its adjoint; on exit they
    belong to the pre-update matrix. Returns (gk, gv, gbeta).
    """
    d = v - v_bar
    W -= beta[..., None, None] * _outer(d, k)
    gbeta = np.einsum("...ij,...i,...j->...", A, d, k)
    c = _mv(A, k)
    gv = beta[..., None] * c
    gv_bar = -gv
    gk = beta[..., None] * _mtv(A, d) + _mtv(W, gv_bar)
    A += _outer(gv_bar, k)
    return gk, gv, gbeta


def delta_scan_fwd(q, k, v, beta, W0):
    W = W0.copy()
    Y = np.empty(q.shape[:-1] + (v.shape[-1],), dtype=v.dtype)
    Vbar = np.empty_like(Y)
    for t in range(q.shape[2]):
        Vbar[:, :, t] = _delta_fwd_step(W, k[:, :, t], v[:, :, t],
                                        beta[:, :, t])
        Y[:, :, t] = _mv(W, q[:, :, t])
    return Y, Vbar, W


def delta_scan_bwd(q, k, v, beta, WT, Vbar, gY, gWT):
    W = WT.copy()
    A = gWT.copy()
    gq = np.empty_like(q)
    gk = np.empty_like(k)
    gv = np.empty_like(v)
    gbeta = np.empty_like(beta)
    for t in range(q.shape[2] - 1, -1, -1):
        gy = gY[:, :, t]
        A += _outer(gy, q[:, :, t])
        gq[:, :, t] = _mtv(W, gy)
        gk[:, :, t], gv[:, :, t], gbeta[:, :, t] = _delta_bwd_step(
            W, A, k[:, :, t], v[:, :, t], Vbar[:, :, t], beta[:, :, t])
    return gq, gk, gv, gbeta, A


# --------------------------------------------------------------- delta RNN

def drnn_scan_fwd(version_b, qw, kw, vw, bw, kr, vr, br, W0, R0, y0):
    W = W0.copy()
    R = R0.copy()
    y = y0.copy()
    Y = np.empty(qw.shape[:-1] + (vw.shape[-1],), dtype=vw.dtype)
    VbarW = np.empty_like(Y)
    VbarR = np.empty_like(Y)
    for t in range(qw.shape[2]):
        VbarW[:, :, t] = _delta_fwd_step(W, kw[:, :, t], vw[:, :, t],
                                         bw[:, :, t])
        VbarR[:, :, t] = _delta_fwd_step(R, kr[:, :, t], vr[:, :, t],
                                         br[:, :, t])
        if version_b:
            y = _mv(W, qw[:, :, t]) + _mv(R, _softmax(y))
        else:
            y = _softmax(_mv(W, qw[:, :, t]) + _mv(R, y))
        Y[:, :, t] = y
    return Y, VbarW, VbarR, W, R


def drnn_scan_bwd(version_b, qw, kw, vw, bw, kr, vr, br, y0, Y,
                  VbarW, VbarR, WT, RT, gY, gWT, gRT, gyT):
    W = WT.copy()
    R = RT.copy()
    AW = gWT.copy()
    AR = gRT.copy()
    carry = gyT.copy()
    gqw = np.empty_like(qw)
    gkw = np.empty_like(kw)
    gvw = np.empty_like(vw)
    gbw = np.empty_like(bw)
    gkr = np.empty_like(kr)
    gvr = np.empty_like(vr)
    gbr = np.empty_like(br)
    for t in range(qw.shape[2] - 1, -1, -1):
        y_prev = Y[:, :, t - 1] if t > 0 else y0
        gy = gY[:, :, t] + carry
        if version_b:
            s = _softmax(y_prev)
            AW += _outer(gy, qw[:, :, t])
            gqw[:, :, t] = _mtv(W, gy)
            AR += _outer(gy, s)
            carry = _softmax_bwd(_mtv(R, gy), s)
        else:
            gz = _softmax_bwd(gy, Y[:, :, t])
            AW += _outer(gz, qw[:, :, t])
            gqw[:, :, t] = _mtv(W, gz)
            AR += _outer(gz, y_prev)
            carry = _mtv(R, gz)
        gkw[:, :, t], gvw[:, :, t], gbw[:, :, t] = _delta_bwd_step(
            W, AW, kw[:, :, t], vw[:, :, t], VbarW[:, :, t], bw[:, :, t])
        gkr[:, :, t], gvr[:, :, t], gbr[:, :, t] = _delta_bwd_step(
            R, AR, kr[:, :, t], vr[:, :, t], VbarR[:, :, t], br[:, :, t])
    return gqw, gkw, gvw, gbw, gkr, gvr, gbr, AW, AR, carry


# -------------------------------------------------------------- delta LSTM

def dlstm_scan_fwd(version, q, ks, vs, bs, rks, rvs, rbs, bf,
                   Ws0, Rs0, y0, c0):
    """version: 0..3 for A..D. Gate stacking order is (u, f, o)."""
    Ws = Ws0.copy()
    Rs = Rs0.copy()
    y = y0.copy()
    c = c0.copy()
    Y = np.empty(q.shape[:2] + (q.shape[2], vs.shape[-1]), dtype=vs.dtype)
    for t in range(q.shape[2]):
        s = y if version == 0 else _softmax(y)
        for g in range(3):
            _delta_fwd_step(Ws[g], ks[g, :, :, t], vs[g, :, :, t],
                            bs[g, :, :, t])
            _delta_fwd_step(Rs[g], rks[g, :, :, t], rvs[g, :, :, t],
                            rbs[g, :, :, t])
        qt = q[:, :, t]
        z_ff = _mv(Ws[0], qt)
        zu = z_ff + _mv(Rs[0], s)
        zf = _mv(Ws[1], qt) + _mv(Rs[1], s) + bf
        zo = _mv(Ws[2], qt) + _mv(Rs[2], s)
        f = _sigmoid(zf)
        o = _sigmoid(zo)
        u = zu if version == 3 else _sigmoid(zu)
        c = f * c + (1.0 - f) * u
        co = c * o
        if version == 0:
            y = _softmax(co)
        elif version == 2:
            y = co + z_ff
        else:
            y = co
        Y[:, :, t] = y
    return Y, Ws, Rs, y, c


# --------------------------------------------------------------- delta MLP

def dmlp_scan_fwd(q, k1, v1, b1, ks, vs, bs, W1_0, Ws0):
    """First fast layer plus a (possibly empty) stack of square ones."""
    W1 = W1_0.copy()
    Ws = Ws0.copy()
    Y = np.empty(q.shape[:-1] + (v1.shape[-1],), dtype=v1.dtype)
    for t in range(q.shape[2]):
        _delta_fwd_step(W1, k1[:, :, t], v1[:, :, t], b1[:, :, t])
        for j in range(Ws.shape[0]):
            _delta_fwd_step(Ws[j], ks[j, :, :, t], vs[j, :, :, t],
                            bs[j, :, :, t])
        h = _mv(W1, q[:, :, t])
        for j in range(Ws.shape[0]):
            h = _mv(Ws[j], _softmax(h))
        Y[:, :, t] = h
    return Y, W1, Ws


# --------------------------------------------------------------------- RDN

def rdn_scan_fwd(kx, vx, qx, bx, rk, rv, rq, rb, W0, y0):
    """Raw (pre-activation) input projections; recurrent terms added inside.

    kx, qx: (B, T, d_key); vx: (B, T, d_out); bx: (B, T, H); the r* slow
    matrices map the previous full output back onto each projection.
    """
    B, Tn, d_key = kx.shape
    d_out = vx.shape[-1]
    H = bx.shape[-1]
    W = W0.copy()
    y = y0.copy()
    Y = np.empty((B, Tn, d_out), dtype=vx.dtype)
    for t in range(Tn):
        ty = np.tanh(y)
        kh = _softmax((kx[:, t] + ty @ rk.T).reshape(B, H, -1))
        vh = (vx[:, t] + ty @ rv.T).reshape(B, H, -1)
        qh = _softmax((qx[:, t] + ty @ rq.T).reshape(B, H, -1))
        beta = _sigmoid(bx[:, t] + ty @ rb.T)
        _delta_fwd_step(W, kh, vh, beta)
        y = _mv(W, qh).reshape(B, d_out)
        Y[:, t] = y
    return Y, W, y


# ------------------------------------------------------------- delta delta

def ddelta_scan_fwd(k, q, v, beta, Wo0, Wi0):
    """Outer instructions precomputed from x; inner ones read out of Wo."""
    dh = k.shape[-1]
    Wo = Wo0.copy()
    Wi = Wi0.copy()
    Y = np.empty(q.shape[:-1] + (dh,), dtype=v.dtype)
    for t in range(q.shape[2]):
        _delta_fwd_step(Wo, k[:, :, t], v[:, :, t], beta[:, :, t])
        z = _mv(Wo, q[:, :, t])
        k_in = _softmax(z[..., :dh])
        v_in = z[..., dh:2 * dh]
        q_in = _softmax(z[..., 2 * dh:3 * dh])
        b_in = _sigmoid(z[..., 3 * dh])
        _delta_fwd_step(Wi, k_in, v_in, b_in)
        Y[:, :, t] = _mv(Wi, q_in)
    return Y, Wo, Wi
