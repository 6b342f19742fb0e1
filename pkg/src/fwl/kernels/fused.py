"""Whole-sequence layer cores as single tape nodes.

Each op consumes the already-activated slow-net projections as (B, H, T, ...)
Tensors plus the initial fast state as plain arrays (state enters segments as
a value, so it never needs gradients), runs the backend scan forward, and
registers the matching reverse scan as the node's backward. Gradients flowing
into the final state are always zero for the same reason.

Only the variants that get trained at scale have fused forms; everything else
trains through the per-step reference path.
"""
from __future__ import annotations

import numpy as np

from .. import tensor as T
from ..tensor import _accumulate, _emit
from . import backend


def lt_seq(q, k, v, W0):
    """Additive-update scan. Returns (Y Tensor, final W array)."""
    be = backend.resolve()
    Y, WT = be.lt_scan_fwd(q.data, k.data, v.data, W0)

    def backward(gY):
        gq, gk, gv, _ = be.lt_scan_bwd(q.data, k.data, v.data, WT,
                                       np.ascontiguousarray(gY),
                                       np.zeros_like(WT))
        _accumulate(q, gq)
        _accumulate(k, gk)
        _accumulate(v, gv)

    return _emit(Y, (q, k, v), backward), WT


def delta_seq(q, k, v, beta, W0):
    """Delta-update scan. Returns (Y Tensor, final W array)."""
    be = backend.resolve()
    Y, Vbar, WT = be.delta_scan_fwd(q.data, k.data, v.data, beta.data, W0)

    def backward(gY):
        gq, gk, gv, gb, _ = be.delta_scan_bwd(
            q.data, k.data, v.data, beta.data, WT, Vbar,
            np.ascontiguousarray(gY), np.zeros_like(WT))
        _accumulate(q, gq)
        _accumulate(k, gk)
        _accumulate(v, gv)
        _accumulate(beta, gb)

    return _emit(Y, (q, k, v, beta), backward), WT


def drnn_seq(version_b, qw, kw, vw, bw, kr, vr, br, W0, R0, y0):
    """Recurrent delta scan. Returns (Y Tensor, (WT, RT, yT) arrays)."""
    be = backend.resolve()
    Y, VbarW, VbarR, WT, RT = be.drnn_scan_fwd(
        version_b, qw.data, kw.data, vw.data, bw.data,
        kr.data, vr.data, br.data, W0, R0, y0)
    yT = Y[:, :, -1].copy() if Y.shape[2] else y0.copy()

    def backward(gY):
        grads = be.drnn_scan_bwd(
            version_b, qw.data, kw.data, vw.data, bw.data,
            kr.data, vr.data, br.data, y0, Y, VbarW, VbarR, WT, RT,
            np.ascontiguousarray(gY), np.zeros_like(WT), np.zeros_like(RT),
            np.zeros_like(y0))
        for t, g in zip((qw, kw, vw, bw, kr, vr, br), grads[:7]):
            _accumulate(t, g)

    return _emit(Y, (qw, kw, vw, bw, kr, vr, br), backward), (WT, RT, yT)


FUSED_VARIANTS = ("LinearTransformer", "DeltaNet", "DeltaRNN_A", "DeltaRNN_B")
