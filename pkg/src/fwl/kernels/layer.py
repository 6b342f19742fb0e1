"""One fast-weight layer applied to a whole (B, T, d) sequence.

``layer_forward`` stages the slow-net projections (batched GEMMs on the
tape, so gradients reach the slow weights), hands the time recursion to one
of three interchangeable cores, merges heads and applies the output mixer:

  fused      whole-sequence tape node backed by the scan kernels, with a
             hand-derived reverse scan (the variants that get trained at scale)
  reference  per-step tape ops — differentiable for every variant, slow
  scan       forward-only backend kernels (eval; raises under an active tape)

Fast state enters and leaves as a :class:`FastState` of plain arrays; its
history is never part of the tape.
"""
from __future__ import annotations

import numpy as np

from .. import tensor as T
from . import backend, fused, scans, steps
from .specs import FastState, LayerSpec


def _proj_seq(x, w, H):
    """(B, T, d_in) x (D, d_in) -> (B, H, T, D/H)."""
    full = T.matmul(x, T.transpose(w, (1, 0)))
    B, Tn, D = full.data.shape
    heads = T.reshape(full, (B, Tn, H, D // H))
    return T.transpose(heads, (0, 2, 1, 3))


def _proj_beta(x, w):
    """(B, T, d_in) x (H, d_in) -> sigmoid betas (B, H, T)."""
    full = T.matmul(x, T.transpose(w, (1, 0)))
    return T.sigmoid(T.transpose(full, (0, 2, 1)))


def _merge_heads(y):
    """(B, H, T, dh) -> (B, T, H*dh)."""
    B, H, Tn, dh = y.data.shape
    return T.reshape(T.transpose(y, (0, 2, 1, 3)), (B, Tn, H * dh))


def _resolve_path(spec, path):
    taped = T.active_tape() is not None
    if path == "auto":
        if spec.variant in fused.FUSED_VARIANTS and taped:
            return "fused"
        return "reference" if taped else "scan"
    if path == "scan" and taped:
        raise ValueError("scan path is forward-only; it cannot run under an "
                         "active tape (gradients would silently vanish)")
    if path == "fused" and spec.variant not in fused.FUSED_VARIANTS:
        raise ValueError(f"{spec.variant} has no fused core")
    return path


def _reference_core(spec, w, x, state):
    """Per-step loop over the tape-primitive step functions."""
    step = steps.step_fn(spec)
    B, Tn, d_in = x.data.shape
    st = {k: T.Tensor(a) for k, a in state.arrays.items()}
    ys = []
    for t in range(Tn):
        x_t = T.reshape(T.slice_axis(x, 1, t, t + 1), (B, d_in))
        y_t, st = step(x_t, st, w)
        ys.append(y_t)
    y = T.stack(ys, axis=1)
    return y, FastState({k: v.data for k, v in st.items()})


def _baseline_core(spec, w, x, state):
    H = spec.heads
    q = _proj_seq(x, w.w_q, H)
    k = _proj_seq(x, w.w_k, H)
    v = _proj_seq(x, w.w_v, H)
    kc, vc = state["k_cache"], state["v_cache"]
    if kc.shape[2]:
        k_all = T.concat([T.Tensor(kc), k], axis=2)
        v_all = T.concat([T.Tensor(vc), v], axis=2)
    else:
        k_all, v_all = k, v
    y = steps.baseline_softmax_attention(q, k_all, v_all)
    new = FastState({"k_cache": k_all.data, "v_cache": v_all.data})
    return _merge_heads(y), new


def layer_forward(spec: LayerSpec, w, x, state: FastState, path="auto"):
    """Run one layer over a sequence.

    x: (B, T, d_in) Tensor; state: FastState for batch B. Returns the mixed
    output (B, T, d_out) Tensor and the final FastState.
    """
    if spec.variant == "BaselineSoftmax":
        y, new = _baseline_core(spec, w, x, state)
        return T.matmul(y, T.transpose(w.w_o, (1, 0))), new

    path = _resolve_path(spec, path)
    if path == "reference":
        y, new = _reference_core(spec, w, x, state)
        return T.matmul(y, T.transpose(w.w_o, (1, 0))), new

    H = spec.heads
    var = spec.variant
    be = backend.resolve()

    # The scan kernels need every array in one dtype. Projections promote
    # (x ⊗ weights) on their own; carried state and raw weight arrays must
    # be lifted to match, or mixed-precision inputs would make numpy mix
    # silently and the compiled kernels fail to unify.
    ref = w.w_q if "w_q" in w else w.w_slow
    dt = np.result_type(x.data.dtype, ref.data.dtype)
    st = {n: np.ascontiguousarray(a, dtype=dt)
          for n, a in state.arrays.items()}

    if var == "LinearTransformer":
        q = T.softmax(_proj_seq(x, w.w_q, H))
        k = T.softmax(_proj_seq(x, w.w_k, H))
        v = _proj_seq(x, w.w_v, H)
        if path == "fused":
            y, WT = fused.lt_seq(q, k, v, st["W"])
        else:
            Y, WT = be.lt_scan_fwd(q.data, k.data, v.data, st["W"])
            y = T.Tensor(Y)
        new = FastState({"W": WT})

    elif var == "DeltaNet":
        q = T.softmax(_proj_seq(x, w.w_q, H))
        k = T.softmax(_proj_seq(x, w.w_k, H))
        v = _proj_seq(x, w.w_v, H)
        beta = _proj_beta(x, w.w_beta)
        if path == "fused":
            y, WT = fused.delta_seq(q, k, v, beta, st["W"])
        else:
            Y, _, WT = be.delta_scan_fwd(q.data, k.data, v.data, beta.data,
                                         st["W"])
            y = T.Tensor(Y)
        new = FastState({"W": WT})

    elif var in ("DeltaRNN_A", "DeltaRNN_B"):
        version_b = var.endswith("B")
        qw = T.softmax(_proj_seq(x, w.w_q, H))
        kw = T.softmax(_proj_seq(x, w.w_k, H))
        vw = _proj_seq(x, w.w_v, H)
        bw = _proj_beta(x, w.w_beta)
        kr = T.softmax(_proj_seq(x, w.wr_k, H))
        vr = _proj_seq(x, w.wr_v, H)
        br = _proj_beta(x, w.wr_beta)
        if path == "fused":
            y, (WT, RT, yT) = fused.drnn_seq(
                version_b, qw, kw, vw, bw, kr, vr, br,
                st["W"], st["R"], st["y"])
        else:
            Y, _, _, WT, RT = be.drnn_scan_fwd(
                version_b, qw.data, kw.data, vw.data, bw.data,
                kr.data, vr.data, br.data,
                st["W"], st["R"], st["y"])
            yT = Y[:, :, -1].copy() if Y.shape[2] else st["y"].copy()
            y = T.Tensor(Y)
        new = FastState({"W": WT, "R": RT, "y": yT})

    elif var.startswith("DeltaLSTM"):
        version = "ABCD".index(var[-1])
        q = T.softmax(_proj_seq(x, w.w_q, H))
        ks, vs, bs, rks, rvs, rbs = [], [], [], [], [], []
        for gate in ("u", "f", "o"):
            ks.append(T.softmax(_proj_seq(x, w[f"{gate}_k"], H)).data)
            vs.append(_proj_seq(x, w[f"{gate}_v"], H).data)
            bs.append(_proj_beta(x, w[f"{gate}_beta"]).data)
            rks.append(T.softmax(_proj_seq(x, w[f"{gate}r_k"], H)).data)
            rvs.append(_proj_seq(x, w[f"{gate}r_v"], H).data)
            rbs.append(_proj_beta(x, w[f"{gate}r_beta"]).data)
        bf = w.b_f.data.reshape(H, spec.dh_out).astype(dt, copy=False)
        Ws0 = np.stack([st[f"W_{g}"] for g in ("u", "f", "o")])
        Rs0 = np.stack([st[f"R_{g}"] for g in ("u", "f", "o")])
        Y, WsT, RsT, yT, cT = be.dlstm_scan_fwd(
            version, q.data, np.stack(ks), np.stack(vs), np.stack(bs),
            np.stack(rks), np.stack(rvs), np.stack(rbs), bf, Ws0, Rs0,
            st["y"], st["c"])
        y = T.Tensor(Y)
        new = FastState({
            **{f"W_{g}": WsT[i] for i, g in enumerate(("u", "f", "o"))},
            **{f"R_{g}": RsT[i] for i, g in enumerate(("u", "f", "o"))},
            "y": yT, "c": cT})

    elif var == "DeltaMLP":
        K = spec.mlp_layers
        q = T.softmax(_proj_seq(x, w.w_q, H))
        k1 = T.softmax(_proj_seq(x, w.m1_k, H)).data
        v1 = _proj_seq(x, w.m1_v, H).data
        b1 = _proj_beta(x, w.m1_beta).data
        B, Tn = x.data.shape[:2]
        dv = spec.dh_out
        if K > 1:
            ks = np.stack([T.softmax(_proj_seq(x, w[f"m{j}_k"], H)).data
                           for j in range(2, K + 1)])
            vs = np.stack([_proj_seq(x, w[f"m{j}_v"], H).data
                           for j in range(2, K + 1)])
            bs = np.stack([_proj_beta(x, w[f"m{j}_beta"]).data
                           for j in range(2, K + 1)])
            Ws0 = np.stack([st[f"W{j}"] for j in range(2, K + 1)])
        else:
            ks = np.zeros((0, B, H, Tn, dv), dtype=v1.dtype)
            vs = np.zeros((0, B, H, Tn, dv), dtype=v1.dtype)
            bs = np.zeros((0, B, H, Tn), dtype=v1.dtype)
            Ws0 = np.zeros((0, B, H, dv, dv), dtype=v1.dtype)
        Y, W1T, WsT = be.dmlp_scan_fwd(q.data, k1, v1, b1, ks, vs, bs,
                                       st["W1"], Ws0)
        y = T.Tensor(Y)
        new_arrays = {"W1": W1T}
        for j in range(2, K + 1):
            new_arrays[f"W{j}"] = WsT[j - 2]
        new = FastState(new_arrays)

    elif var == "RDN":
        B = x.data.shape[0]
        kx = T.matmul(x, T.transpose(w.w_k, (1, 0))).data
        vx = T.matmul(x, T.transpose(w.w_v, (1, 0))).data
        qx = T.matmul(x, T.transpose(w.w_q, (1, 0))).data
        bx = T.matmul(x, T.transpose(w.w_beta, (1, 0))).data
        y0 = st["y"].reshape(B, spec.d_out)
        rk, rv, rq, rb = (np.ascontiguousarray(w[n].data, dtype=dt)
                          for n in ("r_k", "r_v", "r_q", "r_beta"))
        Y, WT, yT = be.rdn_scan_fwd(kx, vx, qx, bx, rk, rv, rq, rb,
                                    st["W"], y0)
        new = FastState({"W": WT,
                         "y": yT.reshape(B, H, spec.dh_out)})
        return T.matmul(T.Tensor(Y), T.transpose(w.w_o, (1, 0))), new

    elif var == "DeltaDelta":
        dh = spec.dh_out
        z = _proj_seq(x, w.w_slow, H).data  # (B, H, T, 5dh+2)
        k = scans._softmax(z[..., :dh])
        qh = scans._softmax(z[..., dh:2 * dh])
        v = np.ascontiguousarray(z[..., 2 * dh:5 * dh + 1])
        beta = scans._sigmoid(z[..., 5 * dh + 1])
        Y, WoT, WiT = be.ddelta_scan_fwd(k, qh, v, beta, st["W_outer"],
                                         st["W_inner"])
        y = T.Tensor(Y)
        new = FastState({"W_outer": WoT, "W_inner": WiT})

    else:  # pragma: no cover - specs validate variants
        raise ValueError(f"unhandled variant {var}")

    y = _merge_heads(y)
    return T.matmul(y, T.transpose(w.w_o, (1, 0))), new
