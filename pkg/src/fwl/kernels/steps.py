"""Reference per-step layer math, built entirely from tape primitives.

Every variant is expressed as a step function ``(x, state, weights) ->
(y, state')`` where ``x`` is one input vector (any batch prefix works), state
is a dict of Tensors and ``y`` is the concatenation of all head outputs.
The output mixer ``w_o`` is applied by the sequence-level layer, not here.

This path is differentiable end to end and serves as the oracle the fused
scan kernels are checked against; it is not built for speed.
"""
from __future__ import annotations

import numpy as np

from .. import tensor as T
from .specs import LayerSpec


def phi(k):
    """Key/query normalizer: softmax over each head's sub-vector."""
    return T.softmax(k, axis=-1)


def sum_update(W, k, v):
    """Purely additive programming instruction: W + v (x) k."""
    return T.add(W, T.outer(v, k))


def delta_update(W, k, v, beta):
    """Replace the value stored under ``k`` by a beta-weighted correction.

    beta carries one scalar per head (shape (..., H)). Returns the new fast
    matrix and the value the old one had stored under ``k``.
    """
    v_bar = T.matvec(W, k)
    correction = T.mul(T.sub(v, v_bar),
                       T.reshape(beta, beta.data.shape + (1,)))
    return T.add(W, T.outer(correction, k)), v_bar


def _heads(t, H):
    shape = t.data.shape
    return T.reshape(t, shape[:-1] + (H, shape[-1] // H))


def _merge(t):
    shape = t.data.shape
    return T.reshape(t, shape[:-2] + (shape[-2] * shape[-1],))


def _project(w, x, H):
    """x -> per-head projections: (..., d_in) to (..., H, d/H)."""
    return _heads(T.matvec(w, x), H)


def _write_inputs(x, w, H, prefix="w"):
    """phi'd key, value and sigmoid beta for one delta-programmed bank."""
    k = phi(_project(w[f"{prefix}_k"], x, H))
    v = _project(w[f"{prefix}_v"], x, H)
    beta = T.sigmoid(T.matvec(w[f"{prefix}_beta"], x))
    return k, v, beta


def linear_transformer_step(x, state, w):
    H = state["W"].data.shape[-3]
    k = phi(_project(w.w_k, x, H))
    v = _project(w.w_v, x, H)
    q = phi(_project(w.w_q, x, H))
    W = sum_update(state["W"], k, v)
    return _merge(T.matvec(W, q)), {"W": W}


def delta_net_step(x, state, w):
    H = state["W"].data.shape[-3]
    k, v, beta = _write_inputs(x, w, H)
    q = phi(_project(w.w_q, x, H))
    W, _ = delta_update(state["W"], k, v, beta)
    return _merge(T.matvec(W, q)), {"W": W}


def delta_rnn_step(x, state, w, version="B"):
    """Fast RNN: delta-programmed feedforward W and recurrent R matrices.

    Version B reads out y = W q + R softmax(y_prev); version A instead
    squashes the whole readout, y = softmax(W q + R y_prev).
    """
    H = state["W"].data.shape[-3]
    k, v, beta = _write_inputs(x, w, H)
    q = phi(_project(w.w_q, x, H))
    W, _ = delta_update(state["W"], k, v, beta)
    kr, vr, betar = _write_inputs(x, w, H, prefix="wr")
    R, _ = delta_update(state["R"], kr, vr, betar)
    y_prev = state["y"]
    if version == "B":
        y = T.add(T.matvec(W, q), T.matvec(R, T.softmax(y_prev, axis=-1)))
    elif version == "A":
        y = T.softmax(T.add(T.matvec(W, q), T.matvec(R, y_prev)), axis=-1)
    else:
        raise ValueError(f"unknown DeltaRNN version {version!r}")
    return _merge(y), {"W": W, "R": R, "y": y}


def delta_lstm_step(x, state, w, version="A"):
    """Fast LSTM: three delta-programmed gate banks sharing one query.

    Update and forget gates are tied: c = f*c_prev + (1-f)*u. The versions
    differ in how the previous output enters the recurrent terms and in the
    output nonlinearity:
      A: raw y_prev everywhere, y = softmax(c*o)
      B: softmax(y_prev) in recurrent terms, y = c*o
      C: as B plus a feedforward skip, y = c*o + W_u q
      D: as B but with an unsquashed update candidate
    """
    H = state["W_u"].data.shape[-3]
    q = phi(_project(w.w_q, x, H))
    new = {}
    z = {}
    s = state["y"] if version == "A" else T.softmax(state["y"], axis=-1)
    for gate in ("u", "f", "o"):
        k, v, beta = _write_inputs(x, w, H, prefix=gate)
        kr, vr, betar = _write_inputs(x, w, H, prefix=f"{gate}r")
        W, _ = delta_update(state[f"W_{gate}"], k, v, beta)
        R, _ = delta_update(state[f"R_{gate}"], kr, vr, betar)
        new[f"W_{gate}"], new[f"R_{gate}"] = W, R
        z[gate] = T.add(T.matvec(W, q), T.matvec(R, s))
    z_ff = T.matvec(new["W_u"], q)  # feedforward half of the update gate
    b_f = T.reshape(w.b_f, (H, w.b_f.data.shape[0] // H))
    f = T.sigmoid(T.add(z["f"], b_f))
    o = T.sigmoid(z["o"])
    u = z["u"] if version == "D" else T.sigmoid(z["u"])
    c = T.add(T.mul(f, state["c"]), T.mul(T.sub(T.Tensor(1.0), f), u))
    co = T.mul(c, o)
    if version == "A":
        y = T.softmax(co, axis=-1)
    elif version == "C":
        y = T.add(co, z_ff)
    elif version in ("B", "D"):
        y = co
    else:
        raise ValueError(f"unknown DeltaLSTM version {version!r}")
    new["y"], new["c"] = y, c
    return _merge(y), new


def delta_mlp_step(x, state, w, n_layers=2):
    """Fast two-or-more-layer MLP, every weight matrix delta-programmed.

    The query doubles as the first hidden activation; each further layer
    consumes the softmax of the previous one. No activation on the output.
    """
    H = state["W1"].data.shape[-3]
    h = phi(_project(w.w_q, x, H))
    new = {}
    for j in range(1, n_layers + 1):
        k, v, beta = _write_inputs(x, w, H, prefix=f"m{j}")
        W, _ = delta_update(state[f"W{j}"], k, v, beta)
        new[f"W{j}"] = W
        h = T.matvec(W, h if j == 1 else T.softmax(h, axis=-1))
    return _merge(h), new


def rdn_step(x, state, w):
    """Recurrent delta net: writes and reads depend on the previous output.

    Every write/read input gets a recurrent term in tanh(y_prev) added to its
    input projection before the usual phi / sigmoid.
    """
    H = state["W"].data.shape[-3]
    ty = T.tanh(_merge(state["y"]))
    k = phi(_heads(T.add(T.matvec(w.w_k, x), T.matvec(w.r_k, ty)), H))
    v = _heads(T.add(T.matvec(w.w_v, x), T.matvec(w.r_v, ty)), H)
    q = phi(_heads(T.add(T.matvec(w.w_q, x), T.matvec(w.r_q, ty)), H))
    beta = T.sigmoid(T.add(T.matvec(w.w_beta, x), T.matvec(w.r_beta, ty)))
    W, _ = delta_update(state["W"], k, v, beta)
    y = T.matvec(W, q)
    return _merge(y), {"W": W, "y": y}


def delta_delta_step(x, state, w):
    """Two-level programming: a delta-programmed matrix emits the
    instructions (key, value, query, beta) that program a second one.
    """
    H = state["W_inner"].data.shape[-3]
    dh = state["W_inner"].data.shape[-1]
    z = _heads(T.matvec(w.w_slow, x), H)
    k, q, v, beta = T.split(z, [dh, dh, 3 * dh + 1, 1], axis=-1)
    beta = T.sigmoid(T.reshape(beta, beta.data.shape[:-1]))
    W_outer, _ = delta_update(state["W_outer"], phi(k), v, beta)
    z_in = T.matvec(W_outer, phi(q))
    k_in, v_in, q_in, beta_in = T.split(z_in, [dh, dh, dh, 1], axis=-1)
    beta_in = T.sigmoid(T.reshape(beta_in, beta_in.data.shape[:-1]))
    W_inner, _ = delta_update(state["W_inner"], phi(k_in), v_in, beta_in)
    y = T.matvec(W_inner, phi(q_in))
    return _merge(y), {"W_outer": W_outer, "W_inner": W_inner}


_STEP_FNS = {
    "LinearTransformer": linear_transformer_step,
    "DeltaNet": delta_net_step,
    "DeltaRNN_A": lambda x, s, w: delta_rnn_step(x, s, w, version="A"),
    "DeltaRNN_B": lambda x, s, w: delta_rnn_step(x, s, w, version="B"),
    "DeltaLSTM_A": lambda x, s, w: delta_lstm_step(x, s, w, version="A"),
    "DeltaLSTM_B": lambda x, s, w: delta_lstm_step(x, s, w, version="B"),
    "DeltaLSTM_C": lambda x, s, w: delta_lstm_step(x, s, w, version="C"),
    "DeltaLSTM_D": lambda x, s, w: delta_lstm_step(x, s, w, version="D"),
    "RDN": rdn_step,
    "DeltaDelta": delta_delta_step,
}


def step_fn(spec: LayerSpec):
    """Resolve a LayerSpec to its step callable."""
    if spec.variant == "DeltaMLP":
        K = spec.mlp_layers
        return lambda x, s, w: delta_mlp_step(x, s, w, n_layers=K)
    try:
        return _STEP_FNS[spec.variant]
    except KeyError:
        raise ValueError(
            f"{spec.variant} has no per-step form") from None


def multihead(apply_head, head_inputs, head_states):
    """Run one head's step on each head and concatenate the outputs.

    head_inputs: per-head argument tuples; head_states: per-head states.
    apply_head(*inputs, state) -> (y_head, state'). Returns the concatenated
    output and the list of new per-head states.
    """
    ys, new_states = [], []
    for inputs, state in zip(head_inputs, head_states):
        y, s = apply_head(*inputs, state)
        ys.append(y)
        new_states.append(s)
    return T.concat(ys, axis=-1), new_states


def baseline_softmax_attention(q, k, v):
    """Causal scaled dot-product attention over a whole sequence.

    q: (..., Tq, d_k); k: (..., Tk, d_k); v: (..., Tk, d_v) with Tk >= Tq —
    the first Tk - Tq keys are past context every query may see; beyond that,
    query i attends causally.
    """
    dk = q.data.shape[-1]
    ax = tuple(range(k.data.ndim - 2)) + (k.data.ndim - 1, k.data.ndim - 2)
    scores = T.scale(T.matmul(q, T.transpose(k, ax)), 1.0 / np.sqrt(dk))
    tq, tk = scores.data.shape[-2:]
    mask = np.triu(np.full((tq, tk), -1e30, dtype=scores.data.dtype),
                   k=1 + tk - tq)
    return T.matmul(T.softmax(T.add(scores, T.Tensor(mask)), axis=-1), v)
