"""Built-in invariant suite behind the `verify` subcommand.

Each check re-derives an algebraic or behavioural guarantee of the
package from scratch — quadratic attention recomputed with einsum, delta
writes replayed by hand, finite differences, independent task
interpreters — and compares the package's answer against it. The suite
is the fast "is this build sane" gate; the full test tree goes further
but needs a dev install.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model
from . import tensor as T
from .kernels import FastState, backend
from .kernels.layer import layer_forward
from .kernels.specs import LayerSpec, SlowWeights, init_slow_weights
from .tasks import (CodeExecSpec, ListOpsSpec, episode_rng, evaluate_listops,
                    gen_episode, interpret_code)


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


def _tiny_model(variant, seed=0, vocab=11, heads=2, d_model=8):
    positional = "sinusoidal" if variant == "BaselineSoftmax" else "none"
    spec = model.ModelSpec(variant=variant, n_layers=1, d_model=d_model,
                           heads=heads, ffn_dim=16, vocab_in=vocab,
                           vocab_out=vocab, positional=positional)
    params = model.init_params(spec, np.random.default_rng(seed))
    return spec, params


def _check_sum_rule_matches_attention():
    be = backend.resolve()
    rng = np.random.default_rng(7)
    for Tn, d, H in ((12, 8, 2), (24, 16, 4)):
        dk = d // H
        q = rng.standard_normal((1, H, Tn, dk))
        k = rng.standard_normal((1, H, Tn, dk))
        v = rng.standard_normal((1, H, Tn, dk))
        Y, WT = be.lt_scan_fwd(q, k, v, np.zeros((1, H, dk, dk)))
        scores = np.einsum("bhtd,bhsd->bhts", q, k)
        causal = np.tril(np.ones((Tn, Tn)))
        Y_att = np.einsum("bhts,bhse->bhte", scores * causal, v)
        err = np.abs(Y - Y_att).max()
        assert err < 1e-10, f"additive scan vs attention: max abs {err:.3e}"
        W_sum = np.einsum("bhtd,bhte->bhed", k, v)
        werr = np.abs(WT - W_sum).max()
        assert werr < 1e-10, f"final additive state: max abs {werr:.3e}"


def _check_delta_write_identity():
    be = backend.resolve()
    rng = np.random.default_rng(3)
    dk = 6
    k = rng.standard_normal((1, 1, 1, dk))
    k /= np.linalg.norm(k)
    v = rng.standard_normal((1, 1, 1, dk))
    W0 = rng.standard_normal((1, 1, dk, dk))
    one = np.ones((1, 1, 1))
    Y, _, W1 = be.delta_scan_fwd(k.copy(), k, v, one, W0.copy())
    err = np.abs(W1[0, 0] @ k[0, 0, 0] - v[0, 0, 0]).max()
    assert err < 1e-12, f"unit-key write then read: max abs {err:.3e}"
    assert np.abs(Y - v).max() < 1e-12, "queried output is not the value"
    _, _, W2 = be.delta_scan_fwd(k.copy(), k, v, np.zeros((1, 1, 1)),
                                 W0.copy())
    assert np.array_equal(W2, W0), "zero write rate still changed the state"


def _swap(weights, replacements):
    merged = dict(weights.items())
    for name, t in replacements.items():
        merged[name] = t
    return SlowWeights(merged)


def _zeros_like(t):
    return T.Tensor(np.zeros_like(t.data))


def _check_recurrent_reductions():
    d, H, Tn = 8, 2, 10
    rng = np.random.default_rng(11)
    ls_dn = LayerSpec("DeltaNet", d_in=d, d_key=d, d_out=d, heads=H)
    wd = init_slow_weights(ls_dn, np.random.default_rng(1))
    x = T.Tensor(rng.standard_normal((1, Tn, d)))
    y_dn = layer_forward(ls_dn, wd, x, FastState.zeros(ls_dn, 1))[0].data

    shared = {n: wd[n] for n in ("w_q", "w_k", "w_v", "w_beta", "w_o")}

    ls = LayerSpec("RDN", d_in=d, d_key=d, d_out=d, heads=H)
    w = init_slow_weights(ls, np.random.default_rng(2))
    w = _swap(w, {**shared, **{n: _zeros_like(w[n])
                               for n in ("r_k", "r_v", "r_q", "r_beta")}})
    y = layer_forward(ls, w, x, FastState.zeros(ls, 1))[0].data
    err = np.abs(y - y_dn).max()
    assert err < 1e-12, f"feedback-free RDN vs plain delta: {err:.3e}"

    ls = LayerSpec("DeltaRNN_B", d_in=d, d_key=d, d_out=d, heads=H)
    w = init_slow_weights(ls, np.random.default_rng(2))
    w = _swap(w, {**shared, "wr_v": _zeros_like(w["wr_v"])})
    y = layer_forward(ls, w, x, FastState.zeros(ls, 1))[0].data
    err = np.abs(y - y_dn).max()
    assert err < 1e-12, f"zero-R fast RNN vs plain delta: {err:.3e}"

    ls = LayerSpec("DeltaMLP", d_in=d, d_key=d, d_out=d, heads=H,
                   mlp_layers=1)
    w = init_slow_weights(ls, np.random.default_rng(2))
    w = _swap(w, {"w_q": wd["w_q"], "m1_k": wd["w_k"], "m1_v": wd["w_v"],
                  "m1_beta": wd["w_beta"], "w_o": wd["w_o"]})
    y = layer_forward(ls, w, x, FastState.zeros(ls, 1))[0].data
    err = np.abs(y - y_dn).max()
    assert err < 1e-12, f"single-layer fast MLP vs plain delta: {err:.3e}"


def _check_tape_gradients():
    rng = np.random.default_rng(5)
    vocab, d, classes = 7, 6, 4
    tokens = rng.integers(0, vocab, (2, 5))
    targets = rng.integers(0, classes, (2, 5))
    params = {
        "emb": T.Tensor(rng.standard_normal((vocab, d)), requires_grad=True),
        "w": T.Tensor(rng.standard_normal((d, d)), requires_grad=True),
        "gain": T.Tensor(np.ones(d), requires_grad=True),
        "bias": T.Tensor(np.zeros(d), requires_grad=True),
        "head": T.Tensor(rng.standard_normal((d, classes)),
                         requires_grad=True),
    }

    def loss_value():
        x = T.embedding(params["emb"], tokens)
        h = T.relu(T.matmul(x, params["w"]))
        h = T.layernorm(h, params["gain"], params["bias"])
        logits = T.matmul(h, params["head"])
        return T.cross_entropy_logits(logits, targets)

    with T.Tape() as tape:
        loss = loss_value()
    tape.backward(loss)

    eps = 1e-6
    worst = 0.0
    for name, p in params.items():
        assert p.grad is not None, f"{name} received no gradient"
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = loss_value().item()
            flat[i] = keep - eps
            down = loss_value().item()
            flat[i] = keep
            fd = (up - down) / (2 * eps)
            rel = abs(gflat[i] - fd) / max(abs(fd), 1e-8)
            worst = max(worst, rel)
            assert rel < 1e-4, (f"{name}[{i}]: tape {gflat[i]:.6e} vs "
                                f"central difference {fd:.6e}")
    assert worst < 1e-4


def _check_segment_carryover():
    variants = ("LinearTransformer", "DeltaNet", "DeltaRNN_B", "DeltaLSTM_B",
                "RDN", "DeltaMLP", "DeltaDelta", "BaselineSoftmax")
    rng = np.random.default_rng(9)
    tokens = rng.integers(0, 11, (2, 12))
    for variant in variants:
        spec, params = _tiny_model(variant)
        full, _ = model.forward(spec, params, tokens)
        a, st = model.forward(spec, params, tokens[:, :6])
        b, _ = model.forward(spec, params, tokens[:, 6:], state=st)
        glued = np.concatenate([a.data, b.data], axis=1)
        err = np.abs(full.data - glued).max()
        assert err < 1e-10, f"{variant}: split vs one pass, max abs {err:.3e}"


def _check_task_oracles():
    cspec = CodeExecSpec(n_statements=10, n_variables=3, seed=4)
    for i in range(400):
        ep = gen_episode(cspec, episode_rng(cspec.seed, "train", i))
        assert interpret_code(ep.input_tokens) == ep.target_tokens, \
            f"code episode {i}: interpreter disagrees with generator"
    lspec = ListOpsSpec(depth=3, seed=4)
    for i in range(400):
        ep = gen_episode(lspec, episode_rng(lspec.seed, "train", i))
        # Output ids sit one above the digit to make room for the
        # silent marker at id 0.
        assert evaluate_listops(ep.input_tokens) + 1 == ep.target_tokens[-1], \
            f"listops episode {i}: evaluator disagrees with generator"
    words = "[MAX 6 1 [FIRST 2 3 ] 0 [MIN 4 7 1 ] ]".split()
    got = evaluate_listops(words)
    assert got == 6, f"worked listops example: evaluated to {got}"


def _check_segment_detachment():
    spec, params = _tiny_model("DeltaNet", seed=2)
    rng = np.random.default_rng(13)
    tokens = rng.integers(0, 11, (2, 8))
    targets = rng.integers(0, 11, (2, 8))

    def seg2_grads(tape_over_prefix):
        for p in params.values():
            p.grad = None
        if tape_over_prefix:
            with T.Tape() as pre:
                _, st = model.forward(spec, params, tokens[:, :4],
                                      mode="train")
        else:
            _, st = model.forward(spec, params, tokens[:, :4])
        carried = model.ModelState(
            [FastState({k: np.array(layer[k]) for k in layer.keys()})
             for layer in st.layers])
        with T.Tape() as tape:
            logits, _ = model.forward(spec, params, tokens[:, 4:],
                                      state=carried, mode="train")
            loss = T.cross_entropy_logits(logits, targets[:, 4:])
        tape.backward(loss)
        return {n: p.grad.copy() for n, p in params.items()
                if p.grad is not None}

    plain = seg2_grads(False)
    taped = seg2_grads(True)
    assert plain.keys() == taped.keys(), "gradient coverage changed"
    for name in plain:
        assert np.array_equal(plain[name], taped[name]), \
            f"{name}: a taped prefix leaked into the next segment"


CHECKS = (
    ("additive update matches quadratic attention", _check_sum_rule_matches_attention),
    ("unit-key delta write stores exactly; zero rate is a no-op", _check_delta_write_identity),
    ("recurrent variants collapse to the plain delta layer", _check_recurrent_reductions),
    ("tape gradients match central differences", _check_tape_gradients),
    ("carried state reproduces the one-pass forward", _check_segment_carryover),
    ("generated episodes agree with independent interpreters", _check_task_oracles),
    ("segment boundaries pass values, never gradients", _check_segment_detachment),
)


def run_checks(names=None) -> list:
    """Run the invariant suite (or the named subset), never raising.

    Returns one CheckResult per check in declaration order.
    """
    wanted = set(names) if names is not None else None
    unknown = (wanted or set()) - {n for n, _ in CHECKS}
    if unknown:
        raise ValueError(f"unknown checks: {sorted(unknown)}")
    results = []
    for name, fn in CHECKS:
        if wanted is not None and name not in wanted:
            continue
        try:
            with T.precision("float64"):
                fn()
        except Exception as e:  # noqa: BLE001 - a check must never crash the table
            results.append(CheckResult(name, False, str(e) or type(e).__name__))
        else:
            results.append(CheckResult(name, True))
    return results
