"""Model assembly: blocks, causality, parameter accounting, LSTM baseline,
checkpoint format."""
import numpy as np
import pytest

import fwl.tensor as T
from fwl import kernels as K
from fwl import model as M


@pytest.fixture(autouse=True)
def _float64():
    with T.precision("float64"):
        yield


def rng(seed=0):
    return np.random.default_rng(seed)


def toy_spec(variant="DeltaNet", **kw):
    base = dict(variant=variant, n_layers=2, d_model=16, heads=2, ffn_dim=32,
                vocab_in=11, vocab_out=7)
    base.update(kw)
    return M.ModelSpec(**base)


def build(variant="DeltaNet", seed=0, **kw):
    spec = toy_spec(variant, **kw)
    return spec, M.init_params(spec, rng(seed))


# ---------------------------------------------------------------- forward

def test_single_token_logit_shape():
    spec, p = build()
    logits, _ = M.forward(spec, p, np.array([3]))
    assert logits.data.shape == (1, 7)


def test_batched_logit_shape_and_state_length():
    spec, p = build()
    logits, st = M.forward(spec, p, rng(1).integers(0, 11, size=(3, 9)))
    assert logits.data.shape == (3, 9, 7)
    assert len(st.layers) == spec.n_layers


def test_token_id_out_of_range_rejected():
    spec, p = build()
    with pytest.raises(IndexError):
        M.forward(spec, p, np.array([[3, 11]]))
    with pytest.raises(IndexError):
        M.forward(spec, p, np.array([[-1]]))


def test_bad_mode_rejected():
    spec, p = build()
    with pytest.raises(ValueError):
        M.forward(spec, p, np.array([[1]]), mode="predict")


@pytest.mark.parametrize("variant", K.VARIANTS)
def test_causality_every_variant(variant):
    spec, p = build(variant, positional="sinusoidal"
                    if variant == "BaselineSoftmax" else "none")
    toks = rng(2).integers(0, 11, size=(2, 8))
    logits, _ = M.forward(spec, p, toks)
    bumped = toks.copy()
    bumped[:, 4] = (bumped[:, 4] + 1) % 11
    logits2, _ = M.forward(spec, p, bumped)
    assert np.array_equal(logits.data[:, :4], logits2.data[:, :4])
    assert not np.array_equal(logits.data[:, 4:], logits2.data[:, 4:])


def test_two_layer_forward_matches_hand_composition():
    spec, p = build()
    toks = rng(3).integers(0, 11, size=(2, 6))
    logits, _ = M.forward(spec, p, toks)

    ls = spec.layer_spec()
    x = T.embedding(p["embed"], toks)
    for i in range(2):
        h = T.layernorm(x, p[f"layers.{i}.ln1.gain"], p[f"layers.{i}.ln1.bias"])
        y, _ = K.layer_forward(ls, M.layer_weights(p, i), h,
                               K.FastState.zeros(ls, 2))
        x = T.add(x, y)
        h = T.layernorm(x, p[f"layers.{i}.ln2.gain"], p[f"layers.{i}.ln2.bias"])
        f = T.matmul(T.relu(T.matmul(h, T.transpose(p[f"layers.{i}.ffn.w1"],
                                                    (1, 0)))),
                     T.transpose(p[f"layers.{i}.ffn.w2"], (1, 0)))
        x = T.add(x, f)
    x = T.layernorm(x, p["final_ln.gain"], p["final_ln.bias"])
    want = T.add(T.matmul(x, T.transpose(p["head.w"], (1, 0))), p["head.b"])
    assert np.abs(logits.data - want.data).max() < 1e-10


def test_eval_forward_deterministic():
    spec, p = build(dropout=0.25)
    toks = rng(4).integers(0, 11, size=(2, 7))
    a, _ = M.forward(spec, p, toks, mode="eval")
    b, _ = M.forward(spec, p, toks, mode="eval")
    assert np.array_equal(a.data, b.data)


def test_train_dropout_needs_rng_and_is_seeded():
    spec, p = build(dropout=0.25)
    toks = rng(5).integers(0, 11, size=(2, 7))
    with pytest.raises(ValueError):
        M.forward(spec, p, toks, mode="train")
    a, _ = M.forward(spec, p, toks, mode="train", rng=T.DropoutRNG(9))
    b, _ = M.forward(spec, p, toks, mode="train", rng=T.DropoutRNG(9))
    c, _ = M.forward(spec, p, toks, mode="eval")
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


@pytest.mark.parametrize("variant", ["DeltaNet", "DeltaLSTM_B", "RDN"])
def test_model_segment_carryover(variant):
    spec, p = build(variant)
    toks = rng(6).integers(0, 11, size=(2, 12))
    full, _ = M.forward(spec, p, toks)
    st = M.ModelState.zeros(spec, 2)
    a, st = M.forward(spec, p, toks[:, :5], st)
    b, _ = M.forward(spec, p, toks[:, 5:], st)
    got = np.concatenate([a.data, b.data], axis=1)
    assert np.abs(got - full.data).max() < 1e-10


def test_baseline_carryover_keeps_absolute_positions():
    spec, p = build("BaselineSoftmax", positional="sinusoidal")
    toks = rng(7).integers(0, 11, size=(1, 10))
    full, _ = M.forward(spec, p, toks)
    st = M.ModelState.zeros(spec, 1)
    a, st = M.forward(spec, p, toks[:, :4], st)
    b, _ = M.forward(spec, p, toks[:, 4:], st)
    got = np.concatenate([a.data, b.data], axis=1)
    assert np.abs(got - full.data).max() < 1e-10


def test_positional_restricted_to_softmax_baseline():
    with pytest.raises(ValueError):
        toy_spec("DeltaNet", positional="sinusoidal")
    with pytest.raises(ValueError):
        toy_spec("DeltaNet", positional="rotary")
    toy_spec("BaselineSoftmax", positional="sinusoidal")  # fine


def test_sinusoidal_table_properties():
    pe = M.sinusoidal_positions(0, 4, 6, np.float64)
    assert pe.shape == (4, 6)
    assert np.allclose(pe[0, 0::2], 0.0)          # sin(0)
    assert np.allclose(pe[0, 1::2], 1.0)          # cos(0)
    shifted = M.sinusoidal_positions(2, 2, 6, np.float64)
    assert np.array_equal(shifted, pe[2:])


# ---------------------------------------------------------- param counts

@pytest.mark.parametrize("variant", K.VARIANTS)
def test_param_count_matches_enumeration(variant):
    r = rng(8)
    for _ in range(3):
        heads = int(r.choice([1, 2, 4]))
        spec = M.ModelSpec(
            variant, n_layers=int(r.integers(1, 4)), d_model=8 * heads,
            heads=heads, ffn_dim=int(r.choice([16, 32])),
            vocab_in=int(r.integers(5, 40)), vocab_out=int(r.integers(5, 30)))
        p = M.init_params(spec, r)
        assert M.param_count(spec) == sum(t.data.size for t in p.values())


def test_reference_model_is_about_3m_params():
    spec = M.ModelSpec("DeltaNet", n_layers=4, d_model=256, heads=16,
                       ffn_dim=1024, vocab_in=39, vocab_out=26)
    d = 256
    fwp = 3 * d * d + 16 * d + d * d          # k,v,q + beta rows + mixer
    block = 4 * d + fwp + 2 * d * 1024
    want = 39 * d + 4 * block + 2 * d + 26 * d + 26
    assert M.param_count(spec) == want == 3_183_386


def test_lstm_baseline_param_count():
    assert M.lstm_param_count(M.LstmSpec(39, 26)) == 405_914
    assert abs(M.lstm_param_count(M.LstmSpec(39, 26)) / 1e6 - 0.4) < 0.01


def test_double_feature_slow_matrix_size():
    spec = M.ModelSpec("DeltaDelta", n_layers=1, d_model=16, heads=1,
                       ffn_dim=32, vocab_in=11, vocab_out=7)
    shapes = K.slow_weight_shapes(spec.layer_spec())
    assert int(np.prod(shapes["w_slow"])) == 16 * (5 * 16 + 2)


def test_doubling_ffn_adds_two_dmodel_delta_per_layer():
    a = toy_spec(ffn_dim=32)
    b = toy_spec(ffn_dim=64)
    assert M.param_count(b) - M.param_count(a) == a.n_layers * 2 * 16 * 32


# ------------------------------------------------------------------ LSTM

def lstm_toy(seed=9):
    spec = M.LstmSpec(vocab_in=11, vocab_out=7, embed_dim=4, hidden=8)
    return spec, M.init_lstm_params(spec, rng(seed))


def test_lstm_zero_weights_give_uniform_logits():
    spec, p = lstm_toy()
    for t in p.values():
        t.data[:] = 0.0
    logits, _ = M.lstm_baseline_forward(spec, p, rng(10).integers(0, 11, (2, 5)))
    assert np.all(logits.data == logits.data[..., :1])


def test_lstm_forced_open_gates_integrate():
    spec, p = lstm_toy()
    H = spec.hidden
    p["w_h"].data[:] = 0.0
    p["w_x"].data[:H] = 0.0               # input gate: bias only
    p["w_x"].data[H:2 * H] = 0.0          # forget gate: bias only
    p["w_x"].data[3 * H:] = 0.0           # output gate: bias only
    p["b"].data[:2 * H] = 1000.0          # input, forget pinned to 1
    p["b"].data[2 * H:3 * H] = 0.0
    p["b"].data[3 * H:] = 1000.0          # output pinned to 1
    toks = rng(11).integers(0, 11, size=(2, 6))
    _, st = M.lstm_baseline_forward(spec, p, toks)
    e = p["embed"].data[toks]
    g = np.tanh(e @ p["w_x"].data[2 * H:3 * H].T)
    assert np.abs(st["c"] - g.sum(axis=1)).max() < 1e-12


def test_lstm_forced_shut_forget_is_feedforward():
    spec, p = lstm_toy()
    H = spec.hidden
    p["w_h"].data[:] = 0.0
    p["w_x"].data[:H] = 0.0
    p["w_x"].data[H:2 * H] = 0.0
    p["w_x"].data[3 * H:] = 0.0
    p["b"].data[:H] = 1000.0              # input pinned to 1
    p["b"].data[H:2 * H] = -1000.0        # forget pinned to 0
    p["b"].data[3 * H:] = 1000.0          # output pinned to 1
    t1 = np.array([[1, 2, 3, 4, 5]])
    t2 = np.array([[9, 8, 3, 7, 6]])      # agree only at position 2
    l1, _ = M.lstm_baseline_forward(spec, p, t1)
    l2, _ = M.lstm_baseline_forward(spec, p, t2)
    assert np.array_equal(l1.data[0, 2], l2.data[0, 2])
    assert not np.array_equal(l1.data[0, 1], l2.data[0, 1])


def test_lstm_matches_textbook_reexecution():
    spec, p = lstm_toy(seed=12)
    toks = rng(13).integers(0, 11, size=(2, 3))
    logits, st = M.lstm_baseline_forward(spec, p, toks)

    H = spec.hidden
    sig = lambda x: 1 / (1 + np.exp(-x))
    h = np.zeros((2, H))
    c = np.zeros((2, H))
    outs = []
    for t in range(3):
        e = p["embed"].data[toks[:, t]]
        z = e @ p["w_x"].data.T + h @ p["w_h"].data.T + p["b"].data
        zi, zf, zg, zo = np.split(z, 4, axis=-1)
        c = sig(zf) * c + sig(zi) * np.tanh(zg)
        h = sig(zo) * np.tanh(c)
        outs.append(h @ p["head.w"].data.T + p["head.b"].data)
    want = np.stack(outs, axis=1)
    assert np.abs(logits.data - want).max() < 1e-10
    assert np.abs(st["h"] - h).max() < 1e-12


def test_lstm_segment_carryover():
    spec, p = lstm_toy(seed=14)
    toks = rng(15).integers(0, 11, size=(2, 8))
    full, _ = M.lstm_baseline_forward(spec, p, toks)
    a, st = M.lstm_baseline_forward(spec, p, toks[:, :3])
    b, _ = M.lstm_baseline_forward(spec, p, toks[:, 3:], st)
    got = np.concatenate([a.data, b.data], axis=1)
    assert np.abs(got - full.data).max() < 1e-12


def test_lstm_forget_bias_starts_at_one():
    spec, p = lstm_toy()
    H = spec.hidden
    assert np.all(p["b"].data[H:2 * H] == 1.0)
    assert np.all(p["b"].data[:H] == 0.0)


# ------------------------------------------------------------ checkpoints

def test_checkpoint_roundtrip(tmp_path):
    spec, p = build(seed=16)
    path = tmp_path / "model.fwl"
    M.save_checkpoint(path, spec, p, {"step": 120, "task": "probe"})
    spec2, p2, manifest = M.load_checkpoint(path)
    assert spec2 == spec
    assert manifest == {"step": 120, "task": "probe"}
    assert list(p2) == list(p)
    for n in p:
        assert p2[n].data.dtype == p[n].data.dtype
        assert np.array_equal(p2[n].data, p[n].data)


def test_checkpoint_roundtrip_lstm(tmp_path):
    spec, p = lstm_toy(seed=17)
    path = tmp_path / "lstm.fwl"
    M.save_checkpoint(path, spec, p)
    spec2, p2, manifest = M.load_checkpoint(path)
    assert spec2 == spec and manifest == {}
    assert all(np.array_equal(p2[n].data, p[n].data) for n in p)


def test_checkpoint_bad_magic_rejected(tmp_path):
    spec, p = build(seed=18)
    path = tmp_path / "model.fwl"
    M.save_checkpoint(path, spec, p)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="magic"):
        M.load_checkpoint(path)


def test_checkpoint_truncation_rejected(tmp_path):
    spec, p = build(seed=19)
    path = tmp_path / "model.fwl"
    M.save_checkpoint(path, spec, p)
    raw = path.read_bytes()
    path.write_bytes(raw[:-16])
    with pytest.raises(ValueError, match="truncated"):
        M.load_checkpoint(path)


def test_checkpoint_unknown_version_rejected(tmp_path):
    spec, p = build(seed=20)
    path = tmp_path / "model.fwl"
    M.save_checkpoint(path, spec, p)
    raw = bytearray(path.read_bytes())
    raw[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="version"):
        M.load_checkpoint(path)


def test_checkpoint_payload_is_declaration_order(tmp_path):
    spec, p = build(seed=21)
    path = tmp_path / "model.fwl"
    M.save_checkpoint(path, spec, p)
    raw = path.read_bytes()
    hlen = int.from_bytes(raw[8:12], "little")
    payload = raw[12 + hlen:]
    first = next(iter(p.values())).data
    got = np.frombuffer(payload[:first.nbytes],
                        dtype=first.dtype.newbyteorder("<"))
    assert np.array_equal(got.reshape(first.shape), first)


# ------------------------------------------------------- trainability

def _grad_coverage(spec, params, forward):
    with T.Tape() as tape:
        logits, _ = forward()
        loss = T.cross_entropy_logits(
            logits, np.zeros(logits.data.shape[:-1], dtype=np.int64))
    tape.backward(loss)
    return [name for name, p in params.items()
            if p.grad is None or not p.requires_grad]


@pytest.mark.parametrize("variant", ["DeltaNet", "DeltaLSTM_B", "RDN",
                                     "BaselineSoftmax"])
def test_every_parameter_receives_gradient(variant):
    pos = "sinusoidal" if variant == "BaselineSoftmax" else "none"
    spec, p = build(variant, positional=pos)
    toks = rng(2).integers(0, 11, size=(2, 6))
    missing = _grad_coverage(spec, p, lambda: M.forward(spec, p, toks))
    assert missing == []


def test_every_lstm_parameter_receives_gradient():
    spec = M.LstmSpec(vocab_in=11, vocab_out=7, embed_dim=8, hidden=12)
    p = M.init_lstm_params(spec, rng(3))
    toks = rng(4).integers(0, 11, size=(2, 6))
    missing = _grad_coverage(
        spec, p, lambda: M.lstm_baseline_forward(spec, p, toks))
    assert missing == []


def test_loaded_checkpoint_is_trainable(tmp_path):
    spec, p = build(seed=31)
    path = tmp_path / "model.fwl"
    M.save_checkpoint(path, spec, p)
    spec2, p2, _ = M.load_checkpoint(path)
    toks = rng(5).integers(0, 11, size=(1, 5))
    missing = _grad_coverage(spec2, p2, lambda: M.forward(spec2, p2, toks))
    assert missing == []
