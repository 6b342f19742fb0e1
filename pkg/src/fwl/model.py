"""Token-level sequence models: embeddings, pre-LN residual blocks around a
fast-weight (or attention) core, feedforward blocks, output head — plus a
single-layer LSTM baseline and a versioned binary checkpoint format.

Parameters live in a flat name -> Tensor dict whose insertion order is the
checkpoint payload order. Fast state crosses calls as plain arrays (it is
carried context, never part of the graph).
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .kernels import (FastState, LayerSpec, SlowWeights, init_slow_weights,
                      layer_forward, slow_weight_shapes)

CHECKPOINT_MAGIC = b"FWL1"
CHECKPOINT_VERSION = 1

POSITIONAL_KINDS = ("none", "sinusoidal")


@dataclass(frozen=True)
class ModelSpec:
    variant: str
    n_layers: int
    d_model: int
    heads: int
    ffn_dim: int
    vocab_in: int
    vocab_out: int
    dropout: float = 0.0
    positional: str = "none"
    mlp_layers: int = 2

    def __post_init__(self):
        if self.positional not in POSITIONAL_KINDS:
            raise ValueError(f"positional must be one of {POSITIONAL_KINDS}")
        if self.positional == "sinusoidal" and self.variant != "BaselineSoftmax":
            raise ValueError("sinusoidal positions are only for the softmax "
                             "baseline; fast-weight layers carry their own "
                             "notion of position in the write order")
        if min(self.n_layers, self.vocab_in, self.vocab_out,
               self.ffn_dim) < 1:
            raise ValueError("n_layers, vocabs and ffn_dim must be positive")
        self.layer_spec()  # delegates d_model/heads validation

    def layer_spec(self) -> LayerSpec:
        return LayerSpec(self.variant, d_in=self.d_model, d_key=self.d_model,
                         d_out=self.d_model, heads=self.heads,
                         dropout=self.dropout, mlp_layers=self.mlp_layers)


@dataclass
class ModelState:
    layers: list

    @classmethod
    def zeros(cls, spec: ModelSpec, batch: int, dtype=None):
        ls = spec.layer_spec()
        return cls([FastState.zeros(ls, batch, dtype=dtype)
                    for _ in range(spec.n_layers)])

    def nbytes(self):
        return sum(st.nbytes() for st in self.layers)


def _uniform(rng, shape, dtype):
    bound = 1.0 / np.sqrt(shape[-1])
    return T.Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                    requires_grad=True)


def init_params(spec: ModelSpec, rng) -> dict:
    """Fresh parameters, in checkpoint declaration order."""
    dt = T.default_dtype()
    d = spec.d_model
    p = {"embed": _uniform(rng, (spec.vocab_in, d), dt)}
    fwp_shapes = slow_weight_shapes(spec.layer_spec())
    for i in range(spec.n_layers):
        p[f"layers.{i}.ln1.gain"] = T.Tensor(np.ones(d, dtype=dt), requires_grad=True)
        p[f"layers.{i}.ln1.bias"] = T.Tensor(np.zeros(d, dtype=dt), requires_grad=True)
        fwp = init_slow_weights(spec.layer_spec(), rng)
        for name in fwp_shapes:
            p[f"layers.{i}.fwp.{name}"] = fwp[name]
        p[f"layers.{i}.ln2.gain"] = T.Tensor(np.ones(d, dtype=dt), requires_grad=True)
        p[f"layers.{i}.ln2.bias"] = T.Tensor(np.zeros(d, dtype=dt), requires_grad=True)
        p[f"layers.{i}.ffn.w1"] = _uniform(rng, (spec.ffn_dim, d), dt)
        p[f"layers.{i}.ffn.w2"] = _uniform(rng, (d, spec.ffn_dim), dt)
    p["final_ln.gain"] = T.Tensor(np.ones(d, dtype=dt), requires_grad=True)
    p["final_ln.bias"] = T.Tensor(np.zeros(d, dtype=dt), requires_grad=True)
    p["head.w"] = _uniform(rng, (spec.vocab_out, d), dt)
    p["head.b"] = T.Tensor(np.zeros(spec.vocab_out, dtype=dt), requires_grad=True)
    return p


def layer_weights(params: dict, i: int) -> SlowWeights:
    """The i-th layer's fast-weight projections, as the kernels expect them."""
    prefix = f"layers.{i}.fwp."
    return SlowWeights({name[len(prefix):]: t for name, t in params.items()
                        if name.startswith(prefix)})


def param_count(spec: ModelSpec) -> int:
    """Closed-form trainable-parameter total (no allocation)."""
    d = spec.d_model
    fwp = sum(int(np.prod(s)) for s in
              slow_weight_shapes(spec.layer_spec()).values())
    per_layer = 4 * d + fwp + 2 * d * spec.ffn_dim
    return (spec.vocab_in * d + spec.n_layers * per_layer + 2 * d
            + spec.vocab_out * d + spec.vocab_out)


def sinusoidal_positions(offset: int, length: int, d: int, dtype) -> np.ndarray:
    """(length, d) table for absolute positions offset..offset+length-1."""
    pos = np.arange(offset, offset + length, dtype=np.float64)[:, None]
    idx = np.arange(0, d, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, idx / d)
    pe = np.zeros((length, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe.astype(dtype)


def forward(spec: ModelSpec, params: dict, tokens, state: ModelState = None,
            mode: str = "eval", rng: T.DropoutRNG = None, path: str = "auto"):
    """Run the model over token ids.

    tokens: (B, T) or (T,) integer ids < vocab_in. Returns (logits, state'):
    logits (B, T, vocab_out) — or (T, vocab_out) for unbatched input — and
    the carried per-layer fast state.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    training = mode == "train"
    if training and spec.dropout > 0.0 and rng is None:
        raise ValueError("training with dropout needs a DropoutRNG")
    tokens = np.asarray(tokens)
    squeeze = tokens.ndim == 1
    if squeeze:
        tokens = tokens[None, :]
    B, Tn = tokens.shape
    if state is None:
        state = ModelState.zeros(spec, B)

    x = T.embedding(params["embed"], tokens)
    if spec.positional == "sinusoidal":
        offset = state.layers[0]["k_cache"].shape[2]
        pe = sinusoidal_positions(offset, Tn, spec.d_model, x.data.dtype)
        x = T.add(x, T.Tensor(pe))

    ls = spec.layer_spec()
    new_layers = []
    for i in range(spec.n_layers):
        h = T.layernorm(x, params[f"layers.{i}.ln1.gain"],
                        params[f"layers.{i}.ln1.bias"])
        y, st = layer_forward(ls, layer_weights(params, i), h,
                              state.layers[i], path=path)
        new_layers.append(st)
        y = T.dropout(y, spec.dropout, rng, training)
        x = T.add(x, y)

        h = T.layernorm(x, params[f"layers.{i}.ln2.gain"],
                        params[f"layers.{i}.ln2.bias"])
        f = T.matmul(T.relu(T.matmul(h, T.transpose(
            params[f"layers.{i}.ffn.w1"], (1, 0)))),
            T.transpose(params[f"layers.{i}.ffn.w2"], (1, 0)))
        f = T.dropout(f, spec.dropout, rng, training)
        x = T.add(x, f)

    x = T.layernorm(x, params["final_ln.gain"], params["final_ln.bias"])
    logits = T.add(T.matmul(x, T.transpose(params["head.w"], (1, 0))),
                   params["head.b"])
    if squeeze:
        logits = T.reshape(logits, logits.data.shape[1:])
    return logits, ModelState(new_layers)


# --------------------------------------------------------------------------
# LSTM baseline: one recurrent layer between embedding and head
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LstmSpec:
    vocab_in: int
    vocab_out: int
    embed_dim: int = 128
    hidden: int = 256


def init_lstm_params(spec: LstmSpec, rng) -> dict:
    """Gate rows of w_x/w_h/b are stacked (input, forget, cell, output);
    the forget-gate bias starts at +1."""
    dt = T.default_dtype()
    H, E = spec.hidden, spec.embed_dim
    b = np.zeros(4 * H, dtype=dt)
    b[H:2 * H] = 1.0
    return {
        "embed": _uniform(rng, (spec.vocab_in, E), dt),
        "w_x": _uniform(rng, (4 * H, E), dt),
        "w_h": _uniform(rng, (4 * H, H), dt),
        "b": T.Tensor(b, requires_grad=True),
        "head.w": _uniform(rng, (spec.vocab_out, H), dt),
        "head.b": T.Tensor(np.zeros(spec.vocab_out, dtype=dt),
                           requires_grad=True),
    }


def lstm_param_count(spec: LstmSpec) -> int:
    H, E = spec.hidden, spec.embed_dim
    return (spec.vocab_in * E + 4 * H * (E + H) + 4 * H
            + spec.vocab_out * H + spec.vocab_out)


def lstm_state_zeros(spec: LstmSpec, batch: int, dtype=None):
    dt = dtype or T.default_dtype()
    return {"h": np.zeros((batch, spec.hidden), dtype=dt),
            "c": np.zeros((batch, spec.hidden), dtype=dt)}


def lstm_baseline_forward(spec: LstmSpec, params: dict, tokens, state=None):
    """(B, T) or (T,) ids -> (logits, state') with h/c carried as arrays."""
    tokens = np.asarray(tokens)
    squeeze = tokens.ndim == 1
    if squeeze:
        tokens = tokens[None, :]
    B, Tn = tokens.shape
    if state is None:
        state = lstm_state_zeros(spec, B)
    H = spec.hidden
    h, c = T.Tensor(state["h"]), T.Tensor(state["c"])
    e = T.embedding(params["embed"], tokens)
    zx = T.add(T.matmul(e, T.transpose(params["w_x"], (1, 0))), params["b"])
    hs = []
    for t in range(Tn):
        z = T.add(T.reshape(T.slice_axis(zx, 1, t, t + 1), (B, 4 * H)),
                  T.matmul(h, T.transpose(params["w_h"], (1, 0))))
        zi, zf, zg, zo = T.split(z, [H, H, H, H])
        c = T.add(T.mul(T.sigmoid(zf), c),
                  T.mul(T.sigmoid(zi), T.tanh(zg)))
        h = T.mul(T.sigmoid(zo), T.tanh(c))
        hs.append(h)
    seq = T.stack(hs, axis=1)
    logits = T.add(T.matmul(seq, T.transpose(params["head.w"], (1, 0))),
                   params["head.b"])
    if squeeze:
        logits = T.reshape(logits, logits.data.shape[1:])
    return logits, {"h": h.data, "c": c.data}


# --------------------------------------------------------------------------
# checkpoints: magic | version | header length | canonical JSON | payload
# --------------------------------------------------------------------------

_SPEC_KINDS = {"ModelSpec": ModelSpec, "LstmSpec": LstmSpec}


def save_checkpoint(path, spec, params: dict, manifest: dict = None):
    """Versioned binary: the header JSON is canonical (sorted keys, no
    whitespace); the payload is each parameter's raw little-endian bytes
    in declaration order."""
    entries = [{"name": n, "shape": list(t.data.shape),
                "dtype": t.data.dtype.name} for n, t in params.items()]
    header = {
        "kind": type(spec).__name__,
        "model": asdict(spec),
        "manifest": manifest or {},
        "params": entries,
    }
    if header["kind"] not in _SPEC_KINDS:
        raise TypeError(f"cannot checkpoint a {header['kind']}")
    blob = json.dumps(header, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for _, t in params.items():
            le = t.data.dtype.newbyteorder("<")
            f.write(np.ascontiguousarray(t.data, dtype=le).tobytes())


def load_checkpoint(path):
    """-> (spec, params dict of Tensors, manifest dict)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint (bad magic {magic!r})")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(f.read(hlen).decode("utf-8"))
        spec = _SPEC_KINDS[header["kind"]](**header["model"])
        params = {}
        for entry in header["params"]:
            dt = np.dtype(entry["dtype"])
            n = int(np.prod(entry["shape"])) if entry["shape"] else 1
            raw = f.read(n * dt.itemsize)
            if len(raw) != n * dt.itemsize:
                raise ValueError("checkpoint payload truncated")
            arr = np.frombuffer(raw, dtype=dt.newbyteorder("<"))
            params[entry["name"]] = T.Tensor(
                arr.astype(dt, copy=True).reshape(entry["shape"]),
                requires_grad=True)
        if f.read(1):
            raise ValueError("trailing bytes after checkpoint payload")
    return spec, params, header["manifest"]
