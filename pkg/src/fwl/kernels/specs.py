"""Layer declarations: variants, update rules, slow-weight tables, fast state.

A layer is described by a ``LayerSpec``; ``init_slow_weights`` allocates its
trainable parameters (insertion order of the dict is the canonical declaration
order used by checkpoints), and ``FastState.zeros`` allocates the per-sequence
short-term memory the layer rewrites at every step.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T

VARIANTS = (
    "BaselineSoftmax",
    "LinearTransformer",
    "DeltaNet",
    "DeltaRNN_A",
    "DeltaRNN_B",
    "DeltaLSTM_A",
    "DeltaLSTM_B",
    "DeltaLSTM_C",
    "DeltaLSTM_D",
    "DeltaMLP",
    "RDN",
    "DeltaDelta",
)

# Variants whose fast net carries state across steps beyond the fast matrices
# themselves (previous output / cell vectors).
RECURRENT_FAST = ("DeltaRNN_A", "DeltaRNN_B", "DeltaLSTM_A", "DeltaLSTM_B",
                  "DeltaLSTM_C", "DeltaLSTM_D", "RDN")

# Everything that maintains fast weights (i.e. all but the quadratic baseline).
FWP_VARIANTS = tuple(v for v in VARIANTS if v != "BaselineSoftmax")


class UpdateRule(enum.Enum):
    SUM = "sum"
    DELTA = "delta"


def update_rule(variant):
    """Which programming instruction the slow net emits for this variant."""
    if variant == "BaselineSoftmax":
        return None
    if variant == "LinearTransformer":
        return UpdateRule.SUM
    return UpdateRule.DELTA


@dataclass(frozen=True)
class LayerSpec:
    """One fast-weight layer: variant, dimensions, heads, block extras."""

    variant: str
    d_in: int
    d_key: int
    d_out: int
    heads: int = 1
    ffn_dim: int = 0
    dropout: float = 0.0
    mlp_layers: int = 2  # fast-MLP depth; only read by the DeltaMLP variant

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.d_key % self.heads or self.d_out % self.heads:
            raise ValueError(
                f"d_key={self.d_key}, d_out={self.d_out} must be divisible by "
                f"heads={self.heads}")
        if self.variant == "DeltaMLP" and self.mlp_layers < 1:
            raise ValueError("DeltaMLP needs at least one fast layer (K >= 1)")
        if self.variant == "DeltaDelta" and self.d_key != self.d_out:
            raise ValueError("DeltaDelta needs square per-head dims "
                             "(d_key == d_out)")

    @property
    def dh_key(self):
        return self.d_key // self.heads

    @property
    def dh_out(self):
        return self.d_out // self.heads


@dataclass(frozen=True)
class DeltaDeltaDims:
    """Dimension calculus for the two-level delta layer, per head.

    A plain delta layer of width d needs a d x (3d+1) slow projection (q, k, v
    and a beta scalar) to maintain a d x d fast matrix. Making that projection
    itself fast means maintaining a d x (3d+1) fast matrix, which needs keys
    and queries of size d, values of size 3d+1 and one beta — hence a slow
    matrix of d x (5d+2).
    """

    d: int
    slow_matrix: tuple = field(init=False)
    fast_outer: tuple = field(init=False)
    fast_inner: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "slow_matrix", (self.d, 5 * self.d + 2))
        object.__setattr__(self, "fast_outer", (self.d, 3 * self.d + 1))
        object.__setattr__(self, "fast_inner", (self.d, self.d))
        assert self.slow_matrix[1] == 5 * self.d + 2
        assert self.fast_outer == (self.d, 3 * self.d + 1)

    def slow_param_count(self):
        return self.slow_matrix[0] * self.slow_matrix[1]

    def state_count(self):
        return (self.fast_outer[0] * self.fast_outer[1]
                + self.fast_inner[0] * self.fast_inner[1])


def slow_weight_shapes(spec: LayerSpec):
    """Ordered {name: shape} table of one layer's trainable parameters.

    Projections are bias-free. Every layer ends with a d_out x d_out output
    mixer ``w_o`` applied to the concatenated heads. Delta-rule learning rates
    come from (H, fan_in) matrices: one sigmoid scalar per head.
    """
    H, d_in, d_key, d_out = spec.heads, spec.d_in, spec.d_key, spec.d_out
    v = spec.variant
    shapes = {}

    if v == "DeltaDelta":
        dh = spec.dh_out
        shapes["w_slow"] = (H * (5 * dh + 2), d_in)
    elif v.startswith("DeltaLSTM"):
        shapes["w_q"] = (d_key, d_in)
        for gate in ("u", "f", "o"):
            shapes[f"{gate}_k"] = (d_key, d_in)
            shapes[f"{gate}_v"] = (d_out, d_in)
            shapes[f"{gate}_beta"] = (H, d_in)
            shapes[f"{gate}r_k"] = (d_out, d_in)
            shapes[f"{gate}r_v"] = (d_out, d_in)
            shapes[f"{gate}r_beta"] = (H, d_in)
        shapes["b_f"] = (d_out,)
    elif v == "DeltaMLP":
        shapes["w_q"] = (d_key, d_in)
        for j in range(1, spec.mlp_layers + 1):
            shapes[f"m{j}_k"] = (d_key if j == 1 else d_out, d_in)
            shapes[f"m{j}_v"] = (d_out, d_in)
            shapes[f"m{j}_beta"] = (H, d_in)
    else:
        shapes["w_k"] = (d_key, d_in)
        shapes["w_v"] = (d_out, d_in)
        shapes["w_q"] = (d_key, d_in)
        if update_rule(v) is UpdateRule.DELTA:
            shapes["w_beta"] = (H, d_in)
        if v.startswith("DeltaRNN"):
            shapes["wr_k"] = (d_out, d_in)
            shapes["wr_v"] = (d_out, d_in)
            shapes["wr_beta"] = (H, d_in)
        if v == "RDN":
            shapes["r_k"] = (d_key, d_out)
            shapes["r_v"] = (d_out, d_out)
            shapes["r_q"] = (d_key, d_out)
            shapes["r_beta"] = (H, d_out)

    shapes["w_o"] = (d_out, d_out)
    return shapes


class SlowWeights:
    """Insertion-ordered bundle of named parameter Tensors."""

    def __init__(self, params):
        self._params = dict(params)

    def __getattr__(self, name):
        try:
            return self._params[name]
        except KeyError:
            raise AttributeError(name) from None

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())


def init_slow_weights(spec: LayerSpec, rng: np.random.Generator,
                      dtype=None) -> SlowWeights:
    """uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init; forget bias starts +1."""
    dtype = dtype or T.default_dtype()
    params = {}
    for name, shape in slow_weight_shapes(spec).items():
        if name == "b_f":
            data = np.ones(shape, dtype=dtype)
        else:
            bound = 1.0 / np.sqrt(shape[-1])
            data = rng.uniform(-bound, bound, size=shape).astype(dtype)
        params[name] = T.Tensor(data, requires_grad=True)
    return SlowWeights(params)


class FastState:
    """Per-sequence short-term memory: fast matrices plus recurrent carries.

    Holds plain numpy arrays (states cross segment boundaries as values, never
    with history). All arrays are batched (B, H, ...); nothing here depends on
    how many steps have been absorbed — that is the constant-size claim, and
    ``nbytes()`` is what the benchmark asserts on.
    """

    def __init__(self, arrays):
        self.arrays = dict(arrays)

    def __getitem__(self, key):
        return self.arrays[key]

    def keys(self):
        return self.arrays.keys()

    def nbytes(self):
        return sum(a.nbytes for a in self.arrays.values())

    def copy(self):
        return FastState({k: a.copy() for k, a in self.arrays.items()})

    @classmethod
    def zeros(cls, spec: LayerSpec, batch: int, dtype=None):
        dtype = dtype or T.default_dtype()
        H, dk, dv = spec.heads, spec.dh_key, spec.dh_out
        B = batch
        v = spec.variant
        a = {}
        if v == "BaselineSoftmax":
            # The quadratic baseline keeps the whole past: a growing kv cache.
            a["k_cache"] = np.zeros((B, H, 0, dk), dtype=dtype)
            a["v_cache"] = np.zeros((B, H, 0, dv), dtype=dtype)
        elif v == "DeltaDelta":
            a["W_outer"] = np.zeros((B, H, 3 * dv + 1, dk), dtype=dtype)
            a["W_inner"] = np.zeros((B, H, dv, dk), dtype=dtype)
        elif v == "DeltaMLP":
            for j in range(1, spec.mlp_layers + 1):
                a[f"W{j}"] = np.zeros((B, H, dv, dk if j == 1 else dv),
                                      dtype=dtype)
        elif v.startswith("DeltaLSTM"):
            for gate in ("u", "f", "o"):
                a[f"W_{gate}"] = np.zeros((B, H, dv, dk), dtype=dtype)
                a[f"R_{gate}"] = np.zeros((B, H, dv, dv), dtype=dtype)
            a["y"] = np.zeros((B, H, dv), dtype=dtype)
            a["c"] = np.zeros((B, H, dv), dtype=dtype)
        else:
            a["W"] = np.zeros((B, H, dv, dk), dtype=dtype)
            if v.startswith("DeltaRNN"):
                a["R"] = np.zeros((B, H, dv, dv), dtype=dtype)
                a["y"] = np.zeros((B, H, dv), dtype=dtype)
            elif v == "RDN":
                a["y"] = np.zeros((B, H, dv), dtype=dtype)
        return cls(a)
