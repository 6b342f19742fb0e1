"""Dense tensors with reverse-mode automatic differentiation.

The autodiff is tape-based: a ``Tape`` is opened for one forward pass (``with
Tape() as tape:``), every primitive applied to a grad-requiring tensor appends
one node (output tensor + backward closure), and ``tape.backward(loss)`` walks
the nodes in reverse. Because nodes are appended in execution order, the list
is already topologically sorted. Tapes are cheap, single-use, and thread-local:
two batch shards may each run their own tape concurrently.

Values are immutable by convention once wrapped; only ``.grad`` buffers mutate.
Parameter gradients accumulate across ``backward`` calls until zeroed.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor", "Tape", "DropoutRNG", "precision", "default_dtype", "active_tape",
    "matmul", "matvec", "outer", "add", "sub", "mul", "neg", "scale",
    "sigmoid", "tanh", "relu", "softmax", "layernorm", "dropout",
    "concat", "split", "slice_axis", "reshape", "transpose", "stack",
    "sum_", "mean", "embedding", "cross_entropy_logits", "zero_grad",
]

LAYERNORM_EPS = 1e-5

# --------------------------------------------------------------------------
# precision control: float32 for training, float64 for verification
# --------------------------------------------------------------------------

_DEFAULT_DTYPE = np.float32

_DTYPE_NAMES = {"float32": np.float32, "float64": np.float64}


def default_dtype():
    return _DEFAULT_DTYPE


@contextmanager
def precision(name):
    """Temporarily switch the dtype used when wrapping fresh values.

    ``with precision("float64"): ...`` is how verification tests get 64-bit
    graphs; existing arrays keep their dtype.
    """
    global _DEFAULT_DTYPE
    if name not in _DTYPE_NAMES:
        raise ValueError(f"unknown precision {name!r}")
    previous = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = _DTYPE_NAMES[name]
    try:
        yield
    finally:
        _DEFAULT_DTYPE = previous


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------

_TLS = threading.local()


def active_tape():
    """The tape currently recording on this thread, or None (eval mode)."""
    return getattr(_TLS, "tape", None)


class Tape:
    """Ordered list of recorded ops; reverse traversal is backprop.

    ``nodes[i]`` is ``(out_tensor, backward_fn)`` where ``backward_fn(g)``
    accumulates ``g = dL/d out`` into the parents' ``.grad`` buffers. Every
    node's parents were recorded (or are leaves) before it, so one reverse
    sweep visits each node exactly once with its output gradient complete.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        self._prev = getattr(_TLS, "tape", None)
        _TLS.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _TLS.tape = self._prev
        return False

    def record(self, out, backward_fn):
        out.tape_id = len(self.nodes)
        out.requires_grad = True
        self.nodes.append((out, backward_fn))

    def backward(self, loss, seed=1.0):
        """Backpropagate from a scalar recorded on this tape.

        ``seed`` is the incoming gradient of the loss (default 1.0); sharded
        training seeds with 1/N to fold the loss normalization into backprop.
        """
        if not isinstance(loss, Tensor) or loss.tape_id is None:
            raise ValueError("backward needs a loss recorded on a tape")
        if loss.tape_id >= len(self.nodes) or self.nodes[loss.tape_id][0] is not loss:
            raise ValueError("loss was recorded on a different tape")
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        # Intermediates restart from zero each pass; leaf (parameter) grads
        # are untouched here, so repeated backward calls accumulate on them.
        for out, _ in self.nodes:
            out.grad = None
        _accumulate(loss, np.full_like(loss.data, seed))
        for out, backward_fn in reversed(self.nodes):
            if out.grad is not None:
                backward_fn(out.grad)


class Tensor:
    """A dense nd-array plus an optional gradient buffer and tape handle."""

    __slots__ = ("data", "grad", "requires_grad", "tape_id")

    def __init__(self, data, requires_grad=False):
        # numpy values keep their float width (a float64 graph must stay
        # float64 end to end); python scalars/lists take the ambient default.
        if isinstance(data, (np.ndarray, np.generic)) and \
                np.asarray(data).dtype in (np.float32, np.float64):
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self.tape_id = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def detach(self):
        """Same values, no history: the TBPTT cut."""
        return Tensor(self.data, requires_grad=False)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, grad={'yes' if self.grad is not None else 'no'})"

    # Small amount of operator sugar; canonical API is the module functions.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


# --------------------------------------------------------------------------
# recording helpers
# --------------------------------------------------------------------------

def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t, g):
    if not (t.requires_grad or t.tape_id is not None):
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _emit(out_data, parents, backward_fn):
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad or p.tape_id is not None for p in parents):
        tape.record(out, backward_fn)
    return out


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------

def matmul(a, b):
    """Matrix product, batched over leading axes (numpy matmul semantics)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(f"matmul expects matrices, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        _accumulate(a, _unbroadcast(np.matmul(g, bd.swapaxes(-1, -2)), ad.shape))
        _accumulate(b, _unbroadcast(np.matmul(ad.swapaxes(-1, -2), g), bd.shape))

    return _emit(np.matmul(ad, bd), (a, b), backward)


def matvec(m, x):
    """``(..., i, j) · (..., j) -> (..., i)`` — the fast-net readout shape."""
    m, x = _as_tensor(m), _as_tensor(x)
    md, xd = m.data, x.data

    def backward(g):
        _accumulate(m, _unbroadcast(np.einsum("...i,...j->...ij", g, xd), md.shape))
        _accumulate(x, _unbroadcast(np.einsum("...ij,...i->...j", md, g), xd.shape))

    return _emit(np.einsum("...ij,...j->...i", md, xd), (m, x), backward)


def outer(u, v):
    """Outer product ``u ⊗ v``; rank-1 for vectors, batched over leading axes."""
    u, v = _as_tensor(u), _as_tensor(v)
    if u.data.ndim < 1 or v.data.ndim < 1:
        raise ValueError("outer expects at least vectors")
    ud, vd = u.data, v.data

    def backward(g):
        _accumulate(u, _unbroadcast(np.einsum("...ij,...j->...i", g, vd), ud.shape))
        _accumulate(v, _unbroadcast(np.einsum("...ij,...i->...j", g, ud), vd.shape))

    return _emit(np.einsum("...i,...j->...ij", ud, vd), (u, v), backward)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _emit(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _emit(a.data - b.data, (a, b), backward)


def mul(a, b):
    """Elementwise (Hadamard) product with broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * bd, ad.shape))
        _accumulate(b, _unbroadcast(g * ad, bd.shape))

    return _emit(ad * bd, (a, b), backward)


def neg(a):
    return scale(a, -1.0)


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)

    def backward(g):
        _accumulate(a, c * g)

    return _emit(a.data * c, (a,), backward)


def sigmoid(x):
    x = _as_tensor(x)
    xd = x.data
    # Stable in both tails.
    out = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))),
                   np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))

    def backward(g):
        _accumulate(x, g * out * (1.0 - out))

    return _emit(out, (x,), backward)


def tanh(x):
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def backward(g):
        _accumulate(x, g * (1.0 - out * out))

    return _emit(out, (x,), backward)


def relu(x):
    x = _as_tensor(x)
    xd = x.data

    def backward(g):
        _accumulate(x, g * (xd > 0))

    return _emit(np.maximum(xd, 0.0), (x,), backward)


def softmax(x, axis=-1):
    """Max-subtracted softmax along ``axis``; positive, sums to one."""
    x = _as_tensor(x)
    xd = x.data
    if np.isnan(xd).any():
        raise FloatingPointError("softmax received NaN input")
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(x, out * (g - inner))

    return _emit(out, (x,), backward)


def layernorm(x, gain, bias, eps=LAYERNORM_EPS):
    """Normalize over the last axis, then apply elementwise gain and bias."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gxhat = g * gain.data
        gx = inv * (gxhat
                    - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        _accumulate(x, gx)
        reduce_axes = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * xhat).sum(axis=reduce_axes) if reduce_axes else g * xhat)
        _accumulate(bias, g.sum(axis=reduce_axes) if reduce_axes else g)

    return _emit(out, (x, gain, bias), backward)


class DropoutRNG:
    """Counter-based dropout noise: Philox keyed by (seed, stream, call#).

    Reproducible regardless of call interleaving across shards — every shard
    gets its own ``stream`` and each mask depends only on (seed, stream,
    counter), never on global RNG state.
    """

    def __init__(self, seed, stream=0):
        self.seed = int(seed)
        self.stream = int(stream)
        self.counter = 0

    def spawn(self, stream):
        return DropoutRNG(self.seed, stream)

    def mask(self, shape, keep_prob):
        key = np.array([self.seed, (self.stream << 32) | self.counter],
                       dtype=np.uint64)
        self.counter += 1
        gen = np.random.Generator(np.random.Philox(key=key))
        return (gen.random(shape) < keep_prob)


def dropout(x, rate, rng, training):
    """Inverted dropout; identity (the same tensor) in eval mode."""
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0,1), got {rate}")
    x = _as_tensor(x)
    keep = 1.0 - rate
    m = rng.mask(x.data.shape, keep).astype(x.data.dtype) / keep

    def backward(g):
        _accumulate(x, g * m)

    return _emit(x.data * m, (x,), backward)


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, stop)
            _accumulate(t, g[tuple(sl)])

    return _emit(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), backward)


def slice_axis(x, axis, start, stop):
    x = _as_tensor(x)
    xd = x.data
    sl = [slice(None)] * xd.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def backward(g):
        gx = np.zeros_like(xd)
        gx[sl] = g
        _accumulate(x, gx)

    return _emit(xd[sl].copy(), (x,), backward)


def split(x, sections, axis=-1):
    """Split into chunks of the given sizes along ``axis``."""
    x = _as_tensor(x)
    if sum(sections) != x.data.shape[axis]:
        raise ValueError(f"split sections {sections} don't cover axis of "
                         f"size {x.data.shape[axis]}")
    out, start = [], 0
    for size in sections:
        out.append(slice_axis(x, axis, start, start + size))
        start += size
    return out


def reshape(x, shape):
    x = _as_tensor(x)
    xd = x.data

    def backward(g):
        _accumulate(x, g.reshape(xd.shape))

    return _emit(xd.reshape(shape), (x,), backward)


def transpose(x, axes):
    x = _as_tensor(x)
    inverse = np.argsort(axes)

    def backward(g):
        _accumulate(x, g.transpose(inverse))

    # Materialized (not a view) so downstream kernels see contiguous data.
    return _emit(np.ascontiguousarray(x.data.transpose(axes)), (x,), backward)


def stack(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]

    def backward(g):
        for i, t in enumerate(tensors):
            _accumulate(t, np.take(g, i, axis=axis))

    return _emit(np.stack([t.data for t in tensors], axis=axis),
                 tuple(tensors), backward)


def sum_(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    xd = x.data

    def backward(g):
        if axis is None:
            _accumulate(x, np.broadcast_to(g, xd.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(x, np.broadcast_to(gg, xd.shape).copy())

    return _emit(xd.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return scale(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def embedding(table, ids):
    """Row gather ``table[ids]``; backward scatter-adds into the table."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range [0, {table.shape[0]})")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        _accumulate(table, gt)

    return _emit(table.data[ids], (table,), backward)


def cross_entropy_logits(logits, targets, mask=None):
    """Summed token NLL from raw logits (stable log-softmax fused in).

    ``logits``: (..., C); ``targets``: integer array (...,); ``mask``: optional
    {0,1} float array (...,) — masked-out positions contribute nothing. Returns
    the SUM over unmasked positions; the caller divides by its own token count
    (keeps sharded losses exactly additive).
    """
    logits = _as_tensor(logits)
    ld = logits.data
    targets = np.asarray(targets)
    shifted = ld - ld.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    if mask is not None:
        mask = np.asarray(mask, dtype=ld.dtype)
        picked = picked * mask
    loss = -picked.sum()

    def backward(g):
        grad = np.exp(logp)
        np.put_along_axis(
            grad, targets[..., None],
            np.take_along_axis(grad, targets[..., None], axis=-1) - 1.0,
            axis=-1)
        if mask is not None:
            grad *= mask[..., None]
        _accumulate(logits, g * grad)

    return _emit(np.asarray(loss, dtype=ld.dtype), (logits,), backward)
