"""Central finite-difference gradient checking.

Perturbs every entry of every parameter in place (x ± h), re-runs the scalar
forward, and compares the two-sided difference quotient against the taped
gradient. Meant to run under ``precision("float64")``: at h=1e-5 the FD
truncation error is ~h^2, far below the tolerances asserted by tests.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T


def rel_error(a, b):
    """Scale-free disagreement between two gradient arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0) + np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def numeric_grad(f, x, h=1e-5):
    """d f() / d x by central differences, mutating x.data in place."""
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        f_plus = f()
        flat[i] = keep - h
        f_minus = f()
        flat[i] = keep
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return g


def check_gradients(build, params, h=1e-5):
    """Compare taped against numeric gradients for a scalar-valued graph.

    ``build()`` must construct the forward pass from the live ``params`` (list
    of Tensors with requires_grad=True) and return the scalar loss Tensor.
    Returns {param_index: rel_error}.
    """
    T.zero_grad(params)
    with T.Tape() as tape:
        loss = build()
    tape.backward(loss)
    taped = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
             for p in params]

    def forward_value():
        loss = build()
        return loss.item()

    errors = {}
    for i, p in enumerate(params):
        errors[i] = rel_error(taped[i], numeric_grad(forward_value, p, h=h))
    return errors
