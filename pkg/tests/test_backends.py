"""Compiled vs pure-numpy scan kernels must agree, and the env flag
must pick between them."""
import numpy as np
import pytest

import fwl.tensor as T
from fwl import kernels as K
from fwl.kernels import backend, scans, scans_numba


def rng(seed=0):
    return np.random.default_rng(seed)


def make_layer(variant, seed=0, **kw):
    spec = K.LayerSpec(variant, d_in=8, d_key=8, d_out=8, heads=2, **kw)
    with T.precision("float64"):
        w = K.init_slow_weights(spec, rng(seed))
    return spec, w


# ---------------------------------------------------------- flag handling

def test_env_flag_selects_backend(monkeypatch):
    monkeypatch.setenv("FWL_BACKEND", "numpy")
    assert backend.resolve() is scans
    assert backend.backend_name() == "numpy"
    monkeypatch.setenv("FWL_BACKEND", "numba")
    assert backend.resolve() is scans_numba
    assert backend.backend_name() == "numba"
    monkeypatch.setenv("FWL_BACKEND", "auto")
    assert backend.resolve() is scans_numba


def test_explicit_name_overrides_env(monkeypatch):
    monkeypatch.setenv("FWL_BACKEND", "numba")
    assert backend.resolve("numpy") is scans


def test_unknown_backend_rejected(monkeypatch):
    monkeypatch.setenv("FWL_BACKEND", "cuda")
    with pytest.raises(ValueError):
        backend.resolve()


def test_numba_requested_but_unusable(monkeypatch):
    monkeypatch.setattr(backend, "_numba_mod", None)
    monkeypatch.setattr(backend, "_numba_error", ImportError("nope"))
    with pytest.raises(RuntimeError):
        backend.resolve("numba")
    # auto falls back to numpy instead of raising
    assert backend.resolve("auto") is scans


def test_numba_available_here():
    assert backend.numba_available()


# --------------------------------------------------- forward equivalence

@pytest.mark.parametrize("variant", K.FWP_VARIANTS)
@pytest.mark.parametrize("dtype,tol", [("float64", 1e-12), ("float32", 1e-4)])
def test_forward_agreement(monkeypatch, variant, dtype, tol):
    spec, w = make_layer(variant)
    with T.precision(dtype):
        w = K.SlowWeights(
            {n: T.Tensor(t.data.astype(dtype)) for n, t in w.items()})
        x = T.Tensor(rng(1).normal(size=(2, 10, 8)).astype(dtype))
        outs = {}
        for name in ("numpy", "numba"):
            monkeypatch.setenv("FWL_BACKEND", name)
            y, st = K.layer_forward(spec, w, x, K.FastState.zeros(spec, 2))
            outs[name] = (y.data, st)
    a, b = outs["numpy"], outs["numba"]
    assert a[0].dtype == np.dtype(dtype)
    assert np.abs(a[0] - b[0]).max() < tol
    for key in a[1].keys():
        assert np.abs(a[1][key] - b[1][key]).max() < tol


@pytest.mark.parametrize("name", ["numpy", "numba"])
@pytest.mark.parametrize("variant", K.FWP_VARIANTS)
def test_mixed_precision_inputs_promote(monkeypatch, name, variant):
    """float32 weights/state with float64 inputs must run on both backends
    and agree with the all-float64 run at single precision."""
    monkeypatch.setenv("FWL_BACKEND", name)
    spec, w64 = make_layer(variant, seed=5)
    x = T.Tensor(rng(6).normal(size=(1, 6, 8)))
    y64, _ = K.layer_forward(spec, w64, x, K.FastState.zeros(spec, 1))
    with T.precision("float32"):
        w32 = K.SlowWeights(
            {n: T.Tensor(t.data.astype(np.float32)) for n, t in w64.items()})
        st32 = K.FastState.zeros(spec, 1)
    y, st = K.layer_forward(spec, w32, x, st32)
    assert y.data.dtype == np.float64
    assert all(a.dtype == np.float64 for a in st.arrays.values())
    assert np.abs(y.data - y64.data).max() < 1e-4


# -------------------------------------------------- backward equivalence

def _delta_inputs(seed, B=2, H=2, t=7, dk=4, dv=4):
    r = rng(seed)
    soft = lambda a: np.exp(a) / np.exp(a).sum(axis=-1, keepdims=True)
    q = soft(r.normal(size=(B, H, t, dk)))
    k = soft(r.normal(size=(B, H, t, dk)))
    v = r.normal(size=(B, H, t, dv))
    beta = 1 / (1 + np.exp(-r.normal(size=(B, H, t))))
    return q, k, v, beta


def test_lt_backward_agreement():
    q, k, v, _ = _delta_inputs(2)
    W0 = rng(3).normal(size=(2, 2, 4, 4))
    gY = rng(4).normal(size=v.shape)
    gWT = rng(5).normal(size=W0.shape)
    Yn, WTn = scans.lt_scan_fwd(q, k, v, W0.copy())
    Yb, WTb = scans_numba.lt_scan_fwd(q, k, v, W0.copy())
    assert np.abs(Yn - Yb).max() < 1e-12
    assert np.abs(WTn - WTb).max() < 1e-12
    outs_n = scans.lt_scan_bwd(q, k, v, WTn, gY, gWT.copy())
    outs_b = scans_numba.lt_scan_bwd(q, k, v, WTb, gY, gWT.copy())
    for a, b in zip(outs_n, outs_b):
        assert np.abs(a - b).max() < 1e-11


def test_delta_backward_agreement():
    q, k, v, beta = _delta_inputs(6)
    W0 = np.zeros((2, 2, 4, 4))
    gY = rng(7).normal(size=v.shape)
    gWT = rng(8).normal(size=W0.shape)
    Yn, Vn, WTn = scans.delta_scan_fwd(q, k, v, beta, W0.copy())
    Yb, Vb, WTb = scans_numba.delta_scan_fwd(q, k, v, beta, W0.copy())
    assert np.abs(Yn - Yb).max() < 1e-12
    assert np.abs(Vn - Vb).max() < 1e-12
    outs_n = scans.delta_scan_bwd(q, k, v, beta, WTn, Vn, gY, gWT.copy())
    outs_b = scans_numba.delta_scan_bwd(q, k, v, beta, WTb, Vb, gY,
                                        gWT.copy())
    for a, b in zip(outs_n, outs_b):
        assert np.abs(a - b).max() < 1e-11


@pytest.mark.parametrize("version_b", [False, True])
def test_drnn_backward_agreement(version_b):
    qw, kw, vw, bw = _delta_inputs(9)
    _, kr, vr, br = _delta_inputs(10)
    W0 = np.zeros((2, 2, 4, 4))
    R0 = np.zeros((2, 2, 4, 4))
    y0 = rng(11).normal(size=(2, 2, 4))
    gY = rng(12).normal(size=vw.shape)
    gWT = rng(13).normal(size=W0.shape)
    gRT = rng(14).normal(size=R0.shape)
    gyT = rng(15).normal(size=y0.shape)

    def run(mod):
        fwd = mod.drnn_scan_fwd(version_b, qw, kw, vw, bw, kr, vr, br,
                                W0.copy(), R0.copy(), y0.copy())
        Y, VbarW, VbarR, WT, RT = fwd
        bwd = mod.drnn_scan_bwd(version_b, qw, kw, vw, bw, kr, vr, br,
                                y0, Y, VbarW, VbarR, WT, RT,
                                gY, gWT.copy(), gRT.copy(), gyT.copy())
        return fwd + bwd

    for a, b in zip(run(scans), run(scans_numba)):
        assert np.abs(a - b).max() < 1e-11
