"""Wall-clock and state-size measurements for the layer variants.

Answers two performance questions at desk scale: how per-token cost and
fast-state size move as the sequence grows (fast-weight layers should be
flat on both counts, the softmax baseline should not), and how the
variants rank against each other in raw throughput when run with
identical model dimensions.

Timing protocol: one warmup forward is run and discarded (it absorbs jit
compilation and cache warming), then the forward is repeated and the
median wall time is reported. Everything runs in eval mode on a single
thread; measurements never mutate the model, so logits computed before
and after a sweep are bitwise identical.
"""

from __future__ import annotations

import hashlib
import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import model
from .model import ModelSpec

CSV_COLUMNS = ("variant", "T", "d_model", "H",
               "ns_per_token", "state_bytes", "reps")

# Fastest first; used when the caller does not name a line-up.
DEFAULT_ORDERING_VARIANTS = ("LinearTransformer", "DeltaNet", "DeltaRNN_B",
                             "RDN", "DeltaLSTM_B")

_BENCH_VOCAB = 32


@dataclass(frozen=True)
class BenchPoint:
    """One measured configuration: a variant at one sequence length."""

    variant: str
    T: int
    d_model: int
    H: int
    wall_ns_per_token: float
    peak_state_bytes: int
    reps: int

    def csv_row(self) -> str:
        return (f"{self.variant},{self.T},{self.d_model},{self.H},"
                f"{self.wall_ns_per_token:.1f},{self.peak_state_bytes},"
                f"{self.reps}")


def _bench_spec(variant, d_model, heads, n_layers):
    return ModelSpec(variant=variant, n_layers=n_layers, d_model=d_model,
                     heads=heads, ffn_dim=2 * d_model,
                     vocab_in=_BENCH_VOCAB, vocab_out=_BENCH_VOCAB,
                     positional=("sinusoidal" if variant == "BaselineSoftmax"
                                 else "none"))


def _bench_tokens(seq_len, seed):
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xBE)))
    return rng.integers(0, _BENCH_VOCAB, size=(1, seq_len))


def _median_ns(fn, reps) -> float:
    fn()  # warmup, discarded
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return float(statistics.median(samples))


def measure(variant, seq_len, d_model=64, heads=4, n_layers=2,
            reps=5, seed=0) -> BenchPoint:
    """Time one variant at one sequence length.

    Returns the median over `reps` timed forwards (after one discarded
    warmup) as nanoseconds per token, plus the size in bytes of the
    carried state at the end of the sequence. For fast-weight variants
    that end-of-sequence size is also the peak; the softmax baseline's
    key/value cache grows with every token, so there too the final size
    is the peak.
    """
    if seq_len < 1:
        raise ValueError("seq_len must be positive")
    if reps < 1:
        raise ValueError("reps must be positive")
    spec = _bench_spec(variant, d_model, heads, n_layers)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xBE5C)))
    params = model.init_params(spec, rng)
    tokens = _bench_tokens(seq_len, seed)

    def once():
        model.forward(spec, params, tokens, mode="eval")

    med = _median_ns(once, reps)
    _, state = model.forward(spec, params, tokens, mode="eval")
    return BenchPoint(variant=variant, T=seq_len, d_model=d_model,
                      H=heads, wall_ns_per_token=med / seq_len,
                      peak_state_bytes=state.nbytes(), reps=reps)


def scaling_sweep(variants, T_list, d_model=64, heads=4, n_layers=2,
                  reps=5, seed=0) -> list:
    """Measure every variant at every sequence length.

    Points come back grouped by variant in the order given, each group
    ordered by T as given. Fast-weight variants should show near-flat
    ns/token and identical state bytes across T; the softmax baseline's
    per-token cost grows with T (quadratic total work) and so does its
    cache.
    """
    if not variants:
        raise ValueError("no variants to sweep")
    if not T_list:
        raise ValueError("no sequence lengths to sweep")
    return [measure(v, t, d_model=d_model, heads=heads, n_layers=n_layers,
                    reps=reps, seed=seed)
            for v in variants for t in T_list]


def to_csv(points) -> str:
    """Render BenchPoints as CSV with a fixed, machine-parsable schema."""
    lines = [",".join(CSV_COLUMNS)]
    lines.extend(p.csv_row() for p in points)
    return "\n".join(lines) + "\n"


def ordering_report(variants=DEFAULT_ORDERING_VARIANTS, seq_len=128,
                    d_model=64, heads=4, n_layers=16, reps=5,
                    seed=0) -> list:
    """Rank variants by throughput under identical model dimensions.

    The default configuration is a 16-layer stack at reduced width, so
    the ranking reflects per-step layer cost rather than embedding or
    head overhead. Repetitions are interleaved round-robin across the
    variants so that slow machine drift (frequency scaling, page cache)
    lands on every variant equally instead of biasing whichever was
    measured last. Returns one row per variant, fastest first:
    {variant, ns_per_token, tokens_per_second, relative} where
    `relative` is throughput as a fraction of the fastest (1.0 for the
    winner).
    """
    if not variants:
        raise ValueError("no variants to rank")
    if reps < 1:
        raise ValueError("reps must be positive")
    runs = []
    for v in variants:
        spec = _bench_spec(v, d_model, heads, n_layers)
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xBE5C)))
        params = model.init_params(spec, rng)
        tokens = _bench_tokens(seq_len, seed)
        model.forward(spec, params, tokens, mode="eval")  # warmup, discarded
        runs.append((v, spec, params, tokens, []))
    for _ in range(reps):
        for v, spec, params, tokens, samples in runs:
            t0 = time.perf_counter_ns()
            model.forward(spec, params, tokens, mode="eval")
            samples.append(time.perf_counter_ns() - t0)
    rows = []
    for v, spec, params, tokens, samples in runs:
        ns_tok = float(statistics.median(samples)) / seq_len
        rows.append({"variant": v, "ns_per_token": ns_tok,
                     "tokens_per_second": 1e9 / ns_tok})
    rows.sort(key=lambda r: r["ns_per_token"])
    best = rows[0]["tokens_per_second"]
    for r in rows:
        r["relative"] = r["tokens_per_second"] / best
    return rows


def logits_checksum(spec, params, tokens) -> str:
    """SHA-256 over the raw logit bytes of a deterministic eval forward.

    Taken before and after a sweep, an unchanged digest proves the
    benchmark did not perturb parameters or model behaviour.
    """
    logits, _ = model.forward(spec, params, tokens, mode="eval")
    return hashlib.sha256(np.ascontiguousarray(logits.data).tobytes()).hexdigest()
