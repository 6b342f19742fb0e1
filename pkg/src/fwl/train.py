"""Training engine: Adam with linear warmup, clipping, and truncated BPTT.

Batches run in segments of ``bptt_span`` tokens. One optimizer step happens
per segment; with ``carryover`` the states (fast weights and recurrent
outputs) flow into the next segment as plain values while the tape is cut,
so no gradient ever crosses a segment boundary. Loss is summed token NLL
divided by the segment's token count, and backward is seeded with 1/count,
which keeps gradients exactly additive when a batch is computed in shards.
"""

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model
from . import tensor as T
from .kernels import FastState
from .tasks import eval_metrics


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop settings.

    The learning rate ramps linearly from 0 to ``lr`` over
    ``warmup_steps`` optimizer steps and stays constant afterwards.
    ``clip_norm`` is global-norm clipping (None disables it).
    """

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_steps: int = 0
    clip_norm: float = None
    batch_size: int = 64
    bptt_span: int = 256
    carryover: bool = True
    epochs: int = 1
    seed: int = 0
    eval_every: int = 1

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("betas must be in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0 (or None)")
        for name in ("batch_size", "bptt_span", "epochs", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def as_dict(self):
        return asdict(self)


@dataclass
class RunRecord:
    """One line of the metrics stream: an optimizer step or a validation."""

    step: int
    loss: float
    lr: float
    metrics: dict = field(default_factory=dict)
    wall_time: float = 0.0
    tokens_per_second: float = 0.0

    def to_json(self):
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, line):
        return cls(**json.loads(line))


class TrainingDiverged(RuntimeError):
    """Loss left the reals; carries the records up to and including the
    diagnostic one."""

    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


class Adam:
    """Adam with bias correction, state keyed by parameter name."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, params, lr):
        self.t += 1
        m_corr = 1.0 - self.beta1 ** self.t
        v_corr = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / m_corr) / (np.sqrt(v / v_corr) + self.eps)


def warmup_lr(config, step):
    """Learning rate at 1-indexed optimizer step ``step``."""
    if config.warmup_steps <= 0:
        return config.lr
    return config.lr * min(1.0, step / config.warmup_steps)


def clip_gradients(params, max_norm):
    """Scale all gradients so their global norm is at most ``max_norm``.

    Returns the applied scale in (0, 1] — 1.0 when nothing was clipped.
    """
    tensors = params.values() if isinstance(params, dict) else list(params)
    grads = [p.grad for p in tensors if p.grad is not None]
    total = 0.0
    for g in grads:
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    norm = math.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for g in grads:
        g *= scale
    return scale


def epoch_permutation(seed, epoch, n):
    """Batch order for one epoch; a pure function of (seed, epoch, n)."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5E9, epoch)))
    return rng.permutation(n)


def pad_batch(episodes):
    """Right-pad episodes to a rectangle: (tokens, targets, mask)."""
    lengths = [len(ep.input_tokens) for ep in episodes]
    batch, width = len(episodes), max(lengths)
    tokens = np.zeros((batch, width), dtype=np.int64)
    targets = np.zeros((batch, width), dtype=np.int64)
    mask = np.zeros((batch, width), dtype=np.float64)
    for row, ep in enumerate(episodes):
        n = lengths[row]
        tokens[row, :n] = ep.input_tokens
        targets[row, :n] = ep.target_tokens
        mask[row, :n] = 1.0
    return tokens, targets, mask


def _forward(spec, params, tokens, state, mode, rng):
    if isinstance(spec, model.LstmSpec):
        return model.lstm_baseline_forward(spec, params, tokens, state=state)
    return model.forward(spec, params, tokens, state=state, mode=mode, rng=rng)


def _check_vocab(spec, episodes):
    for ep in episodes:
        if ep.input_tokens and max(ep.input_tokens) >= spec.vocab_in:
            raise ValueError(
                f"vocab mismatch: input id {max(ep.input_tokens)} "
                f">= model vocab_in {spec.vocab_in}"
            )
        if ep.target_tokens and max(ep.target_tokens) >= spec.vocab_out:
            raise ValueError(
                f"vocab mismatch: target id {max(ep.target_tokens)} "
                f">= model vocab_out {spec.vocab_out}"
            )


def _index_state(state, rows):
    """Select batch rows out of an LSTM dict state or a ModelState."""
    if state is None:
        return None
    if isinstance(state, dict):
        return {k: v[rows] for k, v in state.items()}
    return model.ModelState(
        [
            FastState({k: layer[k][rows] for k in layer.keys()})
            for layer in state.layers
        ]
    )


def _concat_states(parts):
    """Reassemble shard states along the batch axis (shards are row blocks)."""
    if parts[0] is None:
        return None
    if len(parts) == 1:
        return parts[0]
    if isinstance(parts[0], dict):
        return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    layers = []
    for i in range(len(parts[0].layers)):
        keys = parts[0].layers[i].keys()
        layers.append(
            FastState(
                {k: np.concatenate([p.layers[i][k] for p in parts]) for k in keys}
            )
        )
    return model.ModelState(layers)


def _shard_rows(batch):
    n_shards = max(1, int(os.environ.get("FWL_THREADS", "1")))
    return [r for r in np.array_split(np.arange(batch), n_shards) if len(r)]


def train(spec, params, dataset, config, task, val_set=None, sink=None, stop=None):
    """Optimize ``params`` in place; returns the list of RunRecords.

    ``task`` names the metric family for validation ("code_exec" or
    "listops"). ``sink`` is called with each record as it is produced (the
    JSONL stream); ``stop`` is called with each validation metrics dict and
    may return True to end training early. A non-finite loss appends a
    diagnostic record and raises :class:`TrainingDiverged`.
    """
    if not dataset:
        raise ValueError("empty training set")
    _check_vocab(spec, dataset)
    if val_set:
        _check_vocab(spec, val_set)

    adam = Adam(params, config.beta1, config.beta2, config.eps)
    records = []
    step = 0
    t_start = time.perf_counter()

    def emit(record):
        records.append(record)
        if sink is not None:
            sink(record)

    for epoch in range(config.epochs):
        order = epoch_permutation(config.seed, epoch, len(dataset))
        for at in range(0, len(order), config.batch_size):
            rows = [dataset[i] for i in order[at : at + config.batch_size]]
            tokens, targets, mask = pad_batch(rows)
            state = None
            for lo in range(0, tokens.shape[1], config.bptt_span):
                hi = min(lo + config.bptt_span, tokens.shape[1])
                step += 1
                seg_t0 = time.perf_counter()
                n_tokens = float(mask[:, lo:hi].sum())
                shards = _shard_rows(tokens.shape[0])
                T.zero_grad(params.values())
                loss_sum = 0.0
                new_parts = []
                for si, shard in enumerate(shards):
                    rng = T.DropoutRNG(config.seed, stream=(step << 6) | si)
                    with T.Tape() as tape:
                        logits, new_state = _forward(
                            spec,
                            params,
                            tokens[shard, lo:hi],
                            _index_state(state, shard),
                            "train",
                            rng,
                        )
                        loss = T.cross_entropy_logits(
                            logits, targets[shard, lo:hi], mask[shard, lo:hi]
                        )
                    loss_sum += loss.item()
                    tape.backward(loss, seed=1.0 / n_tokens)
                    new_parts.append(new_state)
                loss_per_token = loss_sum / n_tokens
                lr = warmup_lr(config, step)
                if not math.isfinite(loss_per_token):
                    emit(
                        RunRecord(
                            step=step,
                            loss=loss_per_token,
                            lr=lr,
                            metrics={"diverged": True, "epoch": epoch},
                            wall_time=time.perf_counter() - t_start,
                        )
                    )
                    raise TrainingDiverged(
                        f"non-finite loss {loss_per_token} at step {step}", records
                    )
                if config.clip_norm is not None:
                    clip_gradients(params, config.clip_norm)
                adam.step(params, lr)
                elapsed = time.perf_counter() - seg_t0
                emit(
                    RunRecord(
                        step=step,
                        loss=loss_per_token,
                        lr=lr,
                        wall_time=time.perf_counter() - t_start,
                        tokens_per_second=n_tokens / elapsed if elapsed > 0 else 0.0,
                    )
                )
                state = _concat_states(new_parts) if config.carryover else None

        if val_set and (epoch + 1) % config.eval_every == 0:
            scores = evaluate(
                spec,
                params,
                val_set,
                task,
                batch_size=config.batch_size,
                bptt_span=config.bptt_span,
                carryover=config.carryover,
            )
            emit(
                RunRecord(
                    step=step,
                    loss=scores["loss"],
                    lr=warmup_lr(config, step),
                    metrics={**scores, "epoch": epoch},
                    wall_time=time.perf_counter() - t_start,
                )
            )
            if stop is not None and stop(scores):
                return records
    return records


def evaluate(spec, params, episodes, task, batch_size=64, bptt_span=None, carryover=True):
    """Deterministic eval-mode scoring: task metrics plus nats/token.

    With ``bptt_span`` the sequence is processed in segments; under
    ``carryover`` the states flow across segment boundaries, which matches
    a single full-sequence pass.
    """
    if not episodes:
        raise ValueError("empty evaluation set")
    _check_vocab(spec, episodes)
    predictions = []
    loss_sum = 0.0
    token_count = 0.0
    for at in range(0, len(episodes), batch_size):
        rows = episodes[at : at + batch_size]
        tokens, targets, mask = pad_batch(rows)
        width = tokens.shape[1]
        span = width if bptt_span is None else bptt_span
        state = None
        pieces = []
        for lo in range(0, width, span):
            hi = min(lo + span, width)
            logits, state = _forward(
                spec, params, tokens[:, lo:hi], state, "eval", None
            )
            pieces.append(logits.data)
            loss_sum += T.cross_entropy_logits(
                logits, targets[:, lo:hi], mask[:, lo:hi]
            ).item()
            if not carryover:
                state = None
        scores = np.concatenate(pieces, axis=1)
        token_count += float(mask.sum())
        for row, ep in enumerate(rows):
            predictions.append(scores[row, : len(ep.input_tokens)])
    out = eval_metrics(predictions, episodes, task)
    out["loss"] = loss_sum / token_count
    return out
