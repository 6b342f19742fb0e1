"""Accuracy metrics over labeled episodes."""

import numpy as np

from .episodes import NO_OUTPUT

_KNOWN_TASKS = ("code_exec", "listops")


def eval_metrics(predictions, episodes, task):
    """Sequence-level and print-level accuracy, both in percent.

    ``predictions`` holds one array per episode: either chosen output ids
    of shape (T,), or per-position class scores of shape (T, n_out) which
    are argmaxed here (``np.argmax`` takes the first maximum, so ties go
    to the lowest id). A sequence counts as correct only when every
    position matches; print accuracy looks only at positions whose target
    is not the silent class.
    """
    if task not in _KNOWN_TASKS:
        raise ValueError(f"unknown task {task!r}")
    if len(predictions) != len(episodes):
        raise ValueError(
            f"{len(predictions)} predictions for {len(episodes)} episodes"
        )
    if not episodes:
        raise ValueError("no episodes to score")

    seq_hits = 0
    print_seen = 0
    print_hits = 0
    for pred, ep in zip(predictions, episodes):
        target = np.asarray(ep.target_tokens)
        chosen = np.asarray(pred)
        if chosen.ndim == 2:
            chosen = np.argmax(chosen, axis=-1)
        elif chosen.ndim != 1:
            raise ValueError(f"prediction must be (T,) or (T, n_out), got {chosen.shape}")
        if chosen.shape[0] != target.shape[0]:
            raise ValueError(
                f"prediction length {chosen.shape[0]} != "
                f"target length {target.shape[0]}"
            )
        match = chosen == target
        seq_hits += bool(match.all())
        printing = target != NO_OUTPUT
        print_seen += int(printing.sum())
        print_hits += int(match[printing].sum())

    return {
        "sequence_accuracy": 100.0 * seq_hits / len(episodes),
        "print_token_accuracy": (
            100.0 * print_hits / print_seen if print_seen else 0.0
        ),
    }
