"""Dataset export: one JSONL file per split plus a vocabulary sidecar.

Episode i of split s draws its generator from the seed triple
(spec.seed, s, i), so splits never share a random stream and re-exporting
the same spec is byte-identical.
"""

import json
from pathlib import Path

import numpy as np

from .code_exec import CodeExecSpec, gen_code_exec
from .episodes import (
    CODE_INPUT_TOKENS,
    CODE_OUTPUT_TOKENS,
    LISTOPS_INPUT_TOKENS,
    LISTOPS_OUTPUT_TOKENS,
    Episode,
)
from .listops import ListOpsSpec, gen_listops

SPLIT_SIZES = {"train": 10000, "valid": 1000, "test": 1000}
_SPLIT_INDEX = {"train": 0, "valid": 1, "test": 2}


def task_of(spec):
    """Task name for a sampling spec, used for dispatch and manifests."""
    if isinstance(spec, CodeExecSpec):
        return "code_exec"
    if isinstance(spec, ListOpsSpec):
        return "listops"
    raise TypeError(f"not a task spec: {type(spec).__name__}")


def gen_episode(spec, rng):
    """Sample one episode for whichever task ``spec`` configures."""
    if isinstance(spec, CodeExecSpec):
        return gen_code_exec(spec, rng)
    if isinstance(spec, ListOpsSpec):
        return gen_listops(spec, rng)
    raise TypeError(f"not a task spec: {type(spec).__name__}")


def episode_rng(seed, split, index):
    """Generator for one episode; distinct (split, index) never collide."""
    if split not in _SPLIT_INDEX:
        raise ValueError(f"unknown split {split!r}")
    return np.random.default_rng(
        np.random.SeedSequence((seed, _SPLIT_INDEX[split], index))
    )


def dataset_export(spec, out_dir, counts=None):
    """Write train/valid/test JSONL files and vocab.json; returns paths.

    ``counts`` maps split names to episode counts (default
    ``SPLIT_SIZES``); a split given 0 episodes is skipped entirely.
    """
    if counts is None:
        counts = SPLIT_SIZES
    for split, n in counts.items():
        if split not in _SPLIT_INDEX:
            raise ValueError(f"unknown split {split!r}")
        if n < 0:
            raise ValueError(f"negative count for split {split!r}")

    task = task_of(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    paths = {}
    for split in _SPLIT_INDEX:
        n = counts.get(split, 0)
        if n == 0:
            continue
        path = out / f"{split}.jsonl"
        with open(path, "w") as fh:
            for i in range(n):
                ep = gen_episode(spec, episode_rng(spec.seed, split, i))
                fh.write(
                    json.dumps(
                        {
                            "input": ep.input_tokens,
                            "target": ep.target_tokens,
                            "text": ep.text,
                            "meta": ep.meta,
                        },
                        separators=(",", ":"),
                    )
                )
                fh.write("\n")
        paths[split] = path

    if task == "code_exec":
        vocab_in, vocab_out = CODE_INPUT_TOKENS, CODE_OUTPUT_TOKENS
    else:
        vocab_in, vocab_out = LISTOPS_INPUT_TOKENS, LISTOPS_OUTPUT_TOKENS
    vocab_path = out / "vocab.json"
    with open(vocab_path, "w") as fh:
        json.dump(
            {"task": task, "input": list(vocab_in), "output": list(vocab_out)},
            fh,
            indent=2,
        )
        fh.write("\n")
    paths["vocab"] = vocab_path
    return paths


def load_episodes(path):
    """Read a JSONL split back into :class:`Episode` objects."""
    episodes = []
    with open(path) as fh:
        for line in fh:
            row = json.loads(line)
            episodes.append(
                Episode(row["input"], row["target"], row["text"], row["meta"])
            )
    return episodes
