"""Synthetic algorithmic tasks: program execution and nested list reduction.

Both tasks emit word-level token sequences with aligned targets that are
silent almost everywhere, so accuracy hinges entirely on carrying state
across the sequence.
"""

from .code_exec import CodeExecSpec, gen_code_exec, interpret_code
from .episodes import (
    CODE_INPUT_TOKENS,
    CODE_OUTPUT_TOKENS,
    LISTOPS_INPUT_TOKENS,
    LISTOPS_OUTPUT_TOKENS,
    NO_OUTPUT,
    VALUE_MAX,
    VALUE_MIN,
    VAR_NAMES,
    Episode,
)
from .export import (
    SPLIT_SIZES,
    dataset_export,
    episode_rng,
    gen_episode,
    load_episodes,
    task_of,
)
from .listops import ListOpsSpec, evaluate_listops, gen_listops
from .metrics import eval_metrics

__all__ = [
    "CODE_INPUT_TOKENS",
    "CODE_OUTPUT_TOKENS",
    "CodeExecSpec",
    "Episode",
    "LISTOPS_INPUT_TOKENS",
    "LISTOPS_OUTPUT_TOKENS",
    "ListOpsSpec",
    "NO_OUTPUT",
    "SPLIT_SIZES",
    "VALUE_MAX",
    "VALUE_MIN",
    "VAR_NAMES",
    "dataset_export",
    "episode_rng",
    "eval_metrics",
    "evaluate_listops",
    "gen_code_exec",
    "gen_episode",
    "gen_listops",
    "interpret_code",
    "load_episodes",
    "task_of",
]
