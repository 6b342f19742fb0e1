"""Nested list reductions over single digits, labeled at the last token.

    [MAX 6 1 [FIRST 2 3 ] 0 [MIN 4 7 1 ] ]   ->   6

Operators are MAX, MIN, and FIRST; every leaf is a digit 0-9, so every
value — including the answer — is a digit. The target sequence is silent
at every position except the final ``]``, which carries the result, so a
model has to fold the whole tree before it may answer.
"""

from dataclasses import dataclass

from .episodes import (
    LISTOPS_INPUT_IDS,
    LISTOPS_INPUT_TOKENS,
    LISTOPS_OPS,
    LISTOPS_OUTPUT_IDS,
    NO_OUTPUT,
    Episode,
)

MAX_DEPTH = 15


@dataclass(frozen=True)
class ListOpsSpec:
    """Sampling configuration for list-reduction trees.

    Every generated tree nests to exactly ``depth`` (a flat list is depth
    1): one argument slot per level is forced to recurse all the way down,
    and other slots may hold strictly shallower sub-trees with probability
    ``branch_prob``.
    """

    depth: int = 2
    max_args: int = 5
    seed: int = 0
    branch_prob: float = 0.25

    def __post_init__(self):
        if not 1 <= self.depth <= MAX_DEPTH:
            raise ValueError(f"depth must be in [1, {MAX_DEPTH}], got {self.depth}")
        if self.max_args < 2:
            raise ValueError("lists need at least two argument slots")
        if not 0.0 <= self.branch_prob < 1.0:
            raise ValueError("branch_prob must be in [0, 1)")


def gen_listops(spec, rng):
    """Sample one tree of exact nesting depth as an :class:`Episode`."""
    tree = _grow(spec.depth, spec, rng)
    words = _words(tree)
    value = _value(tree)
    target = [NO_OUTPUT] * len(words)
    target[-1] = LISTOPS_OUTPUT_IDS[str(value)]
    return Episode(
        input_tokens=[LISTOPS_INPUT_IDS[w] for w in words],
        target_tokens=target,
        text=" ".join(words),
        meta={"task": "listops", "depth": spec.depth, "length": len(words)},
    )


def _grow(depth, spec, rng):
    op = LISTOPS_OPS[int(rng.integers(len(LISTOPS_OPS)))]
    n_args = int(rng.integers(2, spec.max_args + 1))
    args = [int(rng.integers(10)) for _ in range(n_args)]
    if depth > 1:
        deep_slot = int(rng.integers(n_args))
        for slot in range(n_args):
            if slot == deep_slot:
                args[slot] = _grow(depth - 1, spec, rng)
            elif rng.random() < spec.branch_prob:
                # strictly shallower, so only the forced chain sets the depth
                args[slot] = _grow(int(rng.integers(1, depth)), spec, rng)
    return op, args


def _value(node):
    if isinstance(node, int):
        return node
    op, args = node
    vals = [_value(a) for a in args]
    if op == "MAX":
        return max(vals)
    if op == "MIN":
        return min(vals)
    return vals[0]


def _words(node):
    op, args = node
    out = ["[" + op]
    for arg in args:
        if isinstance(arg, int):
            out.append(str(arg))
        else:
            out.extend(_words(arg))
    out.append("]")
    return out


def evaluate_listops(tokens):
    """Evaluate a token sequence (ids or words) to its digit result."""
    words = _as_words(tokens)
    stack = []
    result = None
    for word in words:
        if word.startswith("["):
            stack.append((word[1:], []))
        elif word == "]":
            if not stack:
                raise ValueError("unbalanced ']'")
            op, vals = stack.pop()
            if not vals:
                raise ValueError(f"empty {op} list")
            if op == "MAX":
                val = max(vals)
            elif op == "MIN":
                val = min(vals)
            else:
                val = vals[0]
            if stack:
                stack[-1][1].append(val)
            elif result is None:
                result = val
            else:
                raise ValueError("more than one top-level list")
        else:
            if not stack:
                raise ValueError("digit outside any list")
            stack[-1][1].append(int(word))
    if stack:
        raise ValueError("unclosed list")
    if result is None:
        raise ValueError("no list to evaluate")
    return result


def _as_words(tokens):
    words = []
    for tok in tokens:
        if isinstance(tok, str):
            if tok not in LISTOPS_INPUT_IDS:
                raise ValueError(f"unknown token {tok!r}")
            words.append(tok)
        else:
            i = int(tok)
            if not 0 <= i < len(LISTOPS_INPUT_TOKENS):
                raise ValueError(f"input id {i} out of range")
            words.append(LISTOPS_INPUT_TOKENS[i])
    return words
