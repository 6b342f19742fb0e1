"""Shared episode container and the fixed token tables for both tasks.

Inputs and outputs use separate vocabularies. Output id 0 always means
"this position emits nothing"; the only non-silent positions are the ones
where a program actually prints (code execution) or where the final result
lands (list evaluation).
"""

from dataclasses import dataclass, field

NO_OUTPUT = 0

# --- code execution ---------------------------------------------------------

VAR_NAMES = ("x", "y", "z", "v", "w")
VALUE_MIN = -8
VALUE_MAX = 16

_VALUES = tuple(str(n) for n in range(VALUE_MIN, VALUE_MAX + 1))
_SYMBOLS = ("=", ";", "++", "--", "print", "if", ":", "<", ">")

CODE_INPUT_TOKENS = VAR_NAMES + _VALUES + _SYMBOLS
CODE_OUTPUT_TOKENS = ("N",) + _VALUES

CODE_INPUT_IDS = {tok: i for i, tok in enumerate(CODE_INPUT_TOKENS)}
CODE_OUTPUT_IDS = {tok: i for i, tok in enumerate(CODE_OUTPUT_TOKENS)}

# --- list evaluation --------------------------------------------------------

LISTOPS_OPS = ("MAX", "MIN", "FIRST")
_DIGITS = tuple(str(d) for d in range(10))

LISTOPS_INPUT_TOKENS = tuple("[" + op for op in LISTOPS_OPS) + ("]",) + _DIGITS
LISTOPS_OUTPUT_TOKENS = ("N",) + _DIGITS

LISTOPS_INPUT_IDS = {tok: i for i, tok in enumerate(LISTOPS_INPUT_TOKENS)}
LISTOPS_OUTPUT_IDS = {tok: i for i, tok in enumerate(LISTOPS_OUTPUT_TOKENS)}


def value_output_id(value):
    """Output id carrying the integer ``value`` (code-execution table)."""
    if not VALUE_MIN <= value <= VALUE_MAX:
        raise ValueError(f"value {value} outside [{VALUE_MIN}, {VALUE_MAX}]")
    return CODE_OUTPUT_IDS[str(value)]


@dataclass
class Episode:
    """One labeled sequence: aligned input/target ids plus readable text."""

    input_tokens: list
    target_tokens: list
    text: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.input_tokens) != len(self.target_tokens):
            raise ValueError(
                f"input length {len(self.input_tokens)} != "
                f"target length {len(self.target_tokens)}"
            )
