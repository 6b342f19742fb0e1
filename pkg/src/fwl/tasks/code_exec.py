"""Random straight-line programs and the interpreter that labels them.

The language has four statement forms over a handful of integer variables:

    x = 3 ;                assignment of a literal
    x ++ ;    x -- ;       add or subtract one
    print x ;              emit the current value
    if y < 6 : print x ;   guard a single basic statement

Programs are word-level token sequences. The aligned target sequence is
silent everywhere except the ``;`` closing each print that actually runs,
which carries the printed value — so a model must track every variable
through time to know what the final (always-present) print will say.
"""

from dataclasses import dataclass

from .episodes import (
    CODE_INPUT_IDS,
    CODE_INPUT_TOKENS,
    NO_OUTPUT,
    VALUE_MAX,
    VALUE_MIN,
    VAR_NAMES,
    Episode,
    value_output_id,
)

# Draws per statement slot before generation gives up. Rejections happen
# when an increment would leave the value range or when a non-assignment
# is drawn before any variable exists, so in practice a handful suffices.
REJECTION_BUDGET = 1000


@dataclass(frozen=True)
class CodeExecSpec:
    """Sampling configuration for random programs.

    ``n_statements`` counts the hard-coded final print, so it must be at
    least 2 (something has to define a variable first). ``greater_than``
    additionally draws ``>`` guards; by default only ``<`` appears.
    """

    n_statements: int = 100
    n_variables: int = 3
    value_min: int = VALUE_MIN
    value_max: int = VALUE_MAX
    seed: int = 0
    greater_than: bool = False

    def __post_init__(self):
        if not 1 <= self.n_variables <= len(VAR_NAMES):
            raise ValueError(
                f"n_variables must be in [1, {len(VAR_NAMES)}], "
                f"got {self.n_variables}"
            )
        if self.n_statements < 2:
            raise ValueError("need at least one statement before the final print")
        if self.value_min > self.value_max:
            raise ValueError("empty value range")
        if self.value_min < VALUE_MIN or self.value_max > VALUE_MAX:
            raise ValueError(
                f"value range must stay within [{VALUE_MIN}, {VALUE_MAX}]"
            )


def gen_code_exec(spec, rng):
    """Sample one program as an :class:`Episode`.

    The generator simulates execution as it goes: any statement whose
    execution would push a variable outside the value range is rejected
    and redrawn, and it only ever references variables that already hold
    a value, so the interpreter can never fault on its output. The last
    statement always prints a random live variable.
    """
    env = {}
    tokens = []
    target = []

    def emit(words, printed):
        tokens.extend(words)
        target.extend([NO_OUTPUT] * len(words))
        if printed is not None:
            target[-1] = value_output_id(printed)

    for _ in range(spec.n_statements - 1):
        words, printed, env = _propose(env, spec, rng)
        emit(words, printed)

    names = sorted(env)
    var = names[int(rng.integers(len(names)))]
    emit(["print", var, ";"], env[var])

    return Episode(
        input_tokens=[CODE_INPUT_IDS[w] for w in tokens],
        target_tokens=target,
        text=" ".join(tokens),
        meta={
            "task": "code_exec",
            "n_statements": spec.n_statements,
            "n_variables": spec.n_variables,
            "length": len(tokens),
        },
    )


def _propose(env, spec, rng):
    for _ in range(REJECTION_BUDGET):
        drawn = _draw(env, spec, rng)
        if drawn is not None:
            return drawn
    raise RuntimeError(
        f"no valid statement after {REJECTION_BUDGET} draws; "
        "the value range may be too tight"
    )


def _draw(env, spec, rng):
    """One statement draw: (words, printed value or None, new env), or
    None when the draw is invalid and should be retried."""
    kind = int(rng.integers(4))
    if kind == 0:  # assignment — always valid, may introduce a variable
        var = VAR_NAMES[int(rng.integers(spec.n_variables))]
        val = int(rng.integers(spec.value_min, spec.value_max + 1))
        return [var, "=", str(val), ";"], None, {**env, var: val}
    if not env:
        return None
    names = sorted(env)
    var = names[int(rng.integers(len(names)))]
    if kind == 1:
        op = "++" if int(rng.integers(2)) == 0 else "--"
        val = env[var] + (1 if op == "++" else -1)
        if not spec.value_min <= val <= spec.value_max:
            return None
        return [var, op, ";"], None, {**env, var: val}
    if kind == 2:
        return ["print", var, ";"], env[var], env

    # conditional: ``var`` is the guard, the body is a single basic statement
    cmp_op = "<"
    if spec.greater_than and int(rng.integers(2)) == 1:
        cmp_op = ">"
    threshold = int(rng.integers(spec.value_min, spec.value_max + 1))
    holds = env[var] < threshold if cmp_op == "<" else env[var] > threshold
    head = ["if", var, cmp_op, str(threshold), ":"]

    inner = int(rng.integers(3))
    if inner == 0:
        tv = VAR_NAMES[int(rng.integers(spec.n_variables))]
        val = int(rng.integers(spec.value_min, spec.value_max + 1))
        new_env = {**env, tv: val} if holds else env
        return head + [tv, "=", str(val), ";"], None, new_env
    tv = names[int(rng.integers(len(names)))]
    if inner == 1:
        op = "++" if int(rng.integers(2)) == 0 else "--"
        val = env[tv] + (1 if op == "++" else -1)
        # An untaken branch has no effect, so only a branch that runs can
        # be rejected for leaving the range.
        if holds and not spec.value_min <= val <= spec.value_max:
            return None
        new_env = {**env, tv: val} if holds else env
        return head + [tv, op, ";"], None, new_env
    printed = env[tv] if holds else None
    return head + ["print", tv, ";"], printed, env


# --- interpreter -------------------------------------------------------------


def interpret_code(tokens):
    """Run a program and return its aligned list of target ids.

    ``tokens`` may be input ids or the literal words. Raises ValueError on
    malformed programs and on reads of variables that hold no value (a
    guard always reads; a statement behind a false guard never does).
    """
    words = _as_words(tokens)
    target = [NO_OUTPUT] * len(words)
    env = {}
    i = 0
    while i < len(words):
        i = _exec_statement(words, i, env, target)
    return target


def _as_words(tokens):
    words = []
    for tok in tokens:
        if isinstance(tok, str):
            words.append(tok)
        else:
            i = int(tok)
            if not 0 <= i < len(CODE_INPUT_TOKENS):
                raise ValueError(f"input id {i} out of range")
            words.append(CODE_INPUT_TOKENS[i])
    return words


def _tok(words, i):
    if i >= len(words):
        raise ValueError("program ends mid-statement")
    return words[i]


def _expect(words, i, want):
    got = _tok(words, i)
    if got != want:
        raise ValueError(f"expected {want!r}, got {got!r}")


def _read(env, var):
    if var not in env:
        raise ValueError(f"read of undefined variable {var!r}")
    return env[var]


def _literal(word):
    try:
        return int(word)
    except ValueError:
        raise ValueError(f"expected an integer literal, got {word!r}") from None


def _exec_statement(words, i, env, target):
    if _tok(words, i) == "if":
        guard = _tok(words, i + 1)
        cmp_op = _tok(words, i + 2)
        if cmp_op not in ("<", ">"):
            raise ValueError(f"bad comparison {cmp_op!r}")
        threshold = _literal(_tok(words, i + 3))
        _expect(words, i + 4, ":")
        val = _read(env, guard)
        holds = val < threshold if cmp_op == "<" else val > threshold
        return _exec_basic(words, i + 5, env, target, execute=holds)
    return _exec_basic(words, i, env, target, execute=True)


def _exec_basic(words, i, env, target, execute):
    head = _tok(words, i)
    if head == "print":
        var = _tok(words, i + 1)
        _expect(words, i + 2, ";")
        if execute:
            target[i + 2] = value_output_id(_read(env, var))
        return i + 3
    if head not in VAR_NAMES:
        raise ValueError(f"expected a statement, got {head!r}")
    op = _tok(words, i + 1)
    if op == "=":
        val = _literal(_tok(words, i + 2))
        _expect(words, i + 3, ";")
        if execute:
            env[head] = val
        return i + 4
    if op in ("++", "--"):
        _expect(words, i + 2, ";")
        if execute:
            env[head] = _read(env, head) + (1 if op == "++" else -1)
        return i + 3
    raise ValueError(f"bad statement operator {op!r}")
