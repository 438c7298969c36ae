"""A deliberately tiny proof checker giving the pipeline real semantics.

The command language covers definitions, lemmas over integer-expression
equalities, a few tactics, goal-state rendering and entity reports for
hyperlinks.  Every function here is pure: failures surface as error
messages, never exceptions, so a scheduler can run commands on any worker.

Offsets in messages are 1-based with an exclusive end, counted in
characters of the owning command's text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .yxml import Element, Text, XmlTree

SEPARATOR = "=" * 28

NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_']*")

_DEFINITION_RE = re.compile(r"^\s*Definition\s+([A-Za-z_][A-Za-z0-9_']*)\s*:=(.*?)\.\s*$", re.S)
_LEMMA_RE = re.compile(r"^\s*Lemma\s+([A-Za-z_][A-Za-z0-9_']*)\s*:(.*?)\.\s*$", re.S)
_CHECK_RE = re.compile(r"^\s*Check\s+([A-Za-z_][A-Za-z0-9_']*)\s*\.\s*$", re.S)
_QED_RE = re.compile(r"^\s*Qed\s*\.\s*$", re.S)
_PROOF_RE = re.compile(r"^\s*Proof\s*\.\s*$", re.S)
_IDTAC_RE = re.compile(r"^\s*idtac\s*\.\s*$", re.S)


@dataclass(frozen=True)
class EnvEntry:
    kind: str  # "thm" | "def"
    statement: str
    value: int | None
    def_exec_id: int
    def_offset: int
    def_end_offset: int


Environment = dict[str, EnvEntry]


@dataclass(frozen=True)
class ProofState:
    """Open proof: pending equality goals as (lhs text, rhs text) pairs."""

    goals: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class Message:
    """Prover output before serial/exec tagging happens in the scheduler."""

    kind: str  # writeln | error | report
    content: tuple[XmlTree, ...]
    offset: int | None = None
    end_offset: int | None = None

    @property
    def text(self) -> str:
        return "".join(t.content for t in self.content if isinstance(t, Text))


def _writeln(s: str) -> Message:
    return Message("writeln", (Text(s),))


def _error(s: str, offset: int | None = None, end_offset: int | None = None) -> Message:
    return Message("error", (Text(s),), offset, end_offset)


def render_state(state: ProofState | None) -> str:
    if state is None:
        return "Ready."
    n = len(state.goals)
    if n == 0:
        return "No more subgoals."
    lhs, rhs = state.goals[0]
    header = f"{n} subgoal" if n == 1 else f"{n} subgoals"
    return "\n".join([header, SEPARATOR, f"{lhs} = {rhs}"])


# --------------------------------------------------------------------------
# comment/string blanking, offset-preserving


def blank_non_code(text: str) -> str:
    """Replace comment and string characters with spaces, keeping length."""
    out = list(text)
    n = len(text)
    i = 0
    depth = 0
    in_string = False
    while i < n:
        if in_string:
            if text.startswith('""', i):
                out[i] = out[i + 1] = " "
                i += 2
                continue
            if text[i] == '"':
                in_string = False
            out[i] = " "
            i += 1
            continue
        if depth:
            if text.startswith("(*", i):
                depth += 1
                out[i] = out[i + 1] = " "
                i += 2
            elif text.startswith("*)", i):
                depth -= 1
                out[i] = out[i + 1] = " "
                i += 2
            else:
                out[i] = " "
                i += 1
            continue
        if text.startswith("(*", i):
            depth += 1
            out[i] = out[i + 1] = " "
            i += 2
            continue
        if text[i] == '"':
            in_string = True
            out[i] = " "
            i += 1
            continue
        i += 1
    return "".join(out)


def is_proof_opener(text: str) -> bool:
    return _LEMMA_RE.match(blank_non_code(text)) is not None


def is_proof_closer(text: str) -> bool:
    return _QED_RE.match(blank_non_code(text)) is not None


# --------------------------------------------------------------------------
# integer expressions: literals, defined names, +, *, parentheses


class _EvalError(Exception):
    def __init__(self, message: str, start: int | None = None, end: int | None = None):
        super().__init__(message)
        self.message = message
        self.start = start
        self.end = end


_TOKEN_RE = re.compile(r"\s*(?:(\d+)|([A-Za-z_][A-Za-z0-9_']*)|([+*()]))")


def _tokenize(expr: str, base: int):
    tokens = []
    pos = 0
    while pos < len(expr):
        m = _TOKEN_RE.match(expr, pos)
        if not m or m.end() == pos:
            stripped = expr[pos:].lstrip()
            if not stripped:
                break
            raise _EvalError(f"Syntax error at {stripped[0]!r}")
        if m.group(1):
            tokens.append(("int", int(m.group(1)), base + m.start(1), base + m.end(1)))
        elif m.group(2):
            tokens.append(("name", m.group(2), base + m.start(2), base + m.end(2)))
        else:
            tokens.append((m.group(3), None, base + m.start(3), base + m.end(3)))
        pos = m.end()
    return tokens


def eval_expr(expr: str, base: int, env: Environment) -> int:
    """Evaluate an integer expression; raises _EvalError with command offsets."""
    tokens = _tokenize(expr, base)
    idx = 0

    def peek():
        return tokens[idx][0] if idx < len(tokens) else None

    def parse_sum() -> int:
        nonlocal idx
        value = parse_product()
        while peek() == "+":
            idx += 1
            value += parse_product()
        return value

    def parse_product() -> int:
        nonlocal idx
        value = parse_atom()
        while peek() == "*":
            idx += 1
            value *= parse_atom()
        return value

    def parse_atom() -> int:
        nonlocal idx
        if idx >= len(tokens):
            raise _EvalError("Unexpected end of expression")
        kind, value, start, end = tokens[idx]
        if kind == "int":
            idx += 1
            return value
        if kind == "name":
            idx += 1
            entry = env.get(value)
            if entry is None:
                raise _EvalError(f"Unknown name {value}", start, end)
            if entry.kind != "def":
                raise _EvalError(f"{value} is not a definition", start, end)
            assert entry.value is not None
            return entry.value
        if kind == "(":
            idx += 1
            inner = parse_sum()
            if peek() != ")":
                raise _EvalError("Unbalanced parenthesis")
            idx += 1
            return inner
        raise _EvalError(f"Unexpected token {kind!r}")

    if not tokens:
        raise _EvalError("Empty expression")
    result = parse_sum()
    if idx != len(tokens):
        raise _EvalError("Trailing input after expression")
    return result


# --------------------------------------------------------------------------
# command execution


def exec_command(
    env: Environment, state: ProofState | None, text: str, exec_id: int
) -> tuple[Environment, ProofState | None, list[Message]]:
    """Run one command span; all failures come back as error messages."""
    code = blank_non_code(text)

    if _PROOF_RE.match(code) or _IDTAC_RE.match(code):
        return env, state, [_writeln(render_state(state))]

    if _QED_RE.match(code):
        if state is None:
            return env, None, [_error("Error: No proof in progress")]
        if state.goals:
            return env, None, [_error("Error: Attempt to save an incomplete proof")]
        return env, None, [_writeln(render_state(state))]

    m = _DEFINITION_RE.match(code)
    if m:
        name = m.group(1)
        if name in env:
            return env, state, [_error(f"Error: {name} already exists", m.start(1) + 1, m.end(1) + 1)]
        try:
            value = eval_expr(m.group(2), m.start(2), env)
        except _EvalError as exc:
            return env, state, [_eval_error(exc)]
        entry = EnvEntry("def", m.group(2).strip(), value, exec_id, m.start(1) + 1, m.end(1) + 1)
        new_env = dict(env)
        new_env[name] = entry
        return new_env, state, [_writeln(f"{name} is defined")]

    m = _LEMMA_RE.match(code)
    if m:
        if state is not None:
            return env, state, [_error("Error: Nested proofs are not supported")]
        name = m.group(1)
        if name in env:
            return env, state, [_error(f"Error: {name} already exists", m.start(1) + 1, m.end(1) + 1)]
        equation = m.group(2)
        eq_idx = equation.find("=")
        if eq_idx < 0:
            return env, state, [_error("Error: Lemma statement must be an equation")]
        lhs = equation[:eq_idx].strip()
        rhs = equation[eq_idx + 1 :].strip()
        if not lhs or not rhs:
            return env, state, [_error("Error: Lemma statement must be an equation")]
        statement = f"{lhs} = {rhs}"
        entry = EnvEntry("thm", statement, None, exec_id, m.start(1) + 1, m.end(1) + 1)
        new_env = dict(env)
        new_env[name] = entry
        new_state = ProofState(((lhs, rhs),))
        return new_env, new_state, [_writeln(render_state(new_state))]

    if re.match(r"^\s*reflexivity\s*\.\s*$", code):
        if state is None:
            return env, None, [_error("Error: No proof in progress")]
        if not state.goals:
            return env, state, [_error("Error: No such goal")]
        lhs, rhs = state.goals[0]
        try:
            left = eval_expr(lhs, 0, env)
            right = eval_expr(rhs, 0, env)
        except _EvalError as exc:
            # the names live in the statement's text, not this command's
            return env, state, [_error(f"Error: {exc.message}")]
        if left != right:
            return env, state, [_error(f'Error: Unable to unify "{right}" with "{left}"')]
        new_state = ProofState(state.goals[1:])
        return env, new_state, [_writeln(render_state(new_state))]

    m = _CHECK_RE.match(code)
    if m:
        name = m.group(1)
        entry = env.get(name)
        if entry is None:
            return env, state, [_error(f"Error: Unknown name {name}", m.start(1) + 1, m.end(1) + 1)]
        shown = f"{name} : {entry.statement}" if entry.kind == "thm" else f"{name} := {entry.statement}"
        return env, state, [_writeln(shown)]

    return env, state, [_error("Error: Unknown command")]


def _eval_error(exc: _EvalError) -> Message:
    if exc.start is None:
        return _error(f"Error: {exc.message}")
    return _error(f"Error: {exc.message}", exc.start + 1, exc.end + 1)


def entity_report(env: Environment, text: str, exec_id: int) -> list[Message]:
    """One report per use of a known name, linking use site to definition site."""
    reports: list[Message] = []
    code = blank_non_code(text)
    for m in NAME_RE.finditer(code):
        entry = env.get(m.group(0))
        if entry is None:
            continue
        offset, end_offset = m.start() + 1, m.end() + 1
        entity = Element(
            "entity",
            (
                ("def_id", str(entry.def_exec_id)),
                ("id", str(exec_id)),
                ("offset", str(offset)),
                ("end_offset", str(end_offset)),
                ("def_offset", str(entry.def_offset)),
                ("def_end_offset", str(entry.def_end_offset)),
                ("name", m.group(0)),
                ("kind", entry.kind),
            ),
        )
        reports.append(Message("report", (entity,), offset, end_offset))
    return reports


def run_command(
    env: Environment, state: ProofState | None, text: str, exec_id: int
) -> tuple[Environment, ProofState | None, list[Message]]:
    """Entity reports against the pre-command environment, then execution."""
    reports = entity_report(env, text, exec_id)
    new_env, new_state, messages = exec_command(env, state, text, exec_id)
    return new_env, new_state, reports + messages
