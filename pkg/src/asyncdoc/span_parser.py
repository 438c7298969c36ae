"""Splitting proof text into command spans, and deciding what to re-tokenize.

A span is a phrase ended by a terminator period, plus the whitespace that
follows it; comments before a phrase belong to that phrase's span.  A
period terminates only when it sits outside comments and string literals,
is not part of a ".." or "..." run, and is followed by whitespace or end
of input.  Comments ``(* ... *)`` nest; strings quote with ``"`` and
escape a quote by doubling it; quotes inside comments are plain text.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable


class OutOfBounds(Exception):
    """An edit refers to offsets outside the buffer."""


@dataclass(frozen=True)
class Insert:
    offset: int
    text: str


@dataclass(frozen=True)
class Remove:
    offset: int
    length: int


TextEdit = Insert | Remove


@dataclass(frozen=True)
class CommandSpan:
    """One tokenized unit of prover text.

    ``command_id`` 0 means unassigned (raw parser output); sessions assign
    negative ids.  Improper spans are the unterminated leftovers at end of
    input (trailing text without a terminator, or whitespace/comment-only
    tails).
    """

    text: str
    proper: bool = True
    command_id: int = 0

    @property
    def kind(self) -> str:
        return "proper" if self.proper else "improper"


@runtime_checkable
class LanguageParser(Protocol):
    """Registration point for language frontends: text in, spans out.

    Implementations must partition the input: concatenating the returned
    span texts reproduces it exactly.
    """

    def parse_spans(self, text: str) -> list[CommandSpan]: ...


class PeriodParser:
    """The period-terminated tokenizer described at module level."""

    def parse_spans(self, text: str) -> list[CommandSpan]:
        spans: list[CommandSpan] = []
        n = len(text)
        i = 0
        start = 0
        depth = 0
        in_string = False
        while i < n:
            c = text[i]
            if in_string:
                if c == '"':
                    if i + 1 < n and text[i + 1] == '"':
                        i += 2
                        continue
                    in_string = False
                i += 1
                continue
            if depth:
                if c == "(" and text.startswith("(*", i):
                    depth += 1
                    i += 2
                elif c == "*" and text.startswith("*)", i):
                    depth -= 1
                    i += 2
                else:
                    i += 1
                continue
            if c == '"':
                in_string = True
                i += 1
                continue
            if c == "(" and text.startswith("(*", i):
                depth += 1
                i += 2
                continue
            if c == ".":
                prev_dot = i > 0 and text[i - 1] == "."
                next_dot = i + 1 < n and text[i + 1] == "."
                followed = i + 1 >= n or text[i + 1].isspace()
                if not prev_dot and not next_dot and followed:
                    j = i + 1
                    while j < n and text[j].isspace():
                        j += 1
                    spans.append(CommandSpan(text[start:j], proper=True))
                    start = j
                    i = j
                    continue
            i += 1
        if start < n:
            spans.append(CommandSpan(text[start:], proper=False))
        return spans


_DEFAULT = PeriodParser()


def parse_spans(text: str) -> list[CommandSpan]:
    return _DEFAULT.parse_spans(text)


# --------------------------------------------------------------------------
# incremental re-tokenization


def apply_edit(text: str, edit: TextEdit) -> str:
    if isinstance(edit, Insert):
        if not 0 <= edit.offset <= len(text):
            raise OutOfBounds(f"insert at {edit.offset} in buffer of {len(text)}")
        return text[: edit.offset] + edit.text + text[edit.offset :]
    if not (0 <= edit.offset and edit.length >= 0 and edit.offset + edit.length <= len(text)):
        raise OutOfBounds(f"remove [{edit.offset}, +{edit.length}) in buffer of {len(text)}")
    return text[: edit.offset] + text[edit.offset + edit.length :]


def _edit_range(edit: TextEdit) -> tuple[int, int, str]:
    """(old start, old end, inserted text) of an edit."""
    if isinstance(edit, Insert):
        return edit.offset, edit.offset, edit.text
    return edit.offset, edit.offset + edit.length, ""


_RISKY = (".", '"')
_RISKY_PAIRS = ("(*", "*)")


def _is_risky(window: str) -> bool:
    return any(ch in window for ch in _RISKY) or any(p in window for p in _RISKY_PAIRS)


def affected_region(old_text: str, edit: TextEdit, spans: Sequence[CommandSpan] | None = None) -> tuple[int, int]:
    """Minimal old-text region that must be re-tokenized after the edit.

    Left edge: start of the span owning the character just before the edit
    (so inserts at a boundary can still be absorbed by the previous span's
    trailing whitespace).  Right edge: end of input whenever the edit could
    create or destroy a terminator, comment mark or string quote anywhere;
    otherwise one span past the edit, which covers content shed into the
    following phrase.  A deliberate over-approximation: correctness is the
    splice-equals-full-reparse property, not tightness.
    """
    start, end, inserted = _edit_range(edit)
    if not (0 <= start <= end <= len(old_text)):
        raise OutOfBounds(f"edit [{start}, {end}) in buffer of {len(old_text)}")
    if spans is None:
        spans = parse_spans(old_text)
    if not spans:
        return 0, 0

    bounds = []
    pos = 0
    for s in spans:
        bounds.append((pos, pos + len(s.text)))
        pos += len(s.text)

    def span_index(offset: int) -> int:
        for idx, (lo, hi) in enumerate(bounds):
            if lo <= offset < hi:
                return idx
        return len(bounds) - 1

    left = span_index(max(start - 1, 0))
    region_start = bounds[left][0]

    # one char of context on both sides catches marks straddling the edit
    old_window = old_text[max(start - 1, 0) : min(end + 1, len(old_text))]
    ctx_before = old_text[start - 1] if start > 0 else ""
    ctx_after = old_text[end] if end < len(old_text) else ""
    new_window = ctx_before + inserted + ctx_after
    if _is_risky(old_window) or _is_risky(new_window):
        return region_start, len(old_text)

    right = min(span_index(max(end - 1, start - 1, 0) if end > start else max(start - 1, 0)) + 1, len(bounds) - 1)
    return region_start, bounds[right][1]


@dataclass(frozen=True)
class Reparse:
    """Outcome of an incremental re-tokenization.

    The new span list is ``old[:kept_prefix] + middle + old[len(old) - kept_suffix:]``
    with every middle span freshly produced from the edited text.
    """

    new_text: str
    kept_prefix: int
    kept_suffix: int
    middle: list[CommandSpan]


def incremental_reparse(old_text: str, old_spans: Sequence[CommandSpan], edit: TextEdit) -> Reparse:
    region_start, region_end = affected_region(old_text, edit, old_spans)
    new_text = apply_edit(old_text, edit)
    delta = len(new_text) - len(old_text)

    kept_prefix = 0
    pos = 0
    for s in old_spans:
        if pos + len(s.text) <= region_start:
            kept_prefix += 1
            pos += len(s.text)
        else:
            break

    kept_suffix = 0
    pos = len(old_text)
    for s in reversed(old_spans):
        if pos - len(s.text) >= region_end:
            kept_suffix += 1
            pos -= len(s.text)
        else:
            break

    middle = parse_spans(new_text[region_start : region_end + delta])
    return Reparse(new_text, kept_prefix, kept_suffix, middle)
