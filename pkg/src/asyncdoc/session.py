"""Editor-side engine: buffer edits in, protocol traffic out, markup queries.

The session owns the buffer and its span list.  Each batch of text edits
is re-tokenized incrementally; spans inside the affected region get fresh
negative command ids, everything outside keeps its identity.  New ids are
defined to the prover, then a single update carries the minimal edit-pair
list from the old span sequence to the new one.

Feedback and assignments arrive on a reader thread and accumulate into a
markup store keyed by execution id; stale execs survive exactly one
version cycle so late feedback for a superseded version neither crashes
nor leaks.  Queries resolve a cursor offset to its span, then to the
newest confirmed execution id, and translate command-relative offsets
into absolute buffer offsets.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, replace

from . import span_parser, wire, yxml
from .span_parser import CommandSpan, Insert, OutOfBounds, Remove, TextEdit

log = logging.getLogger("asyncdoc.session")


@dataclass(frozen=True)
class ErrorRegion:
    start: int  # absolute buffer offsets, half-open
    end: int
    message: str


@dataclass(frozen=True)
class Link:
    start: int  # use site, absolute half-open
    end: int
    name: str
    def_command_id: int | None
    def_offset: int  # 1-based within the defining command
    def_end_offset: int
    def_start: int | None  # absolute, when the defining span is live
    def_end: int | None


@dataclass(frozen=True)
class SpanView:
    command_id: int
    text: str
    start: int
    end: int
    exec_id: int | None
    status: str  # pending | done | failed
    states: tuple[str, ...]
    errors: tuple[ErrorRegion, ...]
    links: tuple[Link, ...]


@dataclass(frozen=True)
class Snapshot:
    version_id: int
    buffer: str
    spans: tuple[SpanView, ...]
    revision: int


@dataclass(frozen=True)
class MarkupQueryResult:
    state_text: str | None
    errors: tuple[ErrorRegion, ...]
    links: tuple[Link, ...]
    span_start: int | None = None
    span_end: int | None = None
    command_id: int | None = None
    exec_id: int | None = None


class EditorSession:
    """One buffer, one prover channel, immutable snapshots for readers."""

    def __init__(
        self,
        channel: wire.Channel,
        node: str = "scratch.v",
        parser: span_parser.LanguageParser | None = None,
        start_reader: bool = True,
    ):
        self.node = node
        self._channel = channel
        self._parser = parser or span_parser.PeriodParser()
        self._lock = threading.RLock()
        self._changed = threading.Condition(self._lock)
        self._buffer = ""
        self._spans: list[CommandSpan] = []
        self._next_command_id = 0
        self._next_version_id = 0
        self._version_id = 0  # last sent (or initial) version
        self._pending: set[int] = set()
        self._defined: set[int] = set()
        self._assignments: dict[int, dict[int, int]] = {0: {}}
        self._confirmed = 0
        self._previous_confirmed: int | None = None
        self._markup: dict[int, list[wire.Feedback]] = {}
        self._revision = 0
        self._closed = False
        self._reader: threading.Thread | None = None
        if start_reader:
            self._reader = threading.Thread(target=self._reader_loop, name="session-reader", daemon=True)
            self._reader.start()

    # -- outbound ------------------------------------------------------------

    def edit_buffer(self, edits: list[TextEdit]) -> None:
        """Apply edits, re-tokenize the affected region, and sync the prover."""
        if not edits:
            return
        with self._lock:
            old_ids = [s.command_id for s in self._spans]
            for edit in edits:
                self._apply_one(edit)
            new_ids = [s.command_id for s in self._spans]
            ops = _diff_ops(old_ids, new_ids)
            if not ops:
                self._bump()
                return
            for span in self._spans:
                if span.command_id not in self._defined:
                    self._defined.add(span.command_id)
                    self._send(
                        wire.CommandCall(
                            "Document.define_command",
                            (str(span.command_id), "", "", span.text),
                        )
                    )
            self._next_version_id -= 1
            new_version = self._next_version_id
            self._send(
                wire.CommandCall(
                    "Document.update",
                    (
                        str(self._version_id),
                        str(new_version),
                        wire.encode_update_arg([(self.node, ops)]),
                    ),
                )
            )
            self._pending.add(new_version)
            self._version_id = new_version
            self._bump()

    def _apply_one(self, edit: TextEdit) -> None:
        result = span_parser.incremental_reparse(self._buffer, self._spans, edit)
        lo = result.kept_prefix
        hi = len(self._spans) - result.kept_suffix
        old_middle = self._spans[lo:hi]
        if [s.text for s in result.middle] == [s.text for s in old_middle]:
            middle = old_middle  # no-op for this region, keep identities
        else:
            middle = []
            for span in result.middle:
                self._next_command_id -= 1
                middle.append(replace(span, command_id=self._next_command_id))
        self._spans = self._spans[:lo] + middle + self._spans[hi:]
        self._buffer = result.new_text

    def _send(self, call: wire.CommandCall) -> None:
        self._channel.write_chunk(wire.encode_command_call(call))

    # -- inbound (reader thread) ----------------------------------------------

    def _reader_loop(self) -> None:
        while True:
            try:
                chunk = self._channel.read_chunk()
                root = wire.classify_chunk(chunk)
                if root == "protocol":
                    function = wire.decode_function_header(chunk)
                    body = self._channel.read_chunk()
                    if function == "assign_update":
                        version_id, entries = wire.decode_assign_update(yxml.decode(body))
                        self.handle_assign(version_id, entries)
                    else:
                        log.warning("ignoring protocol function %r", function)
                elif root in wire.FEEDBACK_KINDS:
                    self.accumulate(wire.decode_feedback(chunk))
                else:
                    log.warning("ignoring unknown chunk root %r", root)
            except wire.ChannelClosed:
                return
            except (wire.WireError, yxml.YxmlError):
                log.exception("dropped undecodable chunk")

    def handle_assign(self, version_id: int, entries: list[tuple[int, list[int]]]) -> None:
        """Store an execution assignment; doubles as the update confirmation."""
        with self._lock:
            if version_id != 0 and version_id not in self._pending and version_id not in self._assignments:
                log.warning("assignment for unknown version %s ignored", version_id)
                return
            table = {cmd: execs[0] for cmd, execs in entries if execs}
            already = version_id in self._assignments
            self._assignments[version_id] = table
            self._pending.discard(version_id)
            if not already and version_id != self._confirmed:
                self._previous_confirmed = self._confirmed
                self._confirmed = version_id
            self._purge_markup()
            self._bump()

    def _purge_markup(self) -> None:
        live = set(self._assignments.get(self._confirmed, {}).values())
        if self._previous_confirmed is not None:
            live |= set(self._assignments.get(self._previous_confirmed, {}).values())
        for exec_id in [e for e in self._markup if e not in live]:
            del self._markup[exec_id]
        for version in [v for v in self._assignments if v not in (self._confirmed, self._previous_confirmed, 0)]:
            if version not in self._pending:
                del self._assignments[version]

    def accumulate(self, feedback: wire.Feedback) -> None:
        with self._lock:
            self._markup.setdefault(feedback.exec_id, []).append(feedback)
            self._bump()

    # -- queries ---------------------------------------------------------------

    def snapshot(self) -> Snapshot:
        with self._lock:
            views = []
            pos = 0
            for span in self._spans:
                views.append(self._view(span, pos))
                pos += len(span.text)
            return Snapshot(self._confirmed, self._buffer, tuple(views), self._revision)

    def query(self, cursor: int) -> MarkupQueryResult:
        """Markup for the span owning the cursor (gaps belong to the span before)."""
        with self._lock:
            if not 0 <= cursor <= len(self._buffer):
                raise OutOfBounds(f"cursor {cursor} in buffer of {len(self._buffer)}")
            if not self._spans:
                return MarkupQueryResult(None, (), ())
            pos = 0
            chosen, chosen_pos = self._spans[-1], len(self._buffer) - len(self._spans[-1].text)
            for span in self._spans:
                if pos <= cursor < pos + len(span.text):
                    chosen, chosen_pos = span, pos
                    break
                pos += len(span.text)
            view = self._view(chosen, chosen_pos)
            return MarkupQueryResult(
                state_text=view.states[-1] if view.states else None,
                errors=view.errors,
                links=view.links,
                span_start=view.start,
                span_end=view.end,
                command_id=view.command_id,
                exec_id=view.exec_id,
            )

    def _exec_for(self, command_id: int) -> int | None:
        exec_id = self._assignments.get(self._confirmed, {}).get(command_id)
        if exec_id is None and self._previous_confirmed is not None:
            exec_id = self._assignments.get(self._previous_confirmed, {}).get(command_id)
        return exec_id

    def _view(self, span: CommandSpan, start: int) -> SpanView:
        exec_id = self._exec_for(span.command_id)
        feedback = self._markup.get(exec_id, []) if exec_id is not None else []
        states = tuple(f.text for f in feedback if f.kind == "writeln")
        errors = []
        links = []
        trimmed_end = start + len(span.text.rstrip()) if span.text.rstrip() else start + len(span.text)
        for f in feedback:
            if f.kind == "error":
                if f.offset is not None and f.end_offset is not None:
                    errors.append(ErrorRegion(start + f.offset - 1, start + f.end_offset - 1, f.text))
                else:
                    errors.append(ErrorRegion(start, trimmed_end, f.text))
            elif f.kind == "report":
                links.extend(self._links_of(f, start))
        status = "pending"
        if errors:
            status = "failed"
        elif states:
            status = "done"
        return SpanView(
            command_id=span.command_id,
            text=span.text,
            start=start,
            end=start + len(span.text),
            exec_id=exec_id,
            status=status,
            states=states,
            errors=tuple(errors),
            links=tuple(links),
        )

    def _links_of(self, feedback: wire.Feedback, span_start: int) -> list[Link]:
        links = []
        for tree in feedback.content:
            if not isinstance(tree, yxml.Element) or tree.name != "entity":
                continue
            attrs = dict(tree.attributes)
            try:
                offset = int(attrs["offset"])
                end_offset = int(attrs["end_offset"])
                def_id = int(attrs["def_id"])
                def_offset = int(attrs["def_offset"])
                def_end_offset = int(attrs["def_end_offset"])
            except (KeyError, ValueError):
                continue
            def_cmd = self._command_of_exec(def_id)
            def_start = def_end = None
            if def_cmd is not None:
                pos = 0
                for span in self._spans:
                    if span.command_id == def_cmd:
                        def_start = pos + def_offset - 1
                        def_end = pos + def_end_offset - 1
                        break
                    pos += len(span.text)
            links.append(
                Link(
                    start=span_start + offset - 1,
                    end=span_start + end_offset - 1,
                    name=attrs.get("name", ""),
                    def_command_id=def_cmd,
                    def_offset=def_offset,
                    def_end_offset=def_end_offset,
                    def_start=def_start,
                    def_end=def_end,
                )
            )
        return links

    def _command_of_exec(self, exec_id: int) -> int | None:
        for version in (self._confirmed, self._previous_confirmed):
            if version is None:
                continue
            for cmd, ex in self._assignments.get(version, {}).items():
                if ex == exec_id:
                    return cmd
        return None

    # -- lifecycle --------------------------------------------------------------

    def _bump(self) -> None:
        self._revision += 1
        self._changed.notify_all()

    @property
    def revision(self) -> int:
        with self._lock:
            return self._revision

    def await_quiescent(self, timeout: float = 30.0) -> bool:
        """Wait until all sent updates are confirmed and every span has settled."""
        deadline = time.monotonic() + timeout
        with self._lock:
            while True:
                if self._quiet():
                    return True
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._changed.wait(timeout=min(remaining, 0.1))

    def _quiet(self) -> bool:
        if self._pending:
            return False
        for span in self._spans:
            exec_id = self._exec_for(span.command_id)
            if exec_id is None:
                return False
            if not any(f.kind in ("writeln", "error") for f in self._markup.get(exec_id, [])):
                return False
        return True

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
        self._channel.close()
        if self._reader is not None:
            self._reader.join(timeout=2)


def _diff_ops(old: list[int], new: list[int]) -> list[tuple[int | None, int | None]]:
    """Minimal delete-then-insert pair list turning one id sequence into another."""
    prefix = 0
    while prefix < len(old) and prefix < len(new) and old[prefix] == new[prefix]:
        prefix += 1
    suffix = 0
    while (
        suffix < len(old) - prefix
        and suffix < len(new) - prefix
        and old[len(old) - 1 - suffix] == new[len(new) - 1 - suffix]
    ):
        suffix += 1
    anchor = old[prefix - 1] if prefix else None
    ops: list[tuple[int | None, int | None]] = []
    for _ in range(len(old) - prefix - suffix):
        ops.append((anchor, None))
    for command_id in new[prefix : len(new) - suffix]:
        ops.append((anchor, command_id))
        anchor = command_id
    return ops
