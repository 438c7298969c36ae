"""Prover-side document store and the protocol service built on it.

The store owns the command lookup table and the version history: each
version maps file nodes to ordered (command id, execution id) lists and is
immutable once registered.  Updating folds edit operations over the old
version, then reuses execution ids exactly on the longest common prefix of
command ids and mints fresh positive ids for everything after the first
difference.
"""

from __future__ import annotations

import logging
import queue
import threading
from collections import OrderedDict
from dataclasses import dataclass

from . import stm, wire, yxml

log = logging.getLogger("asyncdoc.document")

VERSION_HISTORY = 16


class DocumentError(Exception):
    """Base class for document-store failures."""


class DuplicateDefinition(DocumentError):
    """A command id was defined twice."""


class UnknownCommand(DocumentError):
    """An edit referenced a command id that was never defined."""


class DanglingReference(DocumentError):
    """An insert/delete anchor is not present in the document."""


class DeleteAtEnd(DocumentError):
    """Delete-after named the last command, so nothing follows to remove."""


class UnknownVersion(DocumentError):
    """The update referenced an unregistered (or garbage-collected) version."""


@dataclass(frozen=True)
class EditOp:
    """Insert-after / delete-after pair of optional command ids.

    ``(None, c)`` prepends c, ``(p, c)`` inserts c after p, ``(p, None)``
    deletes the command right after p, and ``(None, None)`` deletes the
    first command.
    """

    after: int | None
    what: int | None

    @property
    def is_insert(self) -> bool:
        return self.what is not None


@dataclass(frozen=True)
class DocumentVersion:
    version_id: int
    nodes: tuple[tuple[str, tuple[tuple[int, int | None], ...]], ...] = ()

    def node(self, name: str) -> tuple[tuple[int, int | None], ...]:
        for node_name, entries in self.nodes:
            if node_name == name:
                return entries
        return ()

    def node_names(self) -> list[str]:
        return [name for name, _ in self.nodes]


@dataclass(frozen=True)
class Assignment:
    """Per-update execution assignment, in document order.

    Exec lists are singletons here: this prover runs each command exactly
    once per version.
    """

    version_id: int
    entries: tuple[tuple[int, tuple[int, ...]], ...]


@dataclass(frozen=True)
class NodeInsertion:
    """What the scheduler must ingest for one node after an update."""

    node: str
    last_common: int | None
    new_commands: tuple[tuple[int, int], ...]  # (exec id, command id)
    spine: tuple[int, ...]  # full exec order of the new version


def apply_edits(old_commands: list[int], ops: list[EditOp]) -> list[int]:
    """Left fold of edit operations over a command id list."""
    commands = list(old_commands)
    for op in ops:
        if op.after is None:
            anchor = 0
        else:
            try:
                anchor = commands.index(op.after) + 1
            except ValueError:
                raise DanglingReference(f"anchor {op.after} not in document") from None
        if op.is_insert:
            commands.insert(anchor, op.what)
        else:
            if anchor >= len(commands):
                raise DeleteAtEnd(f"nothing follows {op.after}")
            del commands[anchor]
    return commands


class DocumentStore:
    """Single-owner store; all mutation goes through one caller at a time."""

    def __init__(self, history: int = VERSION_HISTORY):
        self._commands: dict[int, str] = {}
        self._versions: OrderedDict[int, DocumentVersion] = OrderedDict()
        self._versions[0] = DocumentVersion(0)
        self._history = history
        self._next_exec = 1

    def define_command(self, command_id: int, text: str) -> None:
        if command_id in self._commands:
            raise DuplicateDefinition(f"command {command_id} already defined")
        self._commands[command_id] = text

    def lookup(self, command_id: int) -> str:
        try:
            return self._commands[command_id]
        except KeyError:
            raise UnknownCommand(f"command {command_id} was never defined") from None

    def version(self, version_id: int) -> DocumentVersion:
        try:
            return self._versions[version_id]
        except KeyError:
            raise UnknownVersion(f"version {version_id} unknown") from None

    def fresh_exec_id(self) -> int:
        exec_id = self._next_exec
        self._next_exec += 1
        return exec_id

    def assign_execs(
        self, old_entries: tuple[tuple[int, int | None], ...], new_commands: list[int]
    ) -> list[tuple[int, int]]:
        """Reuse execs on the longest common prefix, mint fresh ones after it."""
        prefix = 0
        while (
            prefix < len(old_entries)
            and prefix < len(new_commands)
            and old_entries[prefix][0] == new_commands[prefix]
            and old_entries[prefix][1] is not None
        ):
            prefix += 1
        assigned = [(cmd, old_entries[i][1]) for i, cmd in enumerate(new_commands[:prefix])]
        assigned += [(cmd, self.fresh_exec_id()) for cmd in new_commands[prefix:]]
        return assigned  # type: ignore[return-value]

    def update(
        self,
        old_version_id: int,
        new_version_id: int,
        node_ops: list[tuple[str, list[EditOp]]],
    ) -> tuple[Assignment, list[NodeInsertion]]:
        """Fold the edits, assign execs, register the new immutable version."""
        old = self.version(old_version_id)
        for _, ops in node_ops:
            for op in ops:
                for ref in (op.after, op.what):
                    if ref is not None and ref not in self._commands:
                        raise UnknownCommand(f"edit references undefined command {ref}")

        working: dict[str, tuple[tuple[int, int | None], ...]] = dict(old.nodes)
        order = [name for name, _ in old.nodes]
        insertions: list[NodeInsertion] = []
        for name, ops in node_ops:
            if name not in order:
                order.append(name)
            old_entries = working.get(name, ())
            new_commands = apply_edits([cmd for cmd, _ in old_entries], ops)
            assigned = self.assign_execs(old_entries, new_commands)
            prefix = 0
            while (
                prefix < len(old_entries)
                and prefix < len(assigned)
                and old_entries[prefix] == assigned[prefix]
            ):
                prefix += 1
            insertions.append(
                NodeInsertion(
                    node=name,
                    last_common=old_entries[prefix - 1][1] if prefix else None,
                    new_commands=tuple((e, c) for c, e in assigned[prefix:]),
                    spine=tuple(e for _, e in assigned),
                )
            )
            working[name] = tuple(assigned)

        new_nodes = tuple((name, working[name]) for name in order)
        entries = tuple(
            (cmd, (exec_id,))
            for _, node_entries in new_nodes
            for cmd, exec_id in node_entries
            if exec_id is not None
        )
        version = DocumentVersion(new_version_id, new_nodes)
        self._versions[new_version_id] = version
        while len(self._versions) > self._history:
            dropped, _ = self._versions.popitem(last=False)
            log.debug("garbage-collected version %s", dropped)
        return Assignment(new_version_id, entries), insertions


# --------------------------------------------------------------------------
# protocol service


@dataclass(frozen=True)
class EngineConfig:
    workers: int | None = None  # None = available parallelism
    deterministic: bool = False  # force one worker for stable serials
    auto_observe: bool = True  # demand the final spine node after each update
    version_history: int = VERSION_HISTORY


class ProverEngine:
    """Prover side of the protocol: one channel, one store, one scheduler.

    Incoming command calls are dispatched on a single thread, so store
    mutations are serialized; the assign_update reply is queued for the
    writer before any command reaches the scheduler, which is what keeps
    assignments ahead of the feedback they introduce.
    """

    def __init__(self, config: EngineConfig | None = None, executor=None):
        self.config = config or EngineConfig()
        workers = 1 if self.config.deterministic else self.config.workers
        self.store = DocumentStore(history=self.config.version_history)
        self.machine = stm.TransactionMachine(workers=workers, executor=executor)
        self._outbound: "queue.Queue[tuple[bytes, ...] | None]" = queue.Queue()
        self._channel: wire.Channel | None = None
        self._threads: list[threading.Thread] = []
        self._stopped = threading.Event()

    def serve(self, channel: wire.Channel) -> None:
        """Attach to a channel and process traffic on background threads."""
        self._channel = channel
        for name, target in (
            ("prover-dispatch", self._dispatch_loop),
            ("prover-writer", self._writer_loop),
            ("prover-pump", self._pump_loop),
        ):
            t = threading.Thread(target=target, name=name, daemon=True)
            t.start()
            self._threads.append(t)

    def wait_closed(self, timeout: float | None = None) -> None:
        """Block until the peer hangs up (the dispatch loop exits)."""
        if self._threads:
            self._threads[0].join(timeout)

    def stop(self) -> None:
        if self._stopped.is_set():
            return
        self._stopped.set()
        self.machine.shutdown()
        self._outbound.put(None)
        if self._channel is not None:
            self._channel.close()

    def join(self, timeout: float = 2.0) -> None:
        for t in self._threads:
            t.join(timeout=timeout)

    # -- loops ---------------------------------------------------------------

    def _dispatch_loop(self) -> None:
        assert self._channel is not None
        while not self._stopped.is_set():
            try:
                chunk = self._channel.read_chunk()
            except wire.WireError:
                break
            try:
                call = wire.decode_command_call(chunk)
                self.handle_call(call)
            except (wire.WireError, DocumentError, yxml.YxmlError):
                log.exception("dropped malformed or inapplicable command call")
        self.stop()

    def _writer_loop(self) -> None:
        assert self._channel is not None
        while True:
            item = self._outbound.get()
            if item is None:
                return
            try:
                for chunk in item:
                    self._channel.write_chunk(chunk)
            except wire.ChannelClosed:
                return

    def _pump_loop(self) -> None:
        while True:
            feedback = self.machine.feedback_queue.get()
            if feedback is None:
                return
            self._outbound.put((wire.encode_feedback(feedback),))

    # -- handlers ------------------------------------------------------------

    def handle_call(self, call: wire.CommandCall) -> None:
        if call.name == "Document.define_command":
            self.store.define_command(int(call.args[0]), call.args[-1])
        elif call.name == "Document.update":
            self.handle_update(int(call.args[0]), int(call.args[1]), call.args[2])
        else:
            log.warning("ignoring unknown protocol function %r", call.name)

    def handle_update(self, old_version_id: int, new_version_id: int, edits_arg: str) -> None:
        node_ops = [
            (node, [EditOp(a, b) for a, b in pairs])
            for node, pairs in wire.decode_update_arg(edits_arg)
        ]
        assignment, insertions = self.store.update(old_version_id, new_version_id, node_ops)
        header, body = wire.encode_function_message(
            wire.encode_assign_update(
                assignment.version_id, [(cmd, list(execs)) for cmd, execs in assignment.entries]
            )
        )
        # the assignment must be on its way before the scheduler can emit
        # feedback carrying any of the fresh exec ids
        self._outbound.put((header, body))
        for insertion in insertions:
            commands = [
                (exec_id, command_id, self.store.lookup(command_id))
                for exec_id, command_id in insertion.new_commands
            ]
            self.machine.insert_after(insertion.last_common, commands)
            if self.config.auto_observe and insertion.spine:
                self.machine.observe(insertion.spine[-1])

    def await_quiescent(self, timeout: float = 30.0) -> bool:
        return self.machine.await_quiescent(timeout)
