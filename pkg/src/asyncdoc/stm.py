"""State transaction machine: a DAG of command executions over a worker pool.

Commands line up on a spine in document order.  A lemma statement opens a
proof branch: the commands up to and including the closing ``Qed.`` hang
off the statement, and the spine continues from the statement itself, so
a broken proof never blocks later commands from using the lemma.  Nothing
runs until a node is observed; observation demands the node plus all its
dependencies, and independent branches may run on different workers.

Feedback (one terminal writeln/error per command, plus entity reports)
flows through a single ordered queue; serial numbers are assigned at
enqueue time under the graph lock, which is what makes them strictly
increasing per machine.
"""

from __future__ import annotations

import heapq
import logging
import os
import queue
import threading
import time
from dataclasses import dataclass
from typing import Callable

from . import miniprover
from .wire import Feedback

log = logging.getLogger("asyncdoc.stm")

PENDING = "pending"
RUNNING = "running"
DONE = "done"
FAILED = "failed"

# executor: (env, proof state, command text, exec id) -> (env', state', messages)
Executor = Callable[
    [miniprover.Environment, miniprover.ProofState | None, str, int],
    tuple[miniprover.Environment, miniprover.ProofState | None, list[miniprover.Message]],
]


class UnknownAnchor(Exception):
    """insert_after named an exec id that is not on the spine."""


@dataclass
class Node:
    exec_id: int
    command_id: int
    text: str
    deps: tuple[int, ...] = ()
    sem_pred: int | None = None  # whose result feeds this node
    branch_of: int | None = None  # opening exec id when inside a proof branch
    post_branch: bool = False  # spine node right after a branch: drop the proof state
    status: str = PENDING
    demanded: bool = False
    result: tuple[miniprover.Environment, miniprover.ProofState | None] | None = None
    started: float | None = None
    finished: float | None = None


@dataclass(frozen=True)
class ExecutionEvent:
    exec_id: int
    command_id: int
    started: float
    finished: float
    status: str


def default_workers() -> int:
    return max(os.cpu_count() or 1, 1)


class TransactionMachine:
    """Owns the graph; workers only ever see immutable payloads."""

    def __init__(
        self,
        workers: int | None = None,
        executor: Executor | None = None,
        opener: Callable[[str], bool] = miniprover.is_proof_opener,
        closer: Callable[[str], bool] = miniprover.is_proof_closer,
    ):
        self._workers = workers if workers is not None else default_workers()
        self._executor = executor or miniprover.run_command
        self._opener = opener
        self._closer = closer
        self._cond = threading.Condition()
        self._nodes: dict[int, Node] = {}
        self._spine: list[int] = []
        self._dependents: dict[int, list[int]] = {}
        self._ready: list[tuple[int, int]] = []  # (spine position, exec id)
        self._serial = 0
        self._stopping = False
        self.feedback_queue: "queue.Queue[Feedback | None]" = queue.Queue()
        self._events: list[ExecutionEvent] = []
        self._in_flight = 0
        self._threads = [
            threading.Thread(target=self._worker_loop, name=f"stm-worker-{i}", daemon=True)
            for i in range(self._workers)
        ]
        for t in self._threads:
            t.start()

    # -- graph construction -------------------------------------------------

    def insert_after(self, last_common: int | None, commands: list[tuple[int, int, str]]) -> None:
        """Append (exec id, command id, text) nodes after ``last_common``.

        Everything previously after the anchor is discarded; in-flight work
        on discarded nodes finishes silently and its feedback is dropped.
        Dependency structure is recomputed from the command texts.
        """
        with self._cond:
            if last_common is None:
                cut = 0
            else:
                if last_common not in self._nodes:
                    raise UnknownAnchor(f"exec {last_common} not on the spine")
                cut = self._spine.index(last_common) + 1
            for dead in self._spine[cut:]:
                del self._nodes[dead]
            self._spine = self._spine[:cut]
            for exec_id, command_id, text in commands:
                self._nodes[exec_id] = Node(exec_id, command_id, text)
                self._spine.append(exec_id)
            self._rewire()
            self._cond.notify_all()

    def _rewire(self) -> None:
        """Recompute deps / branch structure for the whole spine (cheap at desk scale)."""
        self._dependents = {e: [] for e in self._spine}
        last_top: int | None = None
        open_branch: tuple[int, int] | None = None  # (opening, last in branch)
        for exec_id in self._spine:
            node = self._nodes[exec_id]
            if open_branch is None:
                node.sem_pred = last_top
                node.deps = (last_top,) if last_top is not None else ()
                node.branch_of = None
                # a top-level predecessor that opened a branch means we just
                # left that branch: continue from the statement, proof closed
                node.post_branch = last_top is not None and self._opener(self._nodes[last_top].text)
                if self._opener(node.text):
                    open_branch = (exec_id, exec_id)
                last_top = exec_id
            else:
                opening, last_in = open_branch
                node.branch_of = opening
                node.sem_pred = last_in
                node.deps = tuple(dict.fromkeys((opening, last_in)))
                node.post_branch = False
                if self._closer(node.text):
                    open_branch = None
                    last_top = opening
                else:
                    open_branch = (opening, exec_id)
            for d in node.deps:
                self._dependents[d].append(exec_id)

    # -- scheduling ----------------------------------------------------------

    def observe(self, target: int) -> None:
        """Demand a node plus everything before it in document order.

        The demand set is a superset of the target's dependency cone, so
        observing the final command computes the whole document, proof
        bodies included; readiness stays dependency-gated, which is what
        lets independent branches run concurrently.
        """
        with self._cond:
            if target not in self._nodes:
                raise UnknownAnchor(f"exec {target} not in the graph")
            idx = self._spine.index(target)
            for exec_id in self._spine[: idx + 1]:
                node = self._nodes[exec_id]
                if node.status not in (DONE, FAILED):
                    node.demanded = True
            self._push_ready()
            self._cond.notify_all()

    def _push_ready(self) -> None:
        position = {e: i for i, e in enumerate(self._spine)}
        for exec_id in self._spine:
            node = self._nodes[exec_id]
            if node.status != PENDING or not node.demanded:
                continue
            if all(self._nodes[d].status in (DONE, FAILED) for d in node.deps):
                if not any(e == exec_id for _, e in self._ready):
                    heapq.heappush(self._ready, (position[exec_id], exec_id))

    def _worker_loop(self) -> None:
        while True:
            with self._cond:
                while not self._ready and not self._stopping:
                    self._cond.wait()
                if self._stopping:
                    return
                _, exec_id = heapq.heappop(self._ready)
                node = self._nodes.get(exec_id)
                if node is None or node.status != PENDING:
                    continue
                node.status = RUNNING
                node.started = time.monotonic()
                self._in_flight += 1
                env, state = self._input_for(node)
                failed_dep = self._failed_branch_dep(node)
                text, nid = node.text, node.exec_id
            if failed_dep is None:
                try:
                    new_env, new_state, messages = self._executor(env, state, text, nid)
                    ok = not any(m.kind == "error" for m in messages)
                except Exception:  # a broken executor must not wedge the pool
                    log.exception("executor crashed on exec %s", nid)
                    new_env, new_state = env, state
                    messages = [miniprover.Message("error", (miniprover.Text("Error: internal failure"),))]
                    ok = False
            else:
                new_env, new_state = env, state
                messages = [
                    miniprover.Message(
                        "error",
                        (miniprover.Text(f"Error: Not executed: depends on failed command (exec {failed_dep})"),),
                    )
                ]
                ok = False
            with self._cond:
                self._in_flight -= 1
                current = self._nodes.get(nid)
                if current is None or current is not node:
                    self._cond.notify_all()
                    continue  # discarded while running: drop everything
                node.result = (new_env, new_state)
                node.status = DONE if ok else FAILED
                node.finished = time.monotonic()
                self._events.append(
                    ExecutionEvent(nid, node.command_id, node.started, node.finished, node.status)
                )
                for message in messages:
                    self._emit(nid, message)
                self._push_ready()
                self._cond.notify_all()

    def _input_for(self, node: Node) -> tuple[miniprover.Environment, miniprover.ProofState | None]:
        if node.sem_pred is None:
            return {}, None
        pred = self._nodes[node.sem_pred]
        assert pred.result is not None, "scheduled before dependency finished"
        env, state = pred.result
        if node.post_branch:
            state = None  # leaving a proof branch closes its goal state
        return env, state

    def _failed_branch_dep(self, node: Node) -> int | None:
        if node.branch_of is None:
            return None
        for dep in sorted(node.deps, key=self._spine.index):
            if self._nodes[dep].status == FAILED:
                return dep
        return None

    def _emit(self, exec_id: int, message: miniprover.Message) -> None:
        self._serial += 1
        self.feedback_queue.put(
            Feedback(
                kind=message.kind,
                serial=self._serial,
                exec_id=exec_id,
                content=message.content,
                offset=message.offset,
                end_offset=message.end_offset,
            )
        )

    # -- inspection ----------------------------------------------------------

    def drain_feedback(self) -> list[Feedback]:
        """Everything currently queued, in emission order (non-blocking)."""
        items: list[Feedback] = []
        while True:
            try:
                item = self.feedback_queue.get_nowait()
            except queue.Empty:
                return items
            if item is not None:
                items.append(item)

    def await_quiescent(self, timeout: float = 30.0) -> bool:
        """Block until no demanded node is pending or running."""
        deadline = time.monotonic() + timeout
        with self._cond:
            while True:
                busy = self._in_flight > 0 or any(
                    n.demanded and n.status in (PENDING, RUNNING) for n in self._nodes.values()
                )
                if not busy:
                    return True
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._cond.wait(timeout=remaining)

    def spine(self) -> list[int]:
        with self._cond:
            return list(self._spine)

    def node_view(self, exec_id: int) -> Node:
        with self._cond:
            return self._nodes[exec_id]

    def dependencies(self, exec_id: int) -> tuple[int, ...]:
        with self._cond:
            return self._nodes[exec_id].deps

    def statuses(self) -> dict[int, str]:
        with self._cond:
            return {e: self._nodes[e].status for e in self._spine}

    def execution_events(self) -> list[ExecutionEvent]:
        with self._cond:
            return list(self._events)

    def shutdown(self) -> None:
        with self._cond:
            self._stopping = True
            self._cond.notify_all()
        for t in self._threads:
            t.join(timeout=2)
        self.feedback_queue.put(None)
