#!/usr/bin/env python3
"""Time two independent proof branches across worker counts.

Each branch carries two tactics that sleep 100 ms, so the serial floor is
400 ms and the two-branch floor is 200 ms; the printed table shows where
the scheduler lands between them.
"""

import time

from asyncdoc import miniprover
from asyncdoc.cli import in_process_pair
from asyncdoc.document import EngineConfig
from asyncdoc.span_parser import Insert

TEXT = (
    "Lemma a : 1 = 1.\nProof.\nidtac.\nidtac.\nQed.\n"
    "Lemma b : 2 = 2.\nProof.\nidtac.\nidtac.\nQed.\n"
)


def sleepy(env, state, text, exec_id):
    if text.strip() == "idtac.":
        time.sleep(0.1)
    return miniprover.run_command(env, state, text, exec_id)


def timed(workers: int) -> float:
    session, engine = in_process_pair(EngineConfig(workers=workers), executor=sleepy)
    try:
        start = time.monotonic()
        session.edit_buffer([Insert(0, TEXT)])
        assert session.await_quiescent(timeout=20)
        return time.monotonic() - start
    finally:
        session.close()
        engine.stop()


def main() -> None:
    print("workers  wall-clock")
    for workers in (1, 2, 4):
        print(f"{workers:>7}  {timed(workers) * 1000:7.0f} ms")


if __name__ == "__main__":
    main()
