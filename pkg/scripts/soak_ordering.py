#!/usr/bin/env python3
"""Randomized soak: assignments must always precede the feedback they introduce.

Replays many short random edit sessions against fresh engine pairs with a
contended worker pool and counts ordering violations on the traced wire.
"""

import argparse
import random

from asyncdoc import wire, yxml
from asyncdoc.cli import Tracer, in_process_pair
from asyncdoc.document import EngineConfig
from asyncdoc.span_parser import Insert, Remove

WORDS = ["a.", "b. ", "(* c *) d.", "Definition x := 1.", "idtac.", "..", '"s"']


def one_session(rng: random.Random, workers: int) -> int:
    tracer = Tracer()
    session, engine = in_process_pair(EngineConfig(workers=workers), tracer=tracer)
    try:
        buffer = ""
        for _ in range(rng.randrange(1, 4)):
            if buffer and rng.random() < 0.3:
                offset = rng.randrange(0, len(buffer))
                length = rng.randrange(1, min(5, len(buffer) - offset) + 1)
                session.edit_buffer([Remove(offset, length)])
                buffer = buffer[:offset] + buffer[offset + length :]
            else:
                offset = rng.randrange(0, len(buffer) + 1)
                text = rng.choice(WORDS)
                session.edit_buffer([Insert(offset, text)])
                buffer = buffer[:offset] + text + buffer[offset:]
        session.await_quiescent(timeout=10)
    finally:
        session.close()
        engine.stop()

    known: set[int] = set()
    violations = 0
    expect_body = False
    for rec in tracer.records:
        if rec["dir"] != "prover->editor":
            continue
        raw = rec["raw"].encode("latin-1")
        if expect_body:
            _, entries = wire.decode_assign_update(yxml.decode(raw))
            known.update(e for _, execs in entries for e in execs)
            expect_body = False
            continue
        root = wire.classify_chunk(raw)
        if root == "protocol":
            expect_body = True
        elif root in wire.FEEDBACK_KINDS and wire.decode_feedback(raw).exec_id not in known:
            violations += 1
    return violations


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--rounds", type=int, default=1000)
    parser.add_argument("--workers", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    rng = random.Random(args.seed)
    total = sum(one_session(rng, args.workers) for _ in range(args.rounds))
    print(f"{args.rounds} sessions, {args.workers} workers: {total} ordering violations")
    raise SystemExit(1 if total else 0)


if __name__ == "__main__":
    main()
