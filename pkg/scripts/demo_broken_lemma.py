#!/usr/bin/env python3
"""Run the broken-lemma scenario in-process and print what the editor sees.

The Qed of the first lemma fails, yet the Check after it still resolves
the lemma's statement and links back to the definition site.
"""

import json

from asyncdoc.cli import run_script
from asyncdoc.document import EngineConfig

STEPS = [
    {"insert": {"offset": 0, "text": "Lemma app_assoc : 1 = 2.\nProof.\nQed.\nCheck app_assoc.\n"}},
    {"await_quiescent": {}},
    {"query": {"offset": 40}},
]


def main() -> None:
    report = run_script(STEPS, config=EngineConfig(deterministic=True))
    for span in report["spans"]:
        flag = {"done": "ok", "failed": "ERR", "pending": ".."}[span["status"]]
        print(f"[{flag}] {span['text'].strip()!r}  exec={span['exec_id']}")
        for err in span["errors"]:
            print(f"      squiggle {err['start']}..{err['end']}: {err['message']}")
        for link in span["links"]:
            print(f"      link {link['name']!r} -> buffer[{link['def_start']}:{link['def_end']}]")
        if span["states"]:
            print(f"      state: {span['states'][-1]!r}")
    print()
    print("cursor query:", json.dumps(report["queries"][0], indent=2))


if __name__ == "__main__":
    main()
