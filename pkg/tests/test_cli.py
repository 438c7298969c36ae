import json
import socket
import threading

import pytest

from asyncdoc import cli, wire, yxml
from asyncdoc.document import EngineConfig
from asyncdoc.span_parser import parse_spans

BROKEN_LEMMA_SCRIPT = """
# broken lemma, then a later use of its statement
{"insert": {"offset": 0, "text": "Lemma app_assoc : 1 = 2.\\nProof.\\nQed.\\nCheck app_assoc.\\n"}}
{"await_quiescent": {}}
{"query": {"offset": 40}}
"""


def _write_script(tmp_path, content):
    path = tmp_path / "script.jsonl"
    path.write_text(content, encoding="utf-8")
    return path


class TestScriptParsing:
    def test_parse_ok(self):
        steps = cli.parse_script(BROKEN_LEMMA_SCRIPT)
        assert [next(iter(s)) for s in steps] == ["insert", "await_quiescent", "query"]

    def test_parse_errors(self):
        with pytest.raises(cli.ScriptError):
            cli.parse_script("not json")
        with pytest.raises(cli.ScriptError):
            cli.parse_script('{"insert": {"offset": "x", "text": "y"}}')
        with pytest.raises(cli.ScriptError):
            cli.parse_script('{"frobnicate": {}}')

    def test_exit_code_2_on_bad_script(self, tmp_path, capsys):
        path = _write_script(tmp_path, "{broken")
        assert cli.main(["run", str(path)]) == cli.EXIT_SCRIPT_ERROR

    def test_exit_code_3_on_transport_failure(self, tmp_path):
        path = _write_script(tmp_path, '{"await_quiescent": {}}')
        assert cli.main(["run", str(path), "--connect", "127.0.0.1:1"]) == cli.EXIT_TRANSPORT_ERROR


class TestRun:
    def test_empty_script(self, tmp_path, capsys):
        path = _write_script(tmp_path, "\n# nothing\n")
        assert cli.main(["run", str(path), "--deterministic"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["spans"] == [] and report["queries"] == []

    def test_broken_lemma_scenario_report(self, tmp_path, capsys):
        path = _write_script(tmp_path, BROKEN_LEMMA_SCRIPT)
        assert cli.main(["run", str(path), "--deterministic"]) == 0
        report = json.loads(capsys.readouterr().out)
        by_text = {s["text"].strip(): s for s in report["spans"]}
        qed = by_text["Qed."]
        assert qed["status"] == "failed"
        assert qed["errors"][0]["message"] == "Error: Attempt to save an incomplete proof"
        check = by_text["Check app_assoc."]
        assert check["status"] == "done"
        assert check["states"][-1] == "app_assoc : 1 = 2"
        assert check["links"][0]["name"] == "app_assoc"
        assert check["links"][0]["def_offset"] == 7
        assert check["links"][0]["def_end_offset"] == 16
        [query] = report["queries"]
        assert query["state_text"] == "app_assoc : 1 = 2"

    def test_report_spans_equal_independent_reparse(self, tmp_path, capsys):
        script = (
            '{"insert": {"offset": 0, "text": "Definition a := 1. Definition b := 2."}}\n'
            '{"remove": {"offset": 0, "length": 10}}\n'
            '{"await_quiescent": {}}\n'
        )
        path = _write_script(tmp_path, script)
        assert cli.main(["run", str(path), "--deterministic"]) == 0
        report = json.loads(capsys.readouterr().out)
        expected = "Definition a := 1. Definition b := 2."
        expected = expected[10:]
        assert report["buffer"] == expected
        assert [s["text"] for s in report["spans"]] == [s.text for s in parse_spans(expected)]

    def test_deterministic_runs_are_byte_identical(self, tmp_path, capsys):
        script = (
            '{"insert": {"offset": 0, "text": "Definition a := 1.\\nLemma t : a = 1.\\nProof.\\nreflexivity.\\nQed.\\nCheck t.\\n"}}\n'
            '{"await_quiescent": {}}\n'
            '{"query": {"offset": 0}}\n'
        )
        path = _write_script(tmp_path, script)
        outputs = []
        for _ in range(3):
            assert cli.main(["run", str(path), "--deterministic"]) == 0
            outputs.append(capsys.readouterr().out)
        assert outputs[0] == outputs[1] == outputs[2]


class TestTrace:
    def test_trace_records_roundtrip_and_order(self, tmp_path, capsys):
        trace_path = tmp_path / "trace.jsonl"
        script = _write_script(
            tmp_path,
            '{"insert": {"offset": 0, "text": "Definition a := 1.\\n"}}\n{"await_quiescent": {}}\n',
        )
        assert cli.main(["run", str(script), "--deterministic", "--trace", str(trace_path)]) == 0
        records = [json.loads(line) for line in trace_path.read_text().splitlines()]
        assert records, "trace file is empty"
        # every chunk decodes losslessly through the yxml decoder
        roots = []
        for rec in records:
            raw = rec["raw"].encode("latin-1")
            assert len(raw) == rec["bytes"]
            trees = yxml.decode(raw)
            roots.append((rec["dir"], [t.name for t in trees]))
        e2p = [names for d, names in roots if d == "editor->prover"]
        p2e = [names for d, names in roots if d == "prover->editor"]
        assert e2p == [["prover_command"], ["prover_command"]]  # define before update
        deco = [
            wire.decode_command_call(r["raw"].encode("latin-1")).name
            for r in records
            if r["dir"] == "editor->prover"
        ]
        assert deco == ["Document.define_command", "Document.update"]
        # assign_update (header + body) precedes all feedback
        assert p2e[0] == ["protocol"]
        assert all(name == ":" for name in p2e[1])  # the pair-structured body
        for names in p2e[2:]:
            assert names[0] in ("writeln", "error", "report")


class TestTcpProver:
    def test_run_against_tcp_prover(self, tmp_path, capsys):
        server = cli.serve_prover("127.0.0.1", 0, EngineConfig(deterministic=True))
        port = server.server_address[1]
        try:
            script = _write_script(
                tmp_path,
                '{"insert": {"offset": 0, "text": "Definition a := 1.\\nCheck a.\\n"}}\n'
                '{"await_quiescent": {}}\n',
            )
            assert cli.main(["run", str(script), "--connect", f"127.0.0.1:{port}"]) == 0
            report = json.loads(capsys.readouterr().out)
            assert [s["status"] for s in report["spans"]] == ["done", "done"]
        finally:
            server.shutdown()
            server.server_close()


class TestServe:
    @pytest.fixture
    def client(self):
        from fastapi.testclient import TestClient

        app = cli.build_app(EngineConfig(deterministic=True))
        with TestClient(app) as client:
            yield client

    def _edit(self, ws, text, offset=0):
        ws.send_text(json.dumps({"edit": {"insert": {"offset": offset, "text": text}}}))

    def _await_event(self, ws, key, want=None, tries=400):
        for _ in range(tries):
            event = json.loads(ws.receive_text())
            if key in event and (want is None or want(event[key])):
                return event[key]
        raise AssertionError(f"no matching {key} event received")

    def test_connect_edit_receive_markup(self, client):
        with client.websocket_connect("/ws") as ws:
            self._edit(ws, "Definition a := 1.\n")
            self._await_event(
                ws,
                "spans",
                lambda s: s["buffer"] == "Definition a := 1.\n"
                and s["spans"]
                and s["spans"][0]["status"] == "done",
            )
            ws.send_text(json.dumps({"query": {"offset": 0}}))
            markup = self._await_event(ws, "markup")
            assert markup["state_text"] == "a is defined"

    def test_two_clients_are_isolated(self, client):
        with client.websocket_connect("/ws") as a, client.websocket_connect("/ws") as b:
            self._edit(a, "Definition a := 1.\n")
            self._await_event(a, "spans", lambda s: s["buffer"].startswith("Definition a"))
            self._edit(b, "Definition b := 2.\n")
            self._await_event(b, "spans", lambda s: s["buffer"] == "Definition b := 2.\n")
            # a's buffer is untouched by b's edit
            a.send_text(json.dumps({"query": {"offset": 0}}))
            markup = self._await_event(a, "markup")
            assert markup["span"] == [0, len("Definition a := 1.\n")]

    def test_trace_events_stream(self, client):
        with client.websocket_connect("/ws") as ws:
            self._edit(ws, "Definition a := 1.\n")
            trace = self._await_event(ws, "trace")
            assert trace["dir"] in ("editor->prover", "prover->editor")
            assert trace["bytes"] == len(trace["raw"].encode("latin-1"))
