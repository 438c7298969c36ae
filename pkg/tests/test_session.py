import io
import random

import pytest

from asyncdoc import span_parser, wire
from asyncdoc.cli import Tracer, in_process_pair
from asyncdoc.document import DocumentStore, EditOp, EngineConfig
from asyncdoc.session import EditorSession
from asyncdoc.span_parser import Insert, OutOfBounds, Remove
from asyncdoc.wire import Feedback
from asyncdoc.yxml import Text


def _offline_session():
    """Session with a capture-only channel and no reader thread."""
    calls = []
    channel = wire.Channel(reader=io.BytesIO(), writer=io.BytesIO())
    channel.on_write = lambda chunk: calls.append(wire.decode_command_call(chunk))
    return EditorSession(channel, node="foo.v", start_reader=False), calls


def _update_ops(call):
    [(node, ops)] = wire.decode_update_arg(call.args[2])
    return node, ops


class TestEditBuffer:
    def test_typing_two_commands_sends_defines_then_update(self):
        session, calls = _offline_session()
        session.edit_buffer([Insert(0, "Proof.\n  intros l.")])
        assert [c.name for c in calls] == [
            "Document.define_command",
            "Document.define_command",
            "Document.update",
        ]
        assert calls[0].args == ("-1", "", "", "Proof.\n  ")
        assert calls[1].args == ("-2", "", "", "intros l.")
        assert calls[2].args[0] == "0"
        assert calls[2].args[1] == "-1"
        node, ops = _update_ops(calls[2])
        assert node == "foo.v"
        assert ops == [(None, -1), (-1, -2)]

    def test_empty_edit_list_sends_nothing(self):
        session, calls = _offline_session()
        session.edit_buffer([])
        assert calls == []

    def test_noop_edit_sends_nothing(self):
        session, calls = _offline_session()
        session.edit_buffer([Insert(0, "a.")])
        calls.clear()
        session.edit_buffer([Insert(1, "")])
        assert calls == []

    def test_out_of_bounds(self):
        session, _ = _offline_session()
        with pytest.raises(OutOfBounds):
            session.edit_buffer([Insert(5, "x")])

    def test_edit_in_last_span_keeps_prefix_ids(self):
        session, calls = _offline_session()
        session.edit_buffer([Insert(0, "one. two. three.")])
        calls.clear()
        session.edit_buffer([Insert(15, "x")])  # inside "three."
        update = [c for c in calls if c.name == "Document.update"][-1]
        _, ops = _update_ops(update)
        # minimality: nothing before span k-1 is referenced
        assert all(a in (-2, -3, -4) or a is None for a, _ in ops)
        assert ops[0] == (-2, None)

    def test_spans_match_full_reparse_after_random_edits(self):
        rng = random.Random(0x5E55)
        alphabet = list("ab .\n(*)\".") + ["(*", "*)", "one.", " "]
        for _ in range(300):
            session, _ = _offline_session()
            buffer = ""
            for _ in range(rng.randrange(1, 6)):
                if buffer and rng.random() < 0.3:
                    offset = rng.randrange(0, len(buffer))
                    length = rng.randrange(1, min(4, len(buffer) - offset) + 1)
                    buffer = buffer[:offset] + buffer[offset + length :]
                    session.edit_buffer([Remove(offset, length)])
                else:
                    offset = rng.randrange(0, len(buffer) + 1)
                    text = "".join(rng.choice(alphabet) for _ in range(rng.randrange(1, 6)))
                    buffer = buffer[:offset] + text + buffer[offset:]
                    session.edit_buffer([Insert(offset, text)])
            held = [s.text for s in session.snapshot().spans]
            assert held == [s.text for s in span_parser.parse_spans(buffer)]
            assert session.snapshot().buffer == buffer

    def test_echo_freedom_replaying_outbound_reproduces_spans(self):
        rng = random.Random(0xEC0)
        for _ in range(100):
            session, calls = _offline_session()
            buffer = ""
            for _ in range(rng.randrange(1, 5)):
                offset = rng.randrange(0, len(buffer) + 1)
                text = "".join(rng.choice("ab. (*)\n\"") for _ in range(rng.randrange(1, 8)))
                buffer = buffer[:offset] + text + buffer[offset:]
                session.edit_buffer([Insert(offset, text)])
            store = DocumentStore()
            version = 0
            for call in calls:
                if call.name == "Document.define_command":
                    store.define_command(int(call.args[0]), call.args[-1])
                else:
                    node, ops = _update_ops(call)
                    store.update(int(call.args[0]), int(call.args[1]), [(node, [EditOp(a, b) for a, b in ops])])
                    version = int(call.args[1])
            replayed = [(cmd, store.lookup(cmd)) for cmd, _ in store.version(version).node("foo.v")]
            held = [(s.command_id, s.text) for s in session.snapshot().spans]
            assert replayed == held


class TestInbound:
    def test_assign_stored_and_idempotent(self):
        session, calls = _offline_session()
        session.edit_buffer([Insert(0, "a.")])
        session.handle_assign(-1, [(-1, [49])])
        snap = session.snapshot()
        assert snap.spans[0].exec_id == 49
        assert snap.version_id == -1
        session.handle_assign(-1, [(-1, [49])])
        assert session.snapshot().spans[0].exec_id == 49

    def test_assign_for_unknown_version_ignored(self):
        session, _ = _offline_session()
        session.handle_assign(-99, [(-1, [49])])
        assert session.snapshot().version_id == 0

    def test_feedback_for_unknown_exec_is_invisible(self):
        session, _ = _offline_session()
        session.edit_buffer([Insert(0, "a.")])
        session.handle_assign(-1, [(-1, [1])])
        session.accumulate(Feedback("writeln", 1, 777, (Text("ghost"),)))
        result = session.query(0)
        assert result.state_text is None

    def test_markup_store_stays_bounded(self):
        session, _ = _offline_session()
        session.edit_buffer([Insert(0, "a.")])
        for version in range(1, 2000):
            exec_id = version
            session.handle_assign(-version, [(-1, [exec_id])])
            session.accumulate(Feedback("writeln", version, exec_id, (Text(f"s{version}"),)))
            session._pending.add(-(version + 1))  # mimic the next sent update
        assert len(session._markup) <= 2
        assert len(session._assignments) <= 2000  # plus pending bookkeeping only

    def test_stale_feedback_kept_one_cycle(self):
        session, _ = _offline_session()
        session.edit_buffer([Insert(0, "a.")])
        session.handle_assign(-1, [(-1, [1])])
        session.accumulate(Feedback("writeln", 1, 1, (Text("v1 state"),)))
        session.edit_buffer([Insert(1, "x")])  # span changes id, new update pending
        session.handle_assign(-2, [(-2, [2])])
        # old exec 1 is the previous cycle: still retained
        assert 1 in session._markup
        session.edit_buffer([Insert(1, "y")])
        session.handle_assign(-3, [(-3, [3])])
        assert 1 not in session._markup


class TestQuery:
    def _ready_session(self):
        session, _ = _offline_session()
        session.edit_buffer([Insert(0, "Lemma app_assoc : 1 = 1.\nCheck app_assoc.")])
        session.handle_assign(-1, [(-1, [13]), (-2, [16])])
        return session

    def test_fresh_buffer_empty_result(self):
        session, _ = _offline_session()
        result = session.query(0)
        assert result.state_text is None and result.errors == () and result.links == ()

    def test_state_text_is_latest_writeln(self):
        session = self._ready_session()
        session.accumulate(Feedback("writeln", 1, 13, (Text("first"),)))
        session.accumulate(Feedback("writeln", 2, 13, (Text("second"),)))
        assert session.query(0).state_text == "second"

    def test_error_without_offsets_covers_whole_command(self):
        session = self._ready_session()
        session.accumulate(Feedback("error", 1, 13, (Text("Error: boom"),)))
        [err] = session.query(2).errors
        assert (err.start, err.end) == (0, len("Lemma app_assoc : 1 = 1."))

    def test_error_with_offsets_is_narrow(self):
        session = self._ready_session()
        session.accumulate(Feedback("error", 1, 13, (Text("Error: x"),), offset=7, end_offset=16))
        [err] = session.query(0).errors
        assert session.snapshot().buffer[err.start : err.end] == "app_assoc"

    def test_entity_link_translated_to_absolute_offsets(self):
        from asyncdoc.miniprover import entity_report, EnvEntry

        session = self._ready_session()
        env = {"app_assoc": EnvEntry("thm", "1 = 1", None, 13, 7, 16)}
        [report] = entity_report(env, "Check app_assoc.", 16)
        session.accumulate(Feedback("report", 1, 16, report.content, report.offset, report.end_offset))
        cursor = session.snapshot().buffer.index("Check")
        [link] = session.query(cursor).links
        buffer = session.snapshot().buffer
        assert buffer[link.start : link.end] == "app_assoc"
        assert (link.def_offset, link.def_end_offset) == (7, 16)
        assert buffer[link.def_start : link.def_end] == "app_assoc"
        assert link.def_start < buffer.index("\n")  # inside the defining span

    def test_cursor_in_trailing_whitespace_belongs_to_owner(self):
        session, _ = _offline_session()
        session.edit_buffer([Insert(0, "one.   two.")])
        session.handle_assign(-1, [(-1, [1]), (-2, [2])])
        session.accumulate(Feedback("writeln", 1, 1, (Text("s1"),)))
        assert session.query(5).state_text == "s1"  # inside "one.   "
        assert session.query(len("one.   two.")).exec_id == 2  # end of buffer

    def test_error_regions_inside_span_bounds_random(self):
        rng = random.Random(77)
        for _ in range(200):
            session, _ = _offline_session()
            text = " ".join(f"c{i}." for i in range(rng.randrange(1, 5)))
            session.edit_buffer([Insert(0, text)])
            spans = session.snapshot().spans
            session.handle_assign(-1, [(s.command_id, [i + 1]) for i, s in enumerate(spans)])
            for i, span in enumerate(spans):
                if rng.random() < 0.5:
                    length = len(span.text.rstrip())
                    off = rng.randrange(1, length + 1)
                    session.accumulate(
                        Feedback("error", i + 1, i + 1, (Text("Error: x"),), offset=off, end_offset=length + 1)
                    )
                else:
                    session.accumulate(Feedback("error", i + 1, i + 1, (Text("Error: y"),)))
            for span in session.snapshot().spans:
                for err in span.errors:
                    assert span.start <= err.start <= err.end <= span.end


class TestEndToEnd:
    def test_live_roundtrip_with_engine(self):
        session, engine = in_process_pair(EngineConfig(deterministic=True))
        try:
            session.edit_buffer([Insert(0, "Definition a := 2.\nCheck a.")])
            assert session.await_quiescent(timeout=10)
            snap = session.snapshot()
            assert [s.status for s in snap.spans] == ["done", "done"]
            assert snap.spans[0].states[-1] == "a is defined"
            assert snap.spans[1].states[-1] == "a := 2"
            assert snap.spans[1].links
        finally:
            session.close()
            engine.stop()

    def test_unconfirmed_versions_never_queried(self):
        rng = random.Random(9)
        session, engine = in_process_pair(EngineConfig(deterministic=True))
        try:
            for step in range(10):
                session.edit_buffer([Insert(0, f"Definition d{step} := {step}.\n")])
                exec_ids = {
                    s.exec_id for s in session.snapshot().spans if s.exec_id is not None
                }
                confirmed = set()
                for version, table in session._assignments.items():
                    confirmed |= set(table.values())
                assert exec_ids <= confirmed
            assert session.await_quiescent(timeout=10)
        finally:
            session.close()
            engine.stop()
