"""Chunked byte channel and the typed message vocabulary of the protocol.

Frames are length-prefixed: ASCII decimal byte count, a newline, then the
payload.  Editor-to-prover traffic is single-chunk command calls; the
prover answers with two-chunk function messages (header, body) and
single-chunk feedback.  Lists, pairs and options inside message bodies use
":" separator elements; tagged variants use numeric element names.
"""

from __future__ import annotations

import socket
from dataclasses import dataclass
from typing import BinaryIO, Callable, Iterable

from . import yxml
from .yxml import Element, Text, XmlTree

MAX_FRAME = 16 * 1024 * 1024

FEEDBACK_KINDS = ("writeln", "error", "report")


class WireError(Exception):
    """Base class for transport and message-shape failures."""


class ChannelClosed(WireError):
    """The peer closed the stream (or it was never open)."""


class MalformedFrame(WireError):
    """Non-digit length header, oversize frame, or EOF mid-payload."""


class UnknownShape(WireError):
    """A decoded chunk does not match any known message shape."""


# --------------------------------------------------------------------------
# channel


@dataclass
class Channel:
    """One direction-pair of ordered, lossless byte streams.

    ``on_read``/``on_write`` observe whole chunks (tracing); the caller is
    responsible for serializing writers.
    """

    reader: BinaryIO
    writer: BinaryIO
    on_read: Callable[[bytes], None] | None = None
    on_write: Callable[[bytes], None] | None = None
    raw: socket.socket | None = None  # lets close() unblock a reader thread

    def write_chunk(self, payload: bytes) -> None:
        try:
            self.writer.write(b"%d\n" % len(payload))
            self.writer.write(payload)
            self.writer.flush()
        except (ValueError, OSError) as exc:
            raise ChannelClosed(str(exc)) from exc
        if self.on_write:
            self.on_write(payload)

    def read_chunk(self) -> bytes:
        header = bytearray()
        while True:
            try:
                b = self.reader.read(1)
            except (ValueError, OSError) as exc:
                raise ChannelClosed(str(exc)) from exc
            if not b:
                if not header:
                    raise ChannelClosed("end of stream")
                raise MalformedFrame("EOF inside frame header")
            if b == b"\n":
                break
            if not b.isdigit():
                raise MalformedFrame(f"non-digit in frame header: {b!r}")
            header += b
            if len(header) > 12:
                raise MalformedFrame("frame header too long")
        if not header:
            raise MalformedFrame("empty frame header")
        size = int(header)
        if size > MAX_FRAME:
            raise MalformedFrame(f"frame of {size} bytes exceeds limit")
        chunks = bytearray()
        while len(chunks) < size:
            try:
                part = self.reader.read(size - len(chunks))
            except (ValueError, OSError) as exc:
                raise ChannelClosed(str(exc)) from exc
            if not part:
                raise MalformedFrame("EOF inside frame payload")
            chunks += part
        payload = bytes(chunks)
        if self.on_read:
            self.on_read(payload)
        return payload

    def close(self) -> None:
        # shutting the socket down first unblocks any thread inside read();
        # closing a makefile directly would wait on that thread's io lock
        if self.raw is not None:
            try:
                self.raw.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        for stream in (self.reader, self.writer):
            try:
                stream.close()
            except OSError:
                pass


def channel_pair() -> tuple[Channel, Channel]:
    """In-process transport: two channels joined back to back."""
    a, b = socket.socketpair()
    return from_socket(a), from_socket(b)


def from_socket(sock: socket.socket) -> Channel:
    return Channel(sock.makefile("rb"), sock.makefile("wb"), raw=sock)


# --------------------------------------------------------------------------
# structure combinators (separator elements named ":", numeric variant tags)


def _node(body: Iterable[XmlTree]) -> Element:
    return Element(":", (), tuple(body))


def enc_string(s: str) -> list[XmlTree]:
    return [Text(s)] if s else []


def enc_int(i: int) -> list[XmlTree]:
    return enc_string(str(i))


def enc_pair(fa, fb):
    def enc(value) -> list[XmlTree]:
        x, y = value
        return [_node(fa(x)), _node(fb(y))]

    return enc


def enc_list(f):
    def enc(values) -> list[XmlTree]:
        return [_node(f(v)) for v in values]

    return enc


def enc_option(f):
    def enc(value) -> list[XmlTree]:
        return [] if value is None else [_node(f(value))]

    return enc


def enc_tagged(tag: int, body: list[XmlTree]) -> list[XmlTree]:
    return [Element(str(tag), (), tuple(body))]


def _expect_node(tree: XmlTree) -> tuple[XmlTree, ...]:
    if not isinstance(tree, Element) or tree.name != ":":
        raise UnknownShape(f"expected ':' separator element, got {tree!r}")
    return tree.children


def dec_string(body: Iterable[XmlTree]) -> str:
    return yxml.text_of(list(body))


def dec_int(body: Iterable[XmlTree]) -> int:
    s = dec_string(body)
    try:
        return int(s)
    except ValueError as exc:
        raise UnknownShape(f"expected integer atom, got {s!r}") from exc


def dec_pair(fa, fb):
    def dec(body):
        items = list(body)
        if len(items) != 2:
            raise UnknownShape(f"expected pair, got {len(items)} nodes")
        return fa(_expect_node(items[0])), fb(_expect_node(items[1]))

    return dec


def dec_list(f):
    def dec(body):
        return [f(_expect_node(item)) for item in body]

    return dec


def dec_option(f):
    def dec(body):
        items = list(body)
        if not items:
            return None
        if len(items) != 1:
            raise UnknownShape("option with more than one node")
        return f(_expect_node(items[0]))

    return dec


def dec_tagged(body: Iterable[XmlTree]) -> tuple[int, tuple[XmlTree, ...]]:
    items = list(body)
    if len(items) != 1 or not isinstance(items[0], Element):
        raise UnknownShape("expected a single tagged element")
    try:
        tag = int(items[0].name)
    except ValueError as exc:
        raise UnknownShape(f"non-numeric variant tag {items[0].name!r}") from exc
    return tag, items[0].children


# --------------------------------------------------------------------------
# messages


@dataclass(frozen=True)
class CommandCall:
    """Editor-to-prover invocation: a named function plus string arguments.

    Arguments may themselves be serialized payloads; they are spliced into
    the enclosing message verbatim, which is exactly how structured
    arguments such as edit lists travel inside one string slot.
    """

    name: str
    args: tuple[str, ...] = ()


@dataclass(frozen=True)
class FunctionMessage:
    """Prover-to-editor message sent as two chunks: header, then body."""

    function: str
    body: tuple[XmlTree, ...] = ()


@dataclass(frozen=True)
class Feedback:
    """Asynchronous prover output tagged with a serial and an execution id."""

    kind: str  # writeln | error | report
    serial: int
    exec_id: int
    content: tuple[XmlTree, ...] = ()
    offset: int | None = None
    end_offset: int | None = None

    @property
    def text(self) -> str:
        return yxml.text_of(self.content)


def _arg_bytes(arg: str) -> bytes:
    raw = arg.encode("utf-8")
    if "\x05" in arg or "\x06" in arg:
        yxml.decode(raw)  # must itself be a well-formed payload to splice
    return raw


def encode_command_call(call: CommandCall) -> bytes:
    if not call.name:
        raise ValueError("command call name must be non-empty")
    if "\x05" in call.name or "\x06" in call.name:
        raise yxml.ReservedByteInContent(f"reserved byte in call name: {call.name!r}")
    end_marker = b"\x05\x06\x05"
    parts = [b"\x05\x06prover_command\x06name=" + call.name.encode("utf-8") + b"\x05"]
    for arg in call.args:
        parts.append(b"\x05\x06prover_arg\x05")
        parts.append(_arg_bytes(arg))
        parts.append(end_marker)
    parts.append(end_marker)
    return b"".join(parts)


def decode_command_call(payload: bytes) -> CommandCall:
    trees = yxml.decode(payload)
    if len(trees) != 1 or not isinstance(trees[0], Element) or trees[0].name != "prover_command":
        raise UnknownShape("chunk is not a prover_command element")
    root = trees[0]
    name = root.attribute("name")
    if not name:
        raise UnknownShape("prover_command without name attribute")
    args = []
    for child in root.children:
        if not isinstance(child, Element) or child.name != "prover_arg":
            raise UnknownShape(f"unexpected child in prover_command: {child!r}")
        args.append(yxml.encode(child.children).decode("utf-8"))
    return CommandCall(name, tuple(args))


def encode_feedback(f: Feedback) -> bytes:
    if f.kind not in FEEDBACK_KINDS:
        raise ValueError(f"unknown feedback kind {f.kind!r}")
    attrs = [("serial", str(f.serial)), ("id", str(f.exec_id))]
    if f.offset is not None:
        attrs.append(("offset", str(f.offset)))
    if f.end_offset is not None:
        attrs.append(("end_offset", str(f.end_offset)))
    return yxml.encode([Element(f.kind, tuple(attrs), f.content)])


def decode_feedback(payload: bytes) -> Feedback:
    trees = yxml.decode(payload)
    if len(trees) != 1 or not isinstance(trees[0], Element):
        raise UnknownShape("feedback chunk must hold one element")
    root = trees[0]
    if root.name not in FEEDBACK_KINDS:
        raise UnknownShape(f"unknown feedback kind {root.name!r}")

    def intattr(key: str) -> int | None:
        raw = root.attribute(key)
        return None if raw is None else int(raw)

    serial, exec_id = intattr("serial"), intattr("id")
    if serial is None or exec_id is None:
        raise UnknownShape("feedback without serial/id attributes")
    return Feedback(root.name, serial, exec_id, root.children, intattr("offset"), intattr("end_offset"))


def encode_function_message(m: FunctionMessage) -> tuple[bytes, bytes]:
    header = yxml.encode([Element("protocol", (("function", m.function),))])
    return header, yxml.encode(m.body)


def decode_function_header(payload: bytes) -> str:
    trees = yxml.decode(payload)
    if (
        len(trees) != 1
        or not isinstance(trees[0], Element)
        or trees[0].name != "protocol"
        or trees[0].attribute("function") is None
    ):
        raise UnknownShape("chunk is not a protocol function header")
    return trees[0].attribute("function")  # type: ignore[return-value]


def classify_chunk(payload: bytes) -> str:
    """Root-element name of a prover-to-editor chunk, for stream dispatch."""
    trees = yxml.decode(payload)
    if len(trees) == 1 and isinstance(trees[0], Element):
        return trees[0].name
    raise UnknownShape("chunk has no single root element")


# --------------------------------------------------------------------------
# protocol payload shapes

# Document.update third argument: list of (node name, tagged edit op list);
# tag 0 is the only operation: a list of (optional id, optional id) pairs.
EDIT_OP_TAG = 0

_enc_op_pairs = enc_list(enc_pair(enc_option(enc_int), enc_option(enc_int)))
_dec_op_pairs = dec_list(dec_pair(dec_option(dec_int), dec_option(dec_int)))


def encode_update_arg(nodes: list[tuple[str, list[tuple[int | None, int | None]]]]) -> str:
    def enc_entry(entry):
        node, ops = entry
        return enc_pair(enc_string, lambda o: enc_tagged(EDIT_OP_TAG, _enc_op_pairs(o)))((node, ops))

    return yxml.encode(enc_list(enc_entry)(nodes)).decode("utf-8")


def decode_update_arg(arg: str) -> list[tuple[str, list[tuple[int | None, int | None]]]]:
    trees = yxml.decode(arg.encode("utf-8"))

    def dec_entry(body):
        node, tagged = dec_pair(dec_string, dec_tagged)(body)
        tag, op_body = tagged
        if tag != EDIT_OP_TAG:
            raise UnknownShape(f"unsupported document operation tag {tag}")
        return node, _dec_op_pairs(op_body)

    return dec_list(dec_entry)(trees)


# assign_update body: (new version id, [(command id, [exec ids])...])
_enc_assign = enc_pair(enc_int, enc_list(enc_pair(enc_int, enc_list(enc_int))))
_dec_assign = dec_pair(dec_int, dec_list(dec_pair(dec_int, dec_list(dec_int))))


def encode_assign_update(version_id: int, entries: list[tuple[int, list[int]]]) -> FunctionMessage:
    return FunctionMessage("assign_update", tuple(_enc_assign((version_id, entries))))


def decode_assign_update(body: Iterable[XmlTree]) -> tuple[int, list[tuple[int, list[int]]]]:
    return _dec_assign(body)
