"""Compact transfer syntax for XML trees, built on two reserved control bytes.

An element is framed as ``X Y name (Y key=value)* X  body  X Y X`` with
X = 0x05 and Y = 0x06; text passes through verbatim.  Reserved bytes are
forbidden in names, keys, values and text (no escaping scheme exists), so
any well-formed payload splits unambiguously on X.
"""

from __future__ import annotations

from dataclasses import dataclass

X = "\x05"
Y = "\x06"
_RESERVED = (X, Y)


class YxmlError(Exception):
    """Base class for transfer-syntax failures."""


class ReservedByteInContent(YxmlError):
    """A name, key, value or text node contains byte 0x05 or 0x06."""


class UnbalancedMarkers(YxmlError):
    """End marker without a matching start, stray marker byte, or unclosed element."""


class MalformedAttribute(YxmlError):
    """Attribute chunk without '=', empty key, or duplicate key."""


@dataclass(frozen=True)
class Element:
    name: str
    attributes: tuple[tuple[str, str], ...] = ()
    children: tuple["XmlTree", ...] = ()

    def attribute(self, key: str) -> str | None:
        for k, v in self.attributes:
            if k == key:
                return v
        return None


@dataclass(frozen=True)
class Text:
    content: str


XmlTree = Element | Text


def elem(name: str, attributes=(), children=()) -> Element:
    """Element constructor that tuples up whatever iterables it is given."""
    return Element(name, tuple((k, v) for k, v in attributes), tuple(children))


def text_of(trees: list[XmlTree] | tuple[XmlTree, ...]) -> str:
    """Concatenated text content of a tree list, ignoring markup structure."""
    out: list[str] = []

    def walk(t: XmlTree) -> None:
        if isinstance(t, Text):
            out.append(t.content)
        else:
            for c in t.children:
                walk(c)

    for t in trees:
        walk(t)
    return "".join(out)


def _check_atom(s: str, what: str) -> None:
    if X in s or Y in s:
        raise ReservedByteInContent(f"reserved byte in {what}: {s!r}")


def encode(trees: list[XmlTree] | tuple[XmlTree, ...]) -> bytes:
    """Serialize a list of trees to transfer-syntax bytes (UTF-8)."""
    parts: list[str] = []

    def emit(t: XmlTree) -> None:
        if isinstance(t, Text):
            _check_atom(t.content, "text")
            parts.append(t.content)
            return
        if not t.name:
            raise ValueError("element name must be non-empty")
        _check_atom(t.name, "element name")
        seen = set()
        parts.append(X + Y + t.name)
        for k, v in t.attributes:
            if not k or "=" in k:
                raise ValueError(f"bad attribute key: {k!r}")
            _check_atom(k, "attribute key")
            _check_atom(v, "attribute value")
            if k in seen:
                raise ValueError(f"duplicate attribute key: {k!r}")
            seen.add(k)
            parts.append(Y + k + "=" + v)
        parts.append(X)
        for c in t.children:
            emit(c)
        parts.append(X + Y + X)

    for t in trees:
        emit(t)
    return "".join(parts).encode("utf-8")


def decode(payload: bytes) -> list[XmlTree]:
    """Parse transfer-syntax bytes back into a list of trees.

    Inverse of :func:`encode` on its image; adjacent text runs cannot occur
    there, so every text segment becomes exactly one Text node.
    """
    segments = payload.decode("utf-8").split(X)
    # Stack of (pending element header, accumulated children); top level last.
    stack: list[tuple[tuple[str, tuple[tuple[str, str], ...]] | None, list[XmlTree]]] = [
        (None, [])
    ]
    after_marker = False  # text is only legal at the start or right after a marker
    for idx, seg in enumerate(segments):
        if idx == 0:
            if seg:
                stack[-1][1].append(Text(seg))
            continue
        if seg.startswith(Y):
            after_marker = True
            if seg == Y:
                if len(stack) == 1:
                    raise UnbalancedMarkers("end marker without matching start")
                (header, children) = stack.pop()
                assert header is not None
                name, attrs = header
                stack[-1][1].append(Element(name, attrs, tuple(children)))
                continue
            chunks = seg.split(Y)
            name = chunks[1]
            if not name:
                raise UnbalancedMarkers("start marker with empty element name")
            attrs: list[tuple[str, str]] = []
            seen: set[str] = set()
            for chunk in chunks[2:]:
                key, eq, value = chunk.partition("=")
                if not eq or not key:
                    raise MalformedAttribute(f"attribute chunk without key=value: {chunk!r}")
                if key in seen:
                    raise MalformedAttribute(f"duplicate attribute key: {key!r}")
                seen.add(key)
                attrs.append((key, value))
            stack.append(((name, tuple(attrs)), []))
        else:
            if not after_marker:
                raise UnbalancedMarkers("stray marker byte before text")
            after_marker = False
            if seg:
                stack[-1][1].append(Text(seg))
    if len(stack) != 1:
        raise UnbalancedMarkers(f"{len(stack) - 1} element(s) unclosed at end of input")
    return stack[0][1]


def pretty(trees: list[XmlTree] | tuple[XmlTree, ...], indent: int = 0) -> str:
    """Angle-bracket rendering for traces and debugging (not parseable back)."""
    pad = "  " * indent
    lines: list[str] = []
    for t in trees:
        if isinstance(t, Text):
            lines.append(pad + t.content.replace("\n", "\\n"))
            continue
        attrs = "".join(f' {k}="{v}"' for k, v in t.attributes)
        if not t.children:
            lines.append(f"{pad}<{t.name}{attrs}/>")
        else:
            lines.append(f"{pad}<{t.name}{attrs}>")
            lines.append(pretty(t.children, indent + 1))
            lines.append(f"{pad}</{t.name}>")
    return "\n".join(lines)
