"""Pure-Python wire kernel. Behaviour must match ``_wirecore.pyx`` exactly."""

from __future__ import annotations

from .errors import (
    BadEscape,
    MalformedFraming,
    MalformedHeaderLine,
    MalformedStartLine,
    PayloadTooLarge,
)

MAX_PAYLOAD = 4096

_TCHAR = frozenset(
    b"!#$%&'*+-.^_`|~0123456789"
    b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz"
)


def is_token(name: bytes) -> bool:
    return bool(name) and all(c in _TCHAR for c in name)


def split_head(raw: bytes) -> tuple[bytes, list[tuple[bytes, bytes]], bytes]:
    """Split an HTTP-style message into start line, header pairs and body.

    Header values have surrounding spaces/tabs removed; names are returned
    verbatim (case preserved).
    """
    if len(raw) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"{len(raw)} > {MAX_PAYLOAD} bytes")
    end = raw.find(b"\r\n\r\n")
    if end < 0:
        raise MalformedFraming("missing CRLF CRLF terminator")
    lines = raw[:end].split(b"\r\n")
    start = lines[0]
    if not start or b"\r" in start or b"\n" in start:
        raise MalformedStartLine(repr(start[:64]))
    headers = []
    for line in lines[1:]:
        if b"\r" in line or b"\n" in line:
            raise MalformedHeaderLine("bare CR or LF in header line")
        colon = line.find(b":")
        if colon <= 0 or not is_token(line[:colon]):
            raise MalformedHeaderLine(repr(line[:64]))
        headers.append((line[:colon], line[colon + 1 :].strip(b" \t")))
    return start, headers, raw[end + 4 :]


def join_head(start: bytes, headers: list[tuple[bytes, bytes]]) -> bytes:
    parts = [start, b"\r\n"]
    for name, value in headers:
        parts.append(name)
        parts.append(b": " + value if value else b":")
        parts.append(b"\r\n")
    parts.append(b"\r\n")
    return b"".join(parts)


def escape_value(value: str) -> str:
    return value.replace("\\", "\\\\").replace("\n", "\\n").replace("=", "\\=")


_UNESCAPE = {"\\": "\\", "n": "\n", "=": "="}


def unescape_value(text: str) -> str:
    if "\\" not in text:
        if "\n" in text:
            raise BadEscape("raw newline in value")
        return text
    out = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\\":
            if i + 1 >= n:
                raise BadEscape("dangling backslash")
            repl = _UNESCAPE.get(text[i + 1])
            if repl is None:
                raise BadEscape(f"unknown escape \\{text[i + 1]}")
            out.append(repl)
            i += 2
            continue
        if ch == "\n":
            raise BadEscape("raw newline in value")
        out.append(ch)
        i += 1
    return "".join(out)
