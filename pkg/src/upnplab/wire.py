"""On-the-wire forms: SSDP datagrams, HTTP-style exchanges, canonical trees.

Framing is ``<start-line>\\r\\n(<Name>: <value>\\r\\n)*\\r\\n`` for both SSDP and
HTTP. Header order and name case are preserved so that serializing a parsed
message reproduces the original bytes; names compare case-insensitively.

The canonical tree encoding is one ``path=value`` line per scalar leaf, keys
sorted by code point, nesting joined with ``/`` and list elements addressed
as ``#<index>``. It is both the document body format and the signing input.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable
from urllib.parse import urlsplit

from . import _kernel
from .errors import (
    BadKey,
    DocumentError,
    DuplicateHeader,
    DuplicateKey,
    InvariantViolation,
    LengthMismatch,
    MalformedFraming,
    MalformedHeaderValue,
    MalformedLine,
    MalformedStartLine,
    MissingRequiredHeader,
    NonScalarLeaf,
    NonUtf8Header,
    WireError,
)

MAX_PAYLOAD = _kernel.MAX_PAYLOAD
SSDP_GROUP = "239.255.255.250"
SSDP_PORT = 1900
SSDP_HOST = f"{SSDP_GROUP}:{SSDP_PORT}"
CAPTOKEN_HEADER = "X-CAPTOKEN"

Headers = tuple[tuple[str, str], ...]


def _decode_headers(pairs: list[tuple[bytes, bytes]]) -> Headers:
    out = []
    for name, value in pairs:
        try:
            out.append((name.decode("ascii"), value.decode("utf-8")))
        except UnicodeDecodeError as exc:
            raise NonUtf8Header(repr(name)) from exc
    return tuple(out)


def _encode_headers(headers: Headers) -> list[tuple[bytes, bytes]]:
    out = []
    for name, value in headers:
        if not isinstance(name, str) or not isinstance(value, str):
            raise InvariantViolation(f"header {name!r} is not a str pair")
        try:
            raw_name = name.encode("ascii")
            raw_value = value.encode("utf-8")
        except UnicodeEncodeError as exc:
            raise InvariantViolation(f"header {name!r} is not encodable") from exc
        if not _kernel.is_token(raw_name):
            raise InvariantViolation(f"header name {name!r} is not a token")
        if "\r" in value or "\n" in value or value != value.strip(" \t"):
            raise InvariantViolation(f"header {name} value is not framable")
        out.append((raw_name, raw_value))
    return out


def _lookup(headers: Headers, name: str) -> str | None:
    wanted = name.upper()
    for key, value in headers:
        if key.upper() == wanted:
            return value
    return None


def _check_duplicates(headers: Headers, well_known: frozenset[str]) -> None:
    seen = set()
    for key, _ in headers:
        upper = key.upper()
        if upper in well_known:
            if upper in seen:
                raise DuplicateHeader(upper)
            seen.add(upper)


_DIGITS = re.compile(r"[0-9]{1,9}")


def _int_header(headers: Headers, name: str) -> int | None:
    value = _lookup(headers, name)
    if value is None:
        return None
    if not _DIGITS.fullmatch(value):
        raise MalformedHeaderValue(name, value)
    return int(value)


# ---------------------------------------------------------------------------
# SSDP
# ---------------------------------------------------------------------------


class SsdpKind(enum.Enum):
    NOTIFY = "NOTIFY * HTTP/1.1"
    MSEARCH = "M-SEARCH * HTTP/1.1"
    MSEARCH_RESPONSE = "HTTP/1.1 200 OK"

    @property
    def start_line(self) -> bytes:
        return self.value.encode("ascii")


_START_LINES = {kind.start_line: kind for kind in SsdpKind}

REQUIRED_SSDP = {
    SsdpKind.NOTIFY: ("NT", "USN", "LOCATION"),
    SsdpKind.MSEARCH: ("ST", "MAN", "MX", "HOST"),
    SsdpKind.MSEARCH_RESPONSE: ("ST", "USN", "LOCATION"),
}

SSDP_WELL_KNOWN = frozenset(
    {"HOST", "NT", "NTS", "ST", "USN", "LOCATION", "CACHE-CONTROL", "MX", "MAN", "SERVER", "EXT", CAPTOKEN_HEADER}
)

_MAX_AGE = re.compile(r"max-age\s*=\s*([0-9]{1,9})", re.IGNORECASE)


def _validate_ssdp(kind: SsdpKind, headers: Headers) -> None:
    _check_duplicates(headers, SSDP_WELL_KNOWN)
    for name in REQUIRED_SSDP[kind]:
        if _lookup(headers, name) is None:
            raise MissingRequiredHeader(name)
    if kind is SsdpKind.MSEARCH:
        _int_header(headers, "MX")
        man = _lookup(headers, "MAN")
        if man != '"ssdp:discover"':
            raise MalformedHeaderValue("MAN", man or "")
    cc = _lookup(headers, "CACHE-CONTROL")
    if cc is not None and not _MAX_AGE.fullmatch(cc):
        raise MalformedHeaderValue("CACHE-CONTROL", cc)


@dataclass(frozen=True)
class SsdpMessage:
    """A discovery or advertisement datagram."""

    kind: SsdpKind
    headers: Headers = ()

    def header(self, name: str) -> str | None:
        return _lookup(self.headers, name)

    @property
    def nt(self) -> str | None:
        return self.header("NT")

    @property
    def st(self) -> str | None:
        return self.header("ST")

    @property
    def usn(self) -> str | None:
        return self.header("USN")

    @property
    def location(self) -> str | None:
        return self.header("LOCATION")

    @property
    def host(self) -> str | None:
        return self.header("HOST")

    @property
    def mx(self) -> int | None:
        return _int_header(self.headers, "MX")

    @property
    def cache_control(self) -> int | None:
        value = self.header("CACHE-CONTROL")
        if value is None:
            return None
        match = _MAX_AGE.fullmatch(value)
        return int(match.group(1)) if match else None

    @property
    def captoken(self) -> str | None:
        return self.header(CAPTOKEN_HEADER)

    def with_header(self, name: str, value: str) -> "SsdpMessage":
        """Replace the first header called ``name`` or append it."""
        return SsdpMessage(self.kind, _with_header(self.headers, name, value))

    @classmethod
    def notify(cls, nt: str, usn: str, location: str, *, max_age: int = 1800, extra: Iterable[tuple[str, str]] = ()) -> "SsdpMessage":
        return cls(
            SsdpKind.NOTIFY,
            (
                ("HOST", SSDP_HOST),
                ("CACHE-CONTROL", f"max-age={max_age}"),
                ("LOCATION", location),
                ("NT", nt),
                ("NTS", "ssdp:alive"),
                ("SERVER", "upnplab/0.1 UPnP/1.1"),
                ("USN", usn),
                *extra,
            ),
        )

    @classmethod
    def msearch(cls, st: str, mx: int = 2, *, extra: Iterable[tuple[str, str]] = ()) -> "SsdpMessage":
        return cls(
            SsdpKind.MSEARCH,
            (("HOST", SSDP_HOST), ("MAN", '"ssdp:discover"'), ("MX", str(mx)), ("ST", st), *extra),
        )

    @classmethod
    def response(cls, st: str, usn: str, location: str, *, max_age: int = 1800, extra: Iterable[tuple[str, str]] = ()) -> "SsdpMessage":
        return cls(
            SsdpKind.MSEARCH_RESPONSE,
            (
                ("CACHE-CONTROL", f"max-age={max_age}"),
                ("EXT", ""),
                ("LOCATION", location),
                ("SERVER", "upnplab/0.1 UPnP/1.1"),
                ("ST", st),
                ("USN", usn),
                *extra,
            ),
        )


def _with_header(headers: Headers, name: str, value: str) -> Headers:
    upper = name.upper()
    out = list(headers)
    for i, (key, _) in enumerate(out):
        if key.upper() == upper:
            out[i] = (key, value)
            return tuple(out)
    out.append((name, value))
    return tuple(out)


def parse_ssdp(raw: bytes) -> SsdpMessage:
    start, pairs, body = _kernel.split_head(raw)
    if body:
        raise MalformedFraming("trailing bytes after SSDP head")
    kind = _START_LINES.get(start)
    if kind is None:
        raise MalformedStartLine(repr(start[:64]))
    headers = _decode_headers(pairs)
    _validate_ssdp(kind, headers)
    return SsdpMessage(kind, headers)


def serialize_ssdp(msg: SsdpMessage) -> bytes:
    try:
        _validate_ssdp(msg.kind, msg.headers)
    except WireError as exc:
        raise InvariantViolation(str(exc)) from exc
    raw = _kernel.join_head(msg.kind.start_line, _encode_headers(msg.headers))
    if len(raw) > MAX_PAYLOAD:
        raise InvariantViolation(f"datagram is {len(raw)} bytes, cap is {MAX_PAYLOAD}")
    return raw


def pad_ssdp(msg: SsdpMessage, size: int, name: str = "X-PAD") -> SsdpMessage:
    """Append a filler header so the serialized datagram is exactly ``size`` bytes."""
    gap = size - len(serialize_ssdp(msg))
    if gap == 0:
        return msg
    if gap >= len(name) + 5:  # "NAME: x...\r\n"
        return SsdpMessage(msg.kind, msg.headers + ((name, "x" * (gap - len(name) - 4)),))
    if gap >= 4:  # "N:\r\n" with the name trimmed or stretched to fit
        filler = (name + "X" * gap)[: gap - 3]
        return SsdpMessage(msg.kind, msg.headers + ((filler, ""),))
    raise ValueError(f"cannot pad a {size - gap}-byte datagram to {size} bytes")


# ---------------------------------------------------------------------------
# HTTP
# ---------------------------------------------------------------------------


class Direction(enum.Enum):
    REQUEST = "request"
    RESPONSE = "response"


HTTP_WELL_KNOWN = frozenset(
    {"HOST", "CALLBACK", "SID", "TIMEOUT", "CONTENT-LENGTH", "CONTENT-TYPE", "NT", "NTS", "SEQ", CAPTOKEN_HEADER}
)

_VERSIONS = ("HTTP/1.0", "HTTP/1.1")
_STATUS_LINE = re.compile(r"(HTTP/1\.[01]) ([1-9][0-9]{2}) ([^\r\n]*)")
_REQUEST_LINE = re.compile(r"([A-Z][A-Z-]*) (\S+) (HTTP/1\.[01])")
_CALLBACK = re.compile(r"(?:<([^<>\s]+)>)+")
_CALLBACK_URL = re.compile(r"<([^<>\s]+)>")
_TIMEOUT = re.compile(r"Second-([0-9]{1,9}|infinite)")

REASONS = {
    200: "OK",
    400: "Bad Request",
    403: "Forbidden",
    404: "Not Found",
    405: "Method Not Allowed",
    412: "Precondition Failed",
    500: "Internal Server Error",
}


@dataclass(frozen=True)
class HttpExchange:
    """One HTTP request or response (description fetch, control, eventing)."""

    direction: Direction
    method_or_status: str
    path: str = ""
    headers: Headers = ()
    body: bytes = b""
    reason: str = ""
    version: str = "HTTP/1.1"

    @property
    def is_request(self) -> bool:
        return self.direction is Direction.REQUEST

    @property
    def method(self) -> str:
        return self.method_or_status if self.is_request else ""

    @property
    def status(self) -> int:
        return int(self.method_or_status) if not self.is_request else 0

    def header(self, name: str) -> str | None:
        return _lookup(self.headers, name)

    @property
    def callback(self) -> str | None:
        """First URL of the CALLBACK header, without angle brackets."""
        value = self.header("CALLBACK")
        if value is None:
            return None
        match = _CALLBACK_URL.search(value)
        return match.group(1) if match else None

    @property
    def sid(self) -> str | None:
        return self.header("SID")

    @property
    def timeout(self) -> int | None:
        value = self.header("TIMEOUT")
        if value is None:
            return None
        match = _TIMEOUT.fullmatch(value)
        if not match or match.group(1) == "infinite":
            return None
        return int(match.group(1))

    @property
    def content_length(self) -> int | None:
        return _int_header(self.headers, "CONTENT-LENGTH")

    @property
    def captoken(self) -> str | None:
        return self.header(CAPTOKEN_HEADER)

    def with_header(self, name: str, value: str) -> "HttpExchange":
        return _replace_headers(self, _with_header(self.headers, name, value))

    @classmethod
    def request(cls, method: str, path: str, headers: Iterable[tuple[str, str]] = (), body: bytes = b"", *, version: str = "HTTP/1.1") -> "HttpExchange":
        hdrs = tuple(headers)
        if body or method in ("POST", "NOTIFY"):
            hdrs = _with_header(hdrs, "CONTENT-LENGTH", str(len(body)))
        return cls(Direction.REQUEST, method, path, hdrs, body, version=version)

    @classmethod
    def response(cls, status: int, headers: Iterable[tuple[str, str]] = (), body: bytes = b"", *, reason: str | None = None) -> "HttpExchange":
        hdrs = _with_header(tuple(headers), "CONTENT-LENGTH", str(len(body)))
        return cls(Direction.RESPONSE, str(status), "", hdrs, body, reason=REASONS.get(status, "") if reason is None else reason)


def _replace_headers(x: HttpExchange, headers: Headers) -> HttpExchange:
    return HttpExchange(x.direction, x.method_or_status, x.path, headers, x.body, x.reason, x.version)


def _validate_http(x: HttpExchange) -> None:
    _check_duplicates(x.headers, HTTP_WELL_KNOWN)
    length = _int_header(x.headers, "CONTENT-LENGTH")
    if length is not None and length != len(x.body):
        raise LengthMismatch(f"CONTENT-LENGTH {length} but body has {len(x.body)} bytes")
    if x.is_request and x.method == "SUBSCRIBE":
        callback = _lookup(x.headers, "CALLBACK")
        if callback is None:
            raise MissingRequiredHeader("CALLBACK")
        if not _CALLBACK.fullmatch(callback):
            raise MalformedHeaderValue("CALLBACK", callback)
    if not x.is_request:
        has_sid = _lookup(x.headers, "SID") is not None
        has_timeout = _lookup(x.headers, "TIMEOUT") is not None
        if has_sid and not has_timeout:
            raise MissingRequiredHeader("TIMEOUT")
        if has_timeout and not has_sid:
            raise MissingRequiredHeader("SID")
    timeout = _lookup(x.headers, "TIMEOUT")
    if timeout is not None and not _TIMEOUT.fullmatch(timeout):
        raise MalformedHeaderValue("TIMEOUT", timeout)


def _start_line(x: HttpExchange) -> bytes:
    if x.version not in _VERSIONS:
        raise InvariantViolation(f"unsupported version {x.version!r}")
    if x.is_request:
        line = f"{x.method_or_status} {x.path} {x.version}"
        if not _REQUEST_LINE.fullmatch(line):
            raise InvariantViolation(f"bad request line {line!r}")
    else:
        line = f"{x.version} {x.method_or_status} {x.reason}"
        if not _STATUS_LINE.fullmatch(line):
            raise InvariantViolation(f"bad status line {line!r}")
    try:
        return line.encode("ascii")
    except UnicodeEncodeError as exc:
        raise InvariantViolation("start line is not ASCII") from exc


def parse_http(raw: bytes) -> HttpExchange:
    start, pairs, body = _kernel.split_head(raw)
    try:
        line = start.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedStartLine(repr(start[:64])) from exc
    headers = _decode_headers(pairs)
    if line.startswith("HTTP/"):
        match = _STATUS_LINE.fullmatch(line)
        if not match:
            raise MalformedStartLine(line[:64])
        version, status, reason = match.groups()
        x = HttpExchange(Direction.RESPONSE, status, "", headers, body, reason, version)
    else:
        match = _REQUEST_LINE.fullmatch(line)
        if not match:
            raise MalformedStartLine(line[:64])
        method, path, version = match.groups()
        x = HttpExchange(Direction.REQUEST, method, path, headers, body, "", version)
    _validate_http(x)
    return x


def serialize_http(x: HttpExchange) -> bytes:
    start = _start_line(x)
    try:
        _validate_http(x)
    except WireError as exc:
        raise InvariantViolation(str(exc)) from exc
    raw = _kernel.join_head(start, _encode_headers(x.headers)) + bytes(x.body)
    if len(raw) > MAX_PAYLOAD:
        raise InvariantViolation(f"message is {len(raw)} bytes, cap is {MAX_PAYLOAD}")
    return raw


# ---------------------------------------------------------------------------
# URLs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Url:
    host: str
    port: int
    path: str

    def __str__(self) -> str:
        port = "" if self.port == 80 else f":{self.port}"
        return f"http://{self.host}{port}{self.path}"


def parse_url(url: str) -> Url:
    """Split an ``http://host[:port]/path`` URL; raises ``WireError`` otherwise."""
    try:
        parts = urlsplit(url)
        port = parts.port or 80
    except ValueError as exc:
        raise WireError(f"bad URL {url!r}") from exc
    if parts.scheme != "http" or not parts.hostname:
        raise WireError(f"bad URL {url!r}")
    path = parts.path or "/"
    if parts.query:
        path += "?" + parts.query
    return Url(parts.hostname, port, path)


def resolve_url(base: str, ref: str) -> str:
    """Resolve ``ref`` (absolute URL or absolute path) against ``base``."""
    if ref.startswith("http://"):
        return ref
    b = parse_url(base)
    return str(Url(b.host, b.port, ref if ref.startswith("/") else "/" + ref))


# ---------------------------------------------------------------------------
# Canonical tree encoding
# ---------------------------------------------------------------------------

DocTree = dict  # str -> str | DocTree | list[DocTree]

_FORBIDDEN_KEY_CHARS = frozenset("/=\n\r\\")


def _check_key(key: object) -> str:
    if not isinstance(key, str) or not key or key.startswith("#") or any(c in _FORBIDDEN_KEY_CHARS for c in key):
        raise BadKey(repr(key))
    return key


def _walk(node: dict, prefix: str, out: list[str]) -> None:
    for key in sorted(node, key=_check_key):
        value = node[key]
        path = prefix + key
        if isinstance(value, str):
            out.append(path + "=" + _kernel.escape_value(value))
        elif isinstance(value, dict):
            if not value:
                raise NonScalarLeaf(f"{path}: empty node")
            _walk(value, path + "/", out)
        elif isinstance(value, list):
            if not value:
                raise NonScalarLeaf(f"{path}: empty list")
            for i, child in enumerate(value):
                if not isinstance(child, dict) or not child:
                    raise NonScalarLeaf(f"{path}/#{i}: list elements must be non-empty nodes")
                _walk(child, f"{path}/#{i}/", out)
        else:
            raise NonScalarLeaf(f"{path}: {type(value).__name__}")


def encode_canonical(doc: DocTree) -> bytes:
    if not isinstance(doc, dict):
        raise NonScalarLeaf("root must be a node")
    lines: list[str] = []
    _walk(doc, "", lines)
    if not lines:
        return b""
    try:
        return ("\n".join(lines) + "\n").encode("utf-8")
    except UnicodeEncodeError as exc:
        raise DocumentError("tree contains unencodable text") from exc


class _Seq:
    __slots__ = ("items",)

    def __init__(self) -> None:
        self.items: dict[int, dict] = {}


_INDEX = re.compile(r"#(0|[1-9][0-9]{0,8})")


def _insert(root: dict, path: str, value: str) -> None:
    segs = path.split("/")
    node = root
    j = 0
    while True:
        key = _check_key(segs[j])
        if j == len(segs) - 1:
            if key in node:
                raise DuplicateKey(path)
            node[key] = value
            return
        nxt = segs[j + 1]
        if nxt.startswith("#"):
            match = _INDEX.fullmatch(nxt)
            if not match:
                raise BadKey(nxt)
            seq = node.setdefault(key, _Seq())
            if not isinstance(seq, _Seq):
                raise DuplicateKey(path)
            node = seq.items.setdefault(int(match.group(1)), {})
            j += 2
            if j >= len(segs):
                raise MalformedLine(f"{path}: list element is not a node")
        else:
            child = node.setdefault(key, {})
            if not isinstance(child, dict):
                raise DuplicateKey(path)
            node = child
            j += 1


def _finish(node: dict) -> dict:
    for key, value in node.items():
        if isinstance(value, _Seq):
            if sorted(value.items) != list(range(len(value.items))):
                raise MalformedLine(f"{key}: list indices are not contiguous")
            node[key] = [_finish(value.items[i]) for i in range(len(value.items))]
        elif isinstance(value, dict):
            _finish(value)
    return node


def decode_canonical(raw: bytes) -> DocTree:
    """Inverse of :func:`encode_canonical`. Line order is not significant."""
    if not raw:
        return {}
    try:
        text = bytes(raw).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedLine("not UTF-8") from exc
    if not text.endswith("\n"):
        raise MalformedLine("missing final LF")
    root: dict = {}
    for line in text[:-1].split("\n"):
        path, sep, value = line.partition("=")
        if not sep:
            raise MalformedLine(repr(line[:64]))
        _insert(root, path, _kernel.unescape_value(value))
    return _finish(root)
