from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from strategies import doc_trees, http_requests, http_responses, ssdp_messages
from upnplab.errors import (
    BadEscape,
    BadKey,
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
    PayloadTooLarge,
)
from upnplab.wire import (
    HttpExchange,
    SsdpKind,
    SsdpMessage,
    Url,
    decode_canonical,
    encode_canonical,
    pad_ssdp,
    parse_http,
    parse_ssdp,
    parse_url,
    resolve_url,
    serialize_http,
    serialize_ssdp,
)

NOTIFY = (b"NOTIFY * HTTP/1.1\r\nHOST: 239.255.255.250:1900\r\nNT: urn:SecurityCamera\r\n"
          b"USN: uuid:cam::urn:SecurityCamera\r\nLOCATION: http://camera/desc/device\r\n\r\n")
MSEARCH = (b"M-SEARCH * HTTP/1.1\r\nHOST: 239.255.255.250:1900\r\nMAN: \"ssdp:discover\"\r\n"
           b"MX: 2\r\nST: ssdp:all\r\n\r\n")


# -- SSDP -------------------------------------------------------------------


def test_parse_notify(kernel):
    msg = parse_ssdp(NOTIFY)
    assert msg.kind is SsdpKind.NOTIFY
    assert msg.nt == "urn:SecurityCamera"
    assert msg.location == "http://camera/desc/device"
    assert serialize_ssdp(msg) == NOTIFY


def test_header_names_are_case_insensitive():
    msg = parse_ssdp(NOTIFY.replace(b"NT:", b"nt:").replace(b"USN:", b"Usn:"))
    assert msg.nt == "urn:SecurityCamera"
    assert msg.header("usn") == msg.usn


def test_msearch_fields():
    msg = parse_ssdp(MSEARCH)
    assert (msg.kind, msg.st, msg.mx, msg.host) == (SsdpKind.MSEARCH, "ssdp:all", 2, "239.255.255.250:1900")


def test_constructors_round_trip():
    for msg in (SsdpMessage.notify("urn:a", "uuid:x::urn:a", "http://h/d"), SsdpMessage.msearch("urn:a", 3),
                SsdpMessage.response("urn:a", "uuid:x::urn:a", "http://h/d")):
        assert parse_ssdp(serialize_ssdp(msg)) == msg
    assert SsdpMessage.notify("urn:a", "u", "http://h/d", max_age=60).cache_control == 60


@pytest.mark.parametrize("drop", [b"NT", b"USN", b"LOCATION"])
def test_notify_missing_required(drop):
    lines = [line for line in NOTIFY.split(b"\r\n") if not line.startswith(drop + b":")]
    with pytest.raises(MissingRequiredHeader) as exc:
        parse_ssdp(b"\r\n".join(lines))
    assert exc.value.name == drop.decode()


def test_duplicate_well_known_header():
    with pytest.raises(DuplicateHeader):
        parse_ssdp(NOTIFY.replace(b"\r\n\r\n", b"\r\nnt: other\r\n\r\n"))


def test_duplicate_unknown_header_is_kept():
    msg = parse_ssdp(NOTIFY.replace(b"\r\n\r\n", b"\r\nX-A: 1\r\nX-A: 2\r\n\r\n"))
    assert [v for k, v in msg.headers if k == "X-A"] == ["1", "2"]


@pytest.mark.parametrize("raw, error", [
    (NOTIFY.replace(b"NOTIFY *", b"NOTIFY /"), MalformedStartLine),
    (NOTIFY + b"x", MalformedFraming),
    (NOTIFY[:-2], MalformedFraming),
    (MSEARCH.replace(b"MX: 2", b"MX: two"), MalformedHeaderValue),
    (MSEARCH.replace(b'"ssdp:discover"', b"ssdp:discover"), MalformedHeaderValue),
    (NOTIFY.replace(b"\r\n\r\n", b"\r\nCACHE-CONTROL: no-cache\r\n\r\n"), MalformedHeaderValue),
    (NOTIFY.replace(b"urn:SecurityCamera\r\n", b"\xff\r\n", 1), NonUtf8Header),
    (NOTIFY[:-2] + b"X-PAD: " + b"x" * 4096 + b"\r\n\r\n", PayloadTooLarge),
])
def test_ssdp_rejects(raw, error):
    with pytest.raises(error):
        parse_ssdp(raw)


def test_serialize_refuses_invalid_message():
    with pytest.raises(InvariantViolation):
        serialize_ssdp(SsdpMessage(SsdpKind.NOTIFY, (("NT", "a"),)))
    with pytest.raises(InvariantViolation):
        serialize_ssdp(SsdpMessage.notify("a\r\nX: y", "u", "l"))
    with pytest.raises(InvariantViolation):
        serialize_ssdp(SsdpMessage.notify("a", "u", "l", extra=[("X-BIG", "x" * 5000)]))


@pytest.mark.parametrize("extra", range(0, 40))
def test_pad_ssdp_exact(extra):
    msg = SsdpMessage.msearch("ssdp:all")
    base = len(serialize_ssdp(msg))
    if extra in (1, 2, 3):
        with pytest.raises(ValueError):
            pad_ssdp(msg, base + extra)
        return
    padded = pad_ssdp(msg, base + extra)
    raw = serialize_ssdp(padded)
    assert len(raw) == base + extra
    assert parse_ssdp(raw) == padded


@given(ssdp_messages())
def test_ssdp_round_trip(kernel, msg):
    raw = serialize_ssdp(msg)
    parsed = parse_ssdp(raw)
    assert parsed == msg
    assert serialize_ssdp(parsed) == raw


# -- HTTP -------------------------------------------------------------------


def test_subscribe_request_fields():
    req = parse_http(b"SUBSCRIBE /evt HTTP/1.1\r\nHOST: cam\r\nCALLBACK: <http://a/x><http://b/y>\r\n"
                     b"TIMEOUT: Second-300\r\n\r\n")
    assert req.is_request and req.method == "SUBSCRIBE" and req.path == "/evt"
    assert req.callback == "http://a/x"
    assert req.timeout == 300


def test_response_sid_timeout_pairing():
    with pytest.raises(MissingRequiredHeader):
        parse_http(b"HTTP/1.1 200 OK\r\nSID: uuid:1\r\n\r\n")
    with pytest.raises(MissingRequiredHeader):
        parse_http(b"HTTP/1.1 200 OK\r\nTIMEOUT: Second-1\r\n\r\n")
    resp = parse_http(b"HTTP/1.1 200 OK\r\nSID: uuid:1\r\nTIMEOUT: Second-5\r\n\r\n")
    assert (resp.status, resp.sid, resp.timeout) == (200, "uuid:1", 5)


@pytest.mark.parametrize("raw, error", [
    (b"SUBSCRIBE /e HTTP/1.1\r\nHOST: h\r\n\r\n", MissingRequiredHeader),
    (b"SUBSCRIBE /e HTTP/1.1\r\nCALLBACK: http://x\r\n\r\n", MalformedHeaderValue),
    (b"POST /c HTTP/1.1\r\nCONTENT-LENGTH: 5\r\n\r\nabc", LengthMismatch),
    (b"POST /c HTTP/1.1\r\nCONTENT-LENGTH: x\r\n\r\n", MalformedHeaderValue),
    (b"GET /d HTTP/2.0\r\n\r\n", MalformedStartLine),
    (b"HTTP/1.1 99 Odd\r\n\r\n", MalformedStartLine),
    (b"get /d HTTP/1.1\r\n\r\n", MalformedStartLine),
    (b"GET /d HTTP/1.1\r\nSID: a\r\nsid: b\r\n\r\n", DuplicateHeader),
])
def test_http_rejects(raw, error):
    with pytest.raises(error):
        parse_http(raw)


def test_constructors_set_content_length():
    post = HttpExchange.request("POST", "/c", body=b"abc")
    assert post.content_length == 3
    assert HttpExchange.request("GET", "/d").content_length is None
    assert HttpExchange.response(404).content_length == 0
    assert HttpExchange.response(404).reason == "Not Found"


@given(st.one_of(http_requests(), http_responses()))
def test_http_round_trip(kernel, x):
    raw = serialize_http(x)
    parsed = parse_http(raw)
    assert parsed == x
    assert serialize_http(parsed) == raw


# -- URLs -------------------------------------------------------------------


def test_urls():
    assert parse_url("http://cam:8080/a?b=1") == Url("cam", 8080, "/a?b=1")
    assert parse_url("http://cam") == Url("cam", 80, "/")
    assert str(Url("cam", 80, "/x")) == "http://cam/x"
    assert resolve_url("http://cam:81/desc/device", "/ctl") == "http://cam:81/ctl"
    assert resolve_url("http://cam/d", "http://other/x") == "http://other/x"
    for bad in ("ftp://x/", "http:///x", "http://x:99999/"):
        with pytest.raises(Exception):
            parse_url(bad)


# -- canonical trees --------------------------------------------------------


def test_encoding_is_sorted_and_escaped():
    tree = {"b": "x=y\nz", "a": {"k": "\\"}, "l": [{"v": "1"}, {"v": "2"}]}
    assert encode_canonical(tree) == b"a/k=\\\\\nb=x\\=y\\nz\nl/#0/v=1\nl/#1/v=2\n"
    assert decode_canonical(encode_canonical(tree)) == tree


def test_decode_is_order_lenient():
    assert decode_canonical(b"b=2\na=1\n") == {"a": "1", "b": "2"}


def test_empty_tree_is_empty_bytes():
    assert encode_canonical({}) == b""
    assert decode_canonical(b"") == {}


@pytest.mark.parametrize("tree, error", [
    ({"a": {}}, NonScalarLeaf),
    ({"a": []}, NonScalarLeaf),
    ({"a": [{}]}, NonScalarLeaf),
    ({"a": ["x"]}, NonScalarLeaf),
    ({"a": 1}, NonScalarLeaf),
    ({"a/b": "x"}, BadKey),
    ({"a=b": "x"}, BadKey),
    ({"": "x"}, BadKey),
    ({"#0": "x"}, BadKey),
])
def test_encode_rejects(tree, error):
    with pytest.raises(error):
        encode_canonical(tree)


@pytest.mark.parametrize("raw, error", [
    (b"a=1\na=2\n", DuplicateKey),
    (b"a=1\na/b=2\n", DuplicateKey),
    (b"a=1", MalformedLine),
    (b"noequals\n", MalformedLine),
    (b"a=\\q\n", BadEscape),
    (b"l/#1/v=1\n", MalformedLine),
    (b"l/#01/v=1\n", BadKey),
    (b"l/#0=1\n", MalformedLine),
    (b"\xff=1\n", MalformedLine),
])
def test_decode_rejects(raw, error):
    with pytest.raises(error):
        decode_canonical(raw)


@given(doc_trees())
def test_canonical_round_trip(kernel, tree):
    raw = encode_canonical(tree)
    assert decode_canonical(raw) == tree
    assert encode_canonical(decode_canonical(raw)) == raw
