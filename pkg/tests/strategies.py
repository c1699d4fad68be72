"""Hypothesis strategies for wire messages and canonical trees."""

from __future__ import annotations

from hypothesis import strategies as st

from upnplab.wire import (
    CAPTOKEN_HEADER,
    HTTP_WELL_KNOWN,
    REASONS,
    SSDP_WELL_KNOWN,
    HttpExchange,
    SsdpKind,
    SsdpMessage,
)

TCHARS = "!#$%&'*+-.^_`|~0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz"

# printable, no CR/LF, no surrounding whitespace; includes non-ASCII
_value_chars = st.characters(blacklist_categories=("Cs", "Cc"), blacklist_characters="\r\n")


@st.composite
def header_values(draw, max_size: int = 40) -> str:
    text = draw(st.text(_value_chars, max_size=max_size))
    return text.strip(" \t")


def nonempty_values(max_size: int = 40):
    return header_values(max_size).filter(bool)


def _case(name: str):
    return st.sampled_from([name, name.lower(), name.title()])


def extra_headers(well_known: frozenset[str], max_count: int = 4):
    names = st.text(st.sampled_from(TCHARS), min_size=1, max_size=12).map(lambda s: "X-" + s).filter(
        lambda n: n.upper() not in well_known)
    return st.lists(st.tuples(names, header_values()), max_size=max_count)


@st.composite
def ssdp_messages(draw, kind: SsdpKind | None = None) -> SsdpMessage:
    kind = kind or draw(st.sampled_from(list(SsdpKind)))
    fields: list[tuple[str, str]] = []
    if kind is SsdpKind.MSEARCH:
        fields += [(draw(_case("HOST")), "239.255.255.250:1900"), (draw(_case("MAN")), '"ssdp:discover"'),
                   (draw(_case("MX")), str(draw(st.integers(0, 120)))), (draw(_case("ST")), draw(nonempty_values()))]
    else:
        key = "NT" if kind is SsdpKind.NOTIFY else "ST"
        fields += [(draw(_case(key)), draw(nonempty_values())), (draw(_case("USN")), draw(nonempty_values())),
                   (draw(_case("LOCATION")), draw(nonempty_values())),
                   ("CACHE-CONTROL", f"max-age={draw(st.integers(0, 86400))}")]
    if draw(st.booleans()):
        fields.append((CAPTOKEN_HEADER, draw(st.text("0123456789abcdef", max_size=200))))
    fields += draw(extra_headers(SSDP_WELL_KNOWN))
    order = draw(st.permutations(range(len(fields))))
    return SsdpMessage(kind, tuple(fields[i] for i in order))


_paths = st.text(st.sampled_from(TCHARS + "/:?="), max_size=20).map(lambda s: "/" + s)


@st.composite
def http_requests(draw) -> HttpExchange:
    method = draw(st.sampled_from(["GET", "POST", "SUBSCRIBE", "NOTIFY", "M-SEARCH"]))
    headers: list[tuple[str, str]] = [("HOST", draw(nonempty_values(20)))]
    if method == "SUBSCRIBE":
        urls = draw(st.lists(st.text(st.sampled_from(TCHARS + "/:."), min_size=1, max_size=20), min_size=1, max_size=3))
        headers.append(("CALLBACK", "".join(f"<{u}>" for u in urls)))
        if draw(st.booleans()):
            headers.append(("TIMEOUT", f"Second-{draw(st.integers(1, 10**6))}"))
    if method == "NOTIFY":
        headers += [("SID", draw(nonempty_values(20))), ("SEQ", str(draw(st.integers(0, 1000))))]
    headers += draw(extra_headers(HTTP_WELL_KNOWN))
    body = draw(st.binary(max_size=200)) if method in ("POST", "NOTIFY") else b""
    version = draw(st.sampled_from(["HTTP/1.0", "HTTP/1.1"]))
    return HttpExchange.request(method, draw(_paths), headers, body, version=version)


@st.composite
def http_responses(draw) -> HttpExchange:
    status = draw(st.sampled_from(sorted(REASONS)))
    headers: list[tuple[str, str]] = []
    if draw(st.booleans()):
        headers += [("SID", draw(nonempty_values(20))), ("TIMEOUT", f"Second-{draw(st.integers(1, 10**6))}")]
    headers += draw(extra_headers(HTTP_WELL_KNOWN))
    return HttpExchange.response(status, headers, draw(st.binary(max_size=200)))


_key_chars = st.characters(blacklist_categories=("Cs",), blacklist_characters="/=\n\r\\")
keys = st.text(_key_chars, min_size=1, max_size=8).filter(lambda k: not k.startswith("#"))
scalars = st.text(st.characters(blacklist_categories=("Cs",)), max_size=20)


def doc_trees(max_leaves: int = 20):
    node = st.recursive(
        st.dictionaries(keys, scalars, min_size=1, max_size=4),
        lambda children: st.dictionaries(
            keys, st.one_of(scalars, children, st.lists(children, min_size=1, max_size=3)), min_size=1, max_size=4),
        max_leaves=max_leaves,
    )
    return node
