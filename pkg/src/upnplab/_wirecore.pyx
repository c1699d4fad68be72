# cython: language_level=3
"""Compiled wire kernel. Behaviour must match ``_wirecore_py`` exactly."""

from cpython.bytes cimport PyBytes_AS_STRING, PyBytes_GET_SIZE

from upnplab.errors import (
    BadEscape,
    MalformedFraming,
    MalformedHeaderLine,
    MalformedStartLine,
    PayloadTooLarge,
)

MAX_PAYLOAD = 4096

cdef unsigned char _TCHAR[256]


cdef void _init_tchar():
    cdef bytes allowed = (
        b"!#$%&'*+-.^_`|~0123456789"
        b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz"
    )
    cdef Py_ssize_t i
    for i in range(256):
        _TCHAR[i] = 0
    for i in range(len(allowed)):
        _TCHAR[<unsigned char>allowed[i]] = 1


_init_tchar()


cdef inline bint _token(const unsigned char* p, Py_ssize_t n):
    cdef Py_ssize_t i
    if n <= 0:
        return False
    for i in range(n):
        if not _TCHAR[p[i]]:
            return False
    return True


def is_token(bytes name):
    return _token(<const unsigned char*>PyBytes_AS_STRING(name), PyBytes_GET_SIZE(name))


def split_head(bytes raw):
    cdef Py_ssize_t n = PyBytes_GET_SIZE(raw)
    cdef const unsigned char* p = <const unsigned char*>PyBytes_AS_STRING(raw)
    cdef Py_ssize_t end = -1, i, line_start, line_end, colon, vs, ve
    cdef bint first = True
    cdef bytes start = b""
    cdef list headers = []

    if n > MAX_PAYLOAD:
        raise PayloadTooLarge(f"{n} > {MAX_PAYLOAD} bytes")
    for i in range(n - 3):
        if p[i] == 13 and p[i + 1] == 10 and p[i + 2] == 13 and p[i + 3] == 10:
            end = i
            break
    if end < 0:
        raise MalformedFraming("missing CRLF CRLF terminator")

    line_start = 0
    while True:
        # next CRLF at or before `end`
        line_end = line_start
        while line_end < end and not (p[line_end] == 13 and p[line_end + 1] == 10):
            line_end += 1
        if first:
            start = raw[line_start:line_end]
            if line_end == line_start:
                raise MalformedStartLine(repr(start[:64]))
            for i in range(line_start, line_end):
                if p[i] == 13 or p[i] == 10:
                    raise MalformedStartLine(repr(start[:64]))
            first = False
        else:
            colon = -1
            for i in range(line_start, line_end):
                if p[i] == 13 or p[i] == 10:
                    raise MalformedHeaderLine("bare CR or LF in header line")
                if colon < 0 and p[i] == 58:
                    colon = i
            if colon <= line_start or not _token(p + line_start, colon - line_start):
                raise MalformedHeaderLine(repr(raw[line_start:line_end][:64]))
            vs = colon + 1
            ve = line_end
            while vs < ve and (p[vs] == 32 or p[vs] == 9):
                vs += 1
            while ve > vs and (p[ve - 1] == 32 or p[ve - 1] == 9):
                ve -= 1
            headers.append((raw[line_start:colon], raw[vs:ve]))
        if line_end >= end:
            break
        line_start = line_end + 2
    return start, headers, raw[end + 4:]


def join_head(bytes start, list headers):
    cdef list parts = [start, b"\r\n"]
    cdef bytes name, value
    for name, value in headers:
        parts.append(name)
        parts.append(b": " + value if value else b":")
        parts.append(b"\r\n")
    parts.append(b"\r\n")
    return b"".join(parts)


def escape_value(str value):
    cdef Py_UCS4 ch
    cdef bint plain = True
    for ch in value:
        if ch == u'\\' or ch == u'\n' or ch == u'=':
            plain = False
            break
    if plain:
        return value
    cdef list out = []
    for ch in value:
        if ch == u'\\':
            out.append(u'\\\\')
        elif ch == u'\n':
            out.append(u'\\n')
        elif ch == u'=':
            out.append(u'\\=')
        else:
            out.append(ch)
    return u''.join(out)


def unescape_value(str text):
    cdef Py_ssize_t i = 0, run = 0, n = len(text)
    cdef Py_UCS4 ch, nxt
    cdef list out
    if u'\\' not in text:
        if u'\n' in text:
            raise BadEscape("raw newline in value")
        return text
    out = []
    while i < n:
        ch = text[i]
        if ch == u'\\':
            if i + 1 >= n:
                raise BadEscape("dangling backslash")
            nxt = text[i + 1]
            if run < i:
                out.append(text[run:i])
            if nxt == u'\\':
                out.append(u'\\')
            elif nxt == u'n':
                out.append(u'\n')
            elif nxt == u'=':
                out.append(u'=')
            else:
                raise BadEscape(f"unknown escape \\{nxt}")
            i += 2
            run = i
            continue
        if ch == u'\n':
            raise BadEscape("raw newline in value")
        i += 1
    if run < n:
        out.append(text[run:n])
    return u''.join(out)
