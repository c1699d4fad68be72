"""Control point (CP): discovery, description retrieval, control and eventing.

The CP drives the simulation synchronously: each request method sends its
message and advances the network clock tick by tick until the answer
arrives or the timeout elapses. Unsolicited traffic (NOTIFY advertisements,
event messages) is handled by :meth:`ControlPoint.on_packet` whenever the
network delivers it.

In secured mode the CP attaches its token to every request and checks the
token on every advertisement or search response before admitting it.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Union

from .device import CANONICAL_TYPE, DEVICE_PATH, DeviceDescription, Mode, ServiceDescription
from .errors import (
    FetchFailed,
    Fault,
    MalformedDocument,
    MalformedToken,
    NoToken,
    SubscribeRejected,
    WireError,
)
from .security import CapToken, Credentials, Decision, Verb, verify_operation
from .simnet import Host, Multicast, Network, SimPacket, Unicast
from .wire import (
    CAPTOKEN_HEADER,
    SSDP_GROUP,
    SSDP_PORT,
    HttpExchange,
    SsdpKind,
    SsdpMessage,
    decode_canonical,
    encode_canonical,
    parse_http,
    parse_ssdp,
    parse_url,
    resolve_url,
    serialize_http,
    serialize_ssdp,
)

REQUEST_TIMEOUT = 10
CALLBACK_PORT = 5000
CALLBACK_PATH = "/evt"


class Via(enum.Enum):
    ADVERTISEMENT = "Advertisement"
    SEARCH_RESPONSE = "SearchResponse"


class AdvertDecision(enum.Enum):
    ACCEPT = "Accept"
    REJECT_FORGED = "RejectForged"
    REJECT_UNAUTHORIZED = "RejectUnauthorized"

    def __bool__(self) -> bool:
        return self is AdvertDecision.ACCEPT


@dataclass(frozen=True)
class DiscoveredService:
    service_type: str
    usn: str
    location: str
    source: str
    via: Via
    token: Optional[CapToken] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class ReceivedEvent:
    sid: str
    seq: int
    properties: dict
    source: str
    tick: int


def _tokens_ok(token_hex: Optional[str]) -> Optional[CapToken]:
    if token_hex is None:
        return None
    try:
        return CapToken.from_hex(token_hex)
    except MalformedToken:
        return None


def verify_advertisement(ra_public: bytes, msg: SsdpMessage, attached_token: Union[CapToken, str, None],
                         source: str, now: int) -> AdvertDecision:
    """Check that ``source`` may announce the service type carried by ``msg``.

    Accept needs a token signed by the RA, naming ``source`` as its subject,
    granting ADVERTISE on the type, and a LOCATION served by ``source`` itself.
    """
    if attached_token is None:
        return AdvertDecision.REJECT_UNAUTHORIZED
    service_type = msg.nt if msg.kind is SsdpKind.NOTIFY else msg.st
    decision = verify_operation(ra_public, attached_token, Verb.ADVERTISE, service_type or "", source, now)
    if decision in (Decision.DENY_FORGED, Decision.DENY_SUBJECT_MISMATCH):
        return AdvertDecision.REJECT_FORGED
    if decision is not Decision.PERMIT:
        return AdvertDecision.REJECT_UNAUTHORIZED
    try:
        location_host = parse_url(msg.location or "").host
    except WireError:
        return AdvertDecision.REJECT_FORGED
    if location_host != source:
        return AdvertDecision.REJECT_FORGED
    return AdvertDecision.ACCEPT


class ControlPoint:
    def __init__(self, net: Network, host_id: str, *, mode: Mode = Mode.BASELINE,
                 credentials: Optional[Credentials] = None, spoof_capable: bool = False,
                 timeout: int = REQUEST_TIMEOUT, callback_port: int = CALLBACK_PORT,
                 host: Optional[Host] = None):
        self.net = net
        if host is None:
            host = net.create_host(host_id, spoof_capable=spoof_capable)
            host.handler = self.on_packet
        self.host = host
        self.host.join(SSDP_GROUP)
        self.id = host_id
        if mode is Mode.SECURED and credentials is None:
            raise ValueError("secured control points need credentials")
        self.mode = mode
        self.credentials = credentials
        self.timeout = timeout
        self.callback_port = callback_port
        # USN -> latest admitted record
        self.discovered: dict[str, DiscoveredService] = {}
        self.admissions: Counter = Counter()
        self.descriptions: dict[str, tuple[str, ServiceDescription]] = {}
        self.subscriptions: dict[str, str] = {}
        self.events: list[ReceivedEvent] = []
        self.counters: Counter = Counter()
        self._pending: dict[int, Optional[HttpExchange]] = {}
        self._search: Optional[tuple[int, dict[str, DiscoveredService]]] = None

    @property
    def secured(self) -> bool:
        return self.mode is Mode.SECURED

    @property
    def callback_url(self) -> str:
        return f"http://{self.id}:{self.callback_port}{CALLBACK_PATH}"

    def _token_headers(self) -> list[tuple[str, str]]:
        if self.secured and self.credentials.token is not None:
            return [(CAPTOKEN_HEADER, self.credentials.token.to_hex())]
        return []

    def _require_token(self) -> None:
        if self.secured and self.credentials.token is None:
            raise NoToken(self.id)

    # -- advertisement checks -------------------------------------------

    def verify_advertisement(self, msg: SsdpMessage, attached_token: Union[CapToken, str, None],
                             source: str) -> AdvertDecision:
        decision = verify_advertisement(self.credentials.ra_public, msg, attached_token, source, self.net.now)
        if isinstance(attached_token, CapToken):
            subject = attached_token.subject_id
        else:
            parsed = _tokens_ok(attached_token)
            subject = parsed.subject_id if parsed else ""
        kind = "advertisement" if msg.kind is SsdpKind.NOTIFY else "search-response"
        self.net.record_audit(self.id, kind, decision.value, subject, source, msg.nt or msg.st or "")
        return decision

    def _admit(self, msg: SsdpMessage, source: str, via: Via) -> Optional[DiscoveredService]:
        service_type = msg.nt if via is Via.ADVERTISEMENT else msg.st
        token = None
        if self.secured:
            if not self.verify_advertisement(msg, msg.captoken, source):
                self.counters["rejected"] += 1
                return None
            token = CapToken.from_hex(msg.captoken)
        record = DiscoveredService(service_type, msg.usn, msg.location, source, via, token)
        self.discovered[msg.usn] = record
        self.admissions[source] += 1
        return record

    # -- packet plumbing --------------------------------------------------

    def on_packet(self, pkt: SimPacket) -> None:
        if pkt.dport in self._pending:
            try:
                self._pending[pkt.dport] = parse_http(pkt.payload)
            except WireError:
                self.counters["malformed"] += 1
        elif self._search is not None and pkt.dport == self._search[0]:
            self._on_search_response(pkt)
        elif pkt.dport == SSDP_PORT and isinstance(pkt.dst, Multicast):
            self._on_ssdp(pkt)
        elif pkt.dport == self.callback_port:
            self._on_event(pkt)
        else:
            self.counters["unhandled"] += 1

    def _on_ssdp(self, pkt: SimPacket) -> None:
        try:
            msg = parse_ssdp(pkt.payload)
        except WireError:
            self.counters["malformed"] += 1
            return
        if msg.kind is SsdpKind.NOTIFY:
            self.counters["notify_received"] += 1
            self._admit(msg, pkt.src, Via.ADVERTISEMENT)

    def _on_search_response(self, pkt: SimPacket) -> None:
        try:
            msg = parse_ssdp(pkt.payload)
        except WireError:
            self.counters["malformed"] += 1
            return
        if msg.kind is not SsdpKind.MSEARCH_RESPONSE:
            return
        record = self._admit(msg, pkt.src, Via.SEARCH_RESPONSE)
        if record is not None:
            self._search[1][record.usn] = record

    def _on_event(self, pkt: SimPacket) -> None:
        try:
            req = parse_http(pkt.payload)
        except WireError:
            self.counters["malformed"] += 1
            return
        if not req.is_request or req.method != "NOTIFY":
            return
        sid = req.sid
        if sid in self.subscriptions:
            try:
                props = decode_canonical(req.body).get("propertyset", {})
            except WireError:
                props = {}
            seq = req.header("SEQ")
            self.events.append(ReceivedEvent(sid, int(seq) if seq and seq.isdigit() else -1,
                                             props if isinstance(props, dict) else {}, pkt.src, self.net.now))
            resp = HttpExchange.response(200)
        else:
            resp = HttpExchange.response(412)
        self.host.send(Unicast(pkt.src), serialize_http(resp), sport=self.callback_port, dport=pkt.sport,
                       kind="http-response")

    # -- requests ---------------------------------------------------------

    def request(self, url: str, exchange: HttpExchange) -> HttpExchange:
        """Send ``exchange`` to the host named by ``url`` and wait for its reply."""
        target = parse_url(url)
        port = self.host.ephemeral_port()
        self._pending[port] = None
        self.host.send(Unicast(target.host), serialize_http(exchange), sport=port, dport=target.port,
                       kind="http-request")
        deadline = self.net.now + self.timeout
        try:
            while self._pending[port] is None and self.net.now < deadline:
                self.net.run_until(self.net.now + 1)
            resp = self._pending[port]
        finally:
            del self._pending[port]
        if resp is None or resp.is_request:
            raise FetchFailed(url)
        return resp

    def discover(self, st: str, mx: int = 2) -> list[DiscoveredService]:
        """Multicast an M-SEARCH and collect admitted answers for ``mx`` ticks."""
        port = self.host.ephemeral_port()
        found: dict[str, DiscoveredService] = {}
        self._search = (port, found)
        msg = SsdpMessage.msearch(st, mx, extra=self._token_headers())
        self.host.send(Multicast(SSDP_GROUP), serialize_ssdp(msg), sport=port, dport=SSDP_PORT,
                       kind="ssdp-msearch")
        try:
            self.net.run_until(self.net.now + mx)
        finally:
            self._search = None
        return sorted(found.values(), key=lambda d: d.usn)

    def get_document(self, url: str) -> dict:
        try:
            path = parse_url(url).path
        except WireError as exc:
            raise FetchFailed(url) from exc
        resp = self.request(url, HttpExchange.request("GET", path, [("HOST", parse_url(url).host)]))
        if resp.status != 200:
            raise FetchFailed(f"{url}: {resp.status}")
        try:
            return decode_canonical(resp.body)
        except WireError as exc:
            raise MalformedDocument(f"{url}: {exc}") from exc

    def fetch_descriptions(self, d: Union[DiscoveredService, str]) -> tuple[DeviceDescription, list[ServiceDescription]]:
        """Fetch the device description at ``d``'s LOCATION, then each service description."""
        location = d.location if isinstance(d, DiscoveredService) else d
        try:
            device = DeviceDescription.from_tree(self.get_document(location))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDocument(f"{location}: {exc}") from exc
        services = []
        for ref in device.services:
            url = resolve_url(location, ref.description_url)
            try:
                svc = ServiceDescription.from_tree(self.get_document(url))
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedDocument(f"{url}: {exc}") from exc
            services.append(svc)
            self.descriptions[svc.service_type] = (location, svc)
        return device, services

    def _service(self, service: Union[str, ServiceDescription]) -> tuple[str, ServiceDescription]:
        service_type = service if isinstance(service, str) else service.service_type
        try:
            return self.descriptions[service_type]
        except KeyError:
            raise Fault("UnknownService", detail=service_type) from None

    def invoke(self, service: Union[str, ServiceDescription], action: str, args: Optional[dict] = None) -> dict:
        """Call ``action`` and return its out-arguments; raises :class:`Fault` on error."""
        location, svc = self._service(service)
        if svc.action(action) is None:
            raise Fault("UnknownAction", detail=action)
        self._require_token()
        body: dict = {"action": action}
        if args:
            body["args"] = {k: str(v) for k, v in args.items()}
        url = resolve_url(location, svc.control_url)
        headers = [("HOST", parse_url(url).host), ("CONTENT-TYPE", CANONICAL_TYPE)] + self._token_headers()
        resp = self.request(url, HttpExchange.request("POST", parse_url(url).path, headers, encode_canonical(body)))
        result = self._decode(resp)
        if resp.status != 200:
            raise Fault(result.get("error", str(resp.status)), result.get("code", ""), result.get("detail", ""))
        out = result.get("out", {})
        return out if isinstance(out, dict) else {}

    def subscribe(self, service: Union[str, ServiceDescription], callback_url: Optional[str] = None,
                  timeout: Optional[int] = None) -> str:
        """Subscribe to ``service`` events; returns the SID."""
        location, svc = self._service(service)
        self._require_token()
        url = resolve_url(location, svc.event_sub_url)
        headers = [("HOST", parse_url(url).host), ("CALLBACK", f"<{callback_url or self.callback_url}>"),
                   ("NT", "upnp:event")]
        if timeout is not None:
            headers.append(("TIMEOUT", f"Second-{timeout}"))
        headers += self._token_headers()
        resp = self.request(url, HttpExchange.request("SUBSCRIBE", parse_url(url).path, headers))
        if resp.status != 200 or resp.sid is None:
            result = self._decode(resp)
            raise SubscribeRejected(result.get("detail") or result.get("error") or str(resp.status))
        self.subscriptions[resp.sid] = svc.service_type
        return resp.sid

    @staticmethod
    def _decode(resp: HttpExchange) -> dict:
        if not resp.body:
            return {}
        try:
            return decode_canonical(resp.body)
        except WireError:
            return {}


def description_url(host_id: str) -> str:
    return f"http://{host_id}{DEVICE_PATH}"
