"""Service device (SD): advertisement, search replies, descriptions, control, eventing.

A :class:`Device` owns one simulated host. It listens on the SSDP group for
M-SEARCH, serves HTTP on ``http_port`` (descriptions, control, SUBSCRIBE) and
publishes events to subscriber callbacks. A device that hosts the
``urn:WANIPConnections`` service also acts as a gateway: AddPortMapping
installs forwarding rules that it applies to traffic hitting mapped ports.

In secured mode every state-changing request (M-SEARCH reply, action
invocation, subscription) must carry a capability token that passes
:func:`upnplab.security.verify_operation`; every decision is audited.
"""

from __future__ import annotations

import enum
import uuid
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

from .errors import (
    AccessDenied,
    BadArgs,
    DeviceError,
    MalformedToken,
    MissingCallback,
    NotEvented,
    NotFound,
    PortInUse,
    UnknownAction,
    UnknownVariable,
    WireError,
)
from .security import CapToken, Credentials, Verb, verify_operation
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
    pad_ssdp,
    parse_http,
    parse_ssdp,
    parse_url,
    serialize_http,
    serialize_ssdp,
)

ADVERTISEMENT_INTERVAL = 300
SUBSCRIPTION_TIMEOUT = 1800
SUBSCRIPTION_QUOTA = 8
DEVICE_PATH = "/desc/device"
CANONICAL_TYPE = "text/x-canonical-tree; charset=utf-8"

CAMERA_TYPE = "urn:SecurityCamera"
GATEWAY_TYPE = "urn:WANIPConnections"


class Mode(enum.Enum):
    BASELINE = "baseline"
    SECURED = "secured"


# ---------------------------------------------------------------------------
# Descriptions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Argument:
    name: str
    direction: str  # "in" | "out"
    state_var: str


@dataclass(frozen=True)
class Action:
    name: str
    args: tuple[Argument, ...] = ()

    @property
    def in_args(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.args if a.direction == "in")


@dataclass(frozen=True)
class StateVariable:
    name: str
    data_type: str
    range: Optional[tuple[int, int]] = None
    send_events: bool = False


@dataclass(frozen=True)
class ServiceDescription:
    service_type: str
    actions: tuple[Action, ...]
    state_variables: tuple[StateVariable, ...]
    control_url: str
    event_sub_url: str

    def __post_init__(self) -> None:
        declared = {v.name for v in self.state_variables}
        for action in self.actions:
            for arg in action.args:
                if arg.direction not in ("in", "out"):
                    raise ValueError(f"{action.name}.{arg.name}: direction must be in/out")
                if arg.state_var not in declared:
                    raise ValueError(f"{action.name}.{arg.name} references undeclared {arg.state_var}")
        if self.control_url == self.event_sub_url:
            raise ValueError("control and event URLs must differ")

    def action(self, name: str) -> Optional[Action]:
        return next((a for a in self.actions if a.name == name), None)

    def variable(self, name: str) -> Optional[StateVariable]:
        return next((v for v in self.state_variables if v.name == name), None)

    def to_tree(self) -> dict:
        tree: dict = {
            "serviceType": self.service_type,
            "controlURL": self.control_url,
            "eventSubURL": self.event_sub_url,
        }
        if self.actions:
            tree["actions"] = []
            for a in self.actions:
                node: dict = {"name": a.name}
                if a.args:
                    node["arguments"] = [
                        {"name": g.name, "direction": g.direction, "relatedStateVariable": g.state_var} for g in a.args
                    ]
                tree["actions"].append(node)
        if self.state_variables:
            tree["stateVariables"] = []
            for v in self.state_variables:
                node = {"name": v.name, "dataType": v.data_type, "sendEvents": "yes" if v.send_events else "no"}
                if v.range is not None:
                    node["range"] = {"min": str(v.range[0]), "max": str(v.range[1])}
                tree["stateVariables"].append(node)
        return tree

    @classmethod
    def from_tree(cls, tree: dict) -> "ServiceDescription":
        actions = tuple(
            Action(
                a["name"],
                tuple(Argument(g["name"], g["direction"], g["relatedStateVariable"]) for g in a.get("arguments", [])),
            )
            for a in tree.get("actions", [])
        )
        variables = tuple(
            StateVariable(
                v["name"],
                v["dataType"],
                (int(v["range"]["min"]), int(v["range"]["max"])) if "range" in v else None,
                v["sendEvents"] == "yes",
            )
            for v in tree.get("stateVariables", [])
        )
        return cls(tree["serviceType"], actions, variables, tree["controlURL"], tree["eventSubURL"])


@dataclass(frozen=True)
class ServiceRef:
    service_type: str
    description_url: str
    control_url: str
    event_sub_url: str


@dataclass(frozen=True)
class DeviceDescription:
    device_type: str
    friendly_name: str
    serial_number: str
    udn: str
    services: tuple[ServiceRef, ...] = ()

    def to_tree(self) -> dict:
        tree: dict = {
            "deviceType": self.device_type,
            "friendlyName": self.friendly_name,
            "serialNumber": self.serial_number,
            "UDN": self.udn,
        }
        if self.services:
            tree["services"] = [
                {"serviceType": s.service_type, "SCPDURL": s.description_url, "controlURL": s.control_url,
                 "eventSubURL": s.event_sub_url}
                for s in self.services
            ]
        return tree

    @classmethod
    def from_tree(cls, tree: dict) -> "DeviceDescription":
        refs = tuple(
            ServiceRef(s["serviceType"], s["SCPDURL"], s["controlURL"], s["eventSubURL"]) for s in tree.get("services", [])
        )
        return cls(tree["deviceType"], tree["friendlyName"], tree["serialNumber"], tree["UDN"], refs)


def service_ref(svc: ServiceDescription, description_url: str) -> ServiceRef:
    return ServiceRef(svc.service_type, description_url, svc.control_url, svc.event_sub_url)


def camera_service() -> ServiceDescription:
    return ServiceDescription(
        CAMERA_TYPE,
        (Action("GetStatus", (Argument("Status", "out", "Status"),)),),
        (
            StateVariable("Status", "string", send_events=True),
            StateVariable("MotionDetected", "boolean", send_events=True),
            StateVariable("Resolution", "ui2", (240, 2160)),
        ),
        "/ctl/camera",
        "/evt/camera",
    )


def gateway_service() -> ServiceDescription:
    return ServiceDescription(
        GATEWAY_TYPE,
        (
            Action(
                "AddPortMapping",
                (
                    Argument("NewExternalPort", "in", "ExternalPort"),
                    Argument("NewInternalClient", "in", "InternalClient"),
                    Argument("NewInternalPort", "in", "InternalPort"),
                ),
            ),
            Action("GetStatus", (Argument("Status", "out", "Status"),)),
        ),
        (
            StateVariable("ExternalPort", "ui2", (1, 65535)),
            StateVariable("InternalClient", "string"),
            StateVariable("InternalPort", "ui2", (1, 65535)),
            StateVariable("Status", "string", send_events=True),
            StateVariable("PortMappingNumberOfEntries", "ui2", send_events=True),
        ),
        "/ctl/wan",
        "/evt/wan",
    )


def make_description(device_type: str, name: str, serial: str, udn: str,
                     services: Iterable[ServiceDescription]) -> DeviceDescription:
    refs = tuple(service_ref(s, f"/desc/{s.service_type.rsplit(':', 1)[-1]}") for s in services)
    return DeviceDescription(device_type, name, serial, udn, refs)


def bundle_from_tree(tree: dict) -> tuple[DeviceDescription, list[ServiceDescription]]:
    """A device description plus its service descriptions, from ``{"device": ..., "services": [...]}``."""
    try:
        device = DeviceDescription.from_tree(tree["device"])
        services = [ServiceDescription.from_tree(s) for s in tree["services"]]
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise WireError(f"not a device bundle ({exc})") from exc
    missing = {r.service_type for r in device.services} - {s.service_type for s in services}
    if missing:
        raise WireError(f"bundle lacks descriptions for {sorted(missing)}")
    return device, services


def load_bundle(path: Union[str, Path]) -> tuple[DeviceDescription, list[ServiceDescription]]:
    """Read a device description and its service descriptions from one canonical file."""
    return bundle_from_tree(decode_canonical(Path(path).read_bytes()))


def bundle_tree(device: DeviceDescription, services: Iterable[ServiceDescription]) -> dict:
    return {"device": device.to_tree(), "services": [s.to_tree() for s in services]}


def dump_bundle(device: DeviceDescription, services: Iterable[ServiceDescription]) -> bytes:
    return encode_canonical(bundle_tree(device, services))


# ---------------------------------------------------------------------------
# Runtime state
# ---------------------------------------------------------------------------


@dataclass
class Subscription:
    sid: str
    callback_url: str
    timeout: int
    http_version: str
    service_type: str
    subscriber: str
    issued_at: int
    seq: int = 0
    origin: Optional[str] = field(default=None, repr=False, compare=False)

    def expired(self, now: int) -> bool:
        return now > self.issued_at + self.timeout


@dataclass(frozen=True)
class PortMapping:
    external_port: int
    internal_host: str
    internal_port: int
    creator: str


ActionHandler = Callable[["Device", str, dict, str], dict]


def _get_status(device: "Device", service_type: str, args: dict, caller: str) -> dict:
    return {"Status": device.state[service_type].get("Status", "ok")}


def _port(value: str, name: str) -> int:
    if not value.isdigit() or not 1 <= int(value) <= 65535:
        raise BadArgs(f"{name}={value!r}")
    return int(value)


def _add_port_mapping(device: "Device", service_type: str, args: dict, caller: str) -> dict:
    external = _port(args["NewExternalPort"], "NewExternalPort")
    internal = _port(args["NewInternalPort"], "NewInternalPort")
    client = args["NewInternalClient"]
    if not client:
        raise BadArgs("NewInternalClient is empty")
    if external in device.port_mappings or external in (device.http_port, SSDP_PORT):
        raise PortInUse(str(external))
    device.port_mappings[external] = PortMapping(external, client, internal, caller)
    device.state[service_type]["PortMappingNumberOfEntries"] = str(len(device.port_mappings))
    return {}


BUILTIN_ACTIONS: dict[str, ActionHandler] = {
    "GetStatus": _get_status,
    "AddPortMapping": _add_port_mapping,
}


class Device:
    def __init__(self, net: Network, host_id: str, description: DeviceDescription,
                 services: Iterable[ServiceDescription], *, mode: Mode = Mode.BASELINE,
                 credentials: Optional[Credentials] = None, http_port: int = 80,
                 quota: int = SUBSCRIPTION_QUOTA, response_size: int = 0, host: Optional[Host] = None):
        self.net = net
        if host is None:
            # a caller passing its own host is responsible for routing packets to on_packet
            host = net.create_host(host_id)
            host.handler = self.on_packet
        self.host = host
        self.host.join(SSDP_GROUP)
        self.id = host_id
        self.description = description
        self.services = {s.service_type: s for s in services}
        for ref in description.services:
            if ref.service_type not in self.services:
                raise ValueError(f"{host_id}: no description for {ref.service_type}")
        if mode is Mode.SECURED and credentials is None:
            raise ValueError("secured devices need credentials")
        self.mode = mode
        self.credentials = credentials
        self.http_port = http_port
        self.quota = quota
        self.response_size = response_size
        self.state = {
            s.service_type: {v.name: ("ok" if v.name == "Status" else "0") for v in s.state_variables}
            for s in self.services.values()
        }
        self.actions: dict[str, ActionHandler] = dict(BUILTIN_ACTIONS)
        self.subscriptions: list[Subscription] = []
        self.high_water = 0
        self.port_mappings: dict[int, PortMapping] = {}
        self.counters: Counter = Counter()
        self.answered_to: Counter = Counter()
        self._nat: dict[int, tuple[str, int, int]] = {}

    # -- identity -------------------------------------------------------

    @property
    def location(self) -> str:
        port = "" if self.http_port == 80 else f":{self.http_port}"
        return f"http://{self.id}{port}{DEVICE_PATH}"

    def usn(self, service_type: str) -> str:
        return f"{self.description.udn}::{service_type}"

    @property
    def secured(self) -> bool:
        return self.mode is Mode.SECURED

    def _token_headers(self) -> tuple[tuple[str, str], ...]:
        if self.secured and self.credentials.token is not None:
            return ((CAPTOKEN_HEADER, self.credentials.token.to_hex()),)
        return ()

    def _audit(self, operation: str, decision: str, subject: str, claimed_src: str, detail: str = "") -> None:
        self.net.record_audit(self.id, operation, decision, subject, claimed_src, detail)

    def _check(self, operation: str, token_hex: Optional[str], verb: Verb, target: str, claimed_src: str) -> str:
        """Run the token check for one operation, audit it, and return the decision name."""
        if token_hex is None:
            self._audit(operation, "DenyNoToken", "", claimed_src, target)
            return "DenyNoToken"
        try:
            token: Union[CapToken, str] = CapToken.from_hex(token_hex)
            subject = token.subject_id
        except MalformedToken:
            token, subject = token_hex, "?"
        decision = verify_operation(self.credentials.ra_public, token, verb, target, claimed_src, self.net.now)
        self._audit(operation, decision.value, subject, claimed_src, target)
        return decision.value

    # -- discovery --------------------------------------------------------

    def advertisements(self) -> list[SsdpMessage]:
        extra = self._token_headers()
        return [SsdpMessage.notify(ref.service_type, self.usn(ref.service_type), self.location, extra=extra)
                for ref in self.description.services]

    def advertise(self) -> list[SsdpMessage]:
        """Multicast one NOTIFY per hosted service."""
        msgs = self.advertisements()
        for msg in msgs:
            self.host.send(Multicast(SSDP_GROUP), serialize_ssdp(msg), sport=SSDP_PORT, dport=SSDP_PORT,
                           kind="ssdp-notify")
        return msgs

    def start_advertising(self, interval: int = ADVERTISEMENT_INTERVAL) -> None:
        def tick() -> None:
            self.advertise()
            self.net.schedule(self.net.now + interval, tick)

        self.net.schedule(self.net.now, tick)

    def handle_msearch(self, msg: SsdpMessage, claimed_src: str) -> list[SsdpMessage]:
        """Responses owed to ``claimed_src``; empty when nothing matches or access is denied."""
        if msg.kind is not SsdpKind.MSEARCH:
            return []
        hosted = [ref.service_type for ref in self.description.services]
        st = msg.st
        candidates = hosted if st == "ssdp:all" else [t for t in hosted if t == st]
        if self.secured:
            candidates = [t for t in candidates
                          if self._check("discover", msg.captoken, Verb.DISCOVER, t, claimed_src) == "Permit"]
        extra = self._token_headers()
        out = []
        for service_type in candidates:
            resp = SsdpMessage.response(service_type, self.usn(service_type), self.location, extra=extra)
            if self.response_size:
                try:
                    resp = pad_ssdp(resp, self.response_size)
                except ValueError:
                    pass  # already larger than the target; sent as is
            out.append(resp)
        return out

    # -- HTTP -------------------------------------------------------------

    def handle_http(self, req: HttpExchange, claimed_src: str) -> HttpExchange:
        try:
            if req.method == "GET":
                return self.serve_description(req)
            if req.method == "POST":
                return self.handle_control(req, claimed_src)
            if req.method == "SUBSCRIBE":
                return self.handle_subscribe(req, claimed_src)
            return HttpExchange.response(405)
        except DeviceError as exc:
            return fault_response(exc)

    def serve_description(self, req: HttpExchange) -> HttpExchange:
        if req.path == DEVICE_PATH:
            tree = self.description.to_tree()
        else:
            ref = next((r for r in self.description.services if r.description_url == req.path), None)
            if ref is None:
                raise NotFound(req.path)
            tree = self.services[ref.service_type].to_tree()
        return HttpExchange.response(200, [("CONTENT-TYPE", CANONICAL_TYPE)], encode_canonical(tree))

    def handle_control(self, req: HttpExchange, claimed_src: str) -> HttpExchange:
        svc = next((s for s in self.services.values() if s.control_url == req.path), None)
        if svc is None:
            raise NotFound(req.path)
        try:
            body = decode_canonical(req.body)
        except WireError as exc:
            raise BadArgs(str(exc)) from exc
        name = body.get("action")
        action = svc.action(name) if isinstance(name, str) else None
        if action is None or name not in self.actions:
            raise UnknownAction(str(name))
        if self.secured:
            decision = self._check("invoke", req.captoken, Verb.INVOKE, f"{svc.service_type}:{name}", claimed_src)
            if decision != "Permit":
                raise AccessDenied(decision)
        args = body.get("args", {})
        if not isinstance(args, dict) or set(args) != set(action.in_args) or not all(isinstance(v, str) for v in args.values()):
            raise BadArgs(f"{name} expects {sorted(action.in_args)}")
        out = self.actions[name](self, svc.service_type, args, claimed_src)
        self.counters["actions"] += 1
        result: dict = {"action": name, "status": "ok"}
        if out:
            result["out"] = out
        return HttpExchange.response(200, [("CONTENT-TYPE", CANONICAL_TYPE)], encode_canonical(result))

    def handle_subscribe(self, req: HttpExchange, claimed_src: str) -> HttpExchange:
        svc = next((s for s in self.services.values() if s.event_sub_url == req.path), None)
        if svc is None:
            raise NotFound(req.path)
        callback = req.callback
        if callback is None:
            raise MissingCallback(req.path)
        self.expire()
        if self.secured:
            decision = self._check("subscribe", req.captoken, Verb.SUBSCRIBE, svc.service_type, claimed_src)
            if decision != "Permit":
                raise AccessDenied(decision)
            try:
                callback_host = parse_url(callback).host
            except WireError:
                callback_host = ""
            if callback_host != claimed_src:
                self._audit("subscribe", "DenyCallback", claimed_src, claimed_src, callback)
                raise AccessDenied("DenyCallback")
            live = sum(1 for s in self.subscriptions if s.subscriber == claimed_src)
            if live >= self.quota:
                self._audit("subscribe", "DenyQuota", claimed_src, claimed_src, str(live))
                raise AccessDenied("DenyQuota")
        timeout = req.timeout or SUBSCRIPTION_TIMEOUT
        sid = f"uuid:{uuid.UUID(int=self.net.rng.getrandbits(128), version=4)}"
        self.subscriptions.append(
            Subscription(sid, callback, timeout, req.version, svc.service_type, claimed_src, self.net.now,
                         origin=self.net.current_origin)
        )
        self.high_water = max(self.high_water, len(self.subscriptions))
        self.counters["subscriptions_accepted"] += 1
        return HttpExchange.response(200, [("SID", sid), ("TIMEOUT", f"Second-{timeout}")])

    def expire(self) -> int:
        """Drop expired subscriptions; return how many were removed."""
        now = self.net.now
        before = len(self.subscriptions)
        self.subscriptions = [s for s in self.subscriptions if not s.expired(now)]
        removed = before - len(self.subscriptions)
        self.counters["subscriptions_expired"] += removed
        return removed

    # -- eventing ---------------------------------------------------------

    def publish_event(self, var: str, value: str, service_type: Optional[str] = None) -> list[HttpExchange]:
        """Update ``var`` and send one event NOTIFY per live subscription to it."""
        owners = [s for s in self.services.values()
                  if (service_type is None or s.service_type == service_type) and s.variable(var) is not None]
        if not owners:
            raise UnknownVariable(var)
        svc = owners[0]
        if not svc.variable(var).send_events:
            raise NotEvented(var)
        self.state[svc.service_type][var] = value
        self.expire()
        body = encode_canonical({"propertyset": {var: value}})
        sent = []
        for sub in self.subscriptions:
            if sub.service_type != svc.service_type:
                continue
            try:
                url = parse_url(sub.callback_url)
            except WireError:
                continue
            notify = HttpExchange.request(
                "NOTIFY",
                url.path,
                [("HOST", f"{url.host}:{url.port}"), ("CONTENT-TYPE", CANONICAL_TYPE), ("NT", "upnp:event"),
                 ("NTS", "upnp:propchange"), ("SID", sub.sid), ("SEQ", str(sub.seq))],
                body,
                version=sub.http_version,
            )
            sub.seq += 1
            self.host.send(Unicast(url.host), serialize_http(notify), sport=self.http_port, dport=url.port,
                           kind="gena-notify", origin=sub.origin)
            sent.append(notify)
        self.counters["events_sent"] += len(sent)
        return sent

    # -- packet plumbing --------------------------------------------------

    def on_packet(self, pkt: SimPacket) -> None:
        if pkt.dport == SSDP_PORT:
            self._on_ssdp(pkt)
        elif pkt.dport == self.http_port:
            self._on_http(pkt)
        elif pkt.dport in self.port_mappings:
            self._forward(pkt)
        elif pkt.dport in self._nat:
            self._nat_return(pkt)
        else:
            self.counters["unhandled"] += 1

    def _on_ssdp(self, pkt: SimPacket) -> None:
        try:
            msg = parse_ssdp(pkt.payload)
        except WireError:
            self.counters["malformed"] += 1
            return
        if msg.kind is not SsdpKind.MSEARCH:
            return
        self.counters["msearch_received"] += 1
        responses = self.handle_msearch(msg, pkt.src)
        if responses:
            self.answered_to[pkt.src] += 1
        for resp in responses:
            self.host.send(Unicast(pkt.src), serialize_ssdp(resp), sport=SSDP_PORT, dport=pkt.sport,
                           kind="ssdp-response")
            self.counters["msearch_answered"] += 1

    def _on_http(self, pkt: SimPacket) -> None:
        try:
            req = parse_http(pkt.payload)
        except WireError as exc:
            self.counters["malformed"] += 1
            resp = HttpExchange.response(400, body=encode_canonical({"error": type(exc).__name__}))
        else:
            if not req.is_request:
                self.counters["unhandled"] += 1
                return
            resp = self.handle_http(req, pkt.src)
        self.host.send(Unicast(pkt.src), serialize_http(resp), sport=self.http_port, dport=pkt.sport,
                       kind="http-response")

    def _forward(self, pkt: SimPacket) -> None:
        mapping = self.port_mappings[pkt.dport]
        port = self.host.ephemeral_port()
        self._nat[port] = (pkt.src, pkt.sport, pkt.dport)
        self.host.send(Unicast(mapping.internal_host), pkt.payload, sport=port, dport=mapping.internal_port,
                       kind="forwarded")
        self.counters["forwarded"] += 1

    def _nat_return(self, pkt: SimPacket) -> None:
        client, client_port, external = self._nat.pop(pkt.dport)
        self.host.send(Unicast(client), pkt.payload, sport=external, dport=client_port, kind="forwarded")


def fault_response(exc: DeviceError) -> HttpExchange:
    body: dict = {"error": exc.fault_name or type(exc).__name__, "code": str(exc.upnp_code)}
    if exc.detail:
        body["detail"] = exc.detail
    return HttpExchange.response(exc.status, [("CONTENT-TYPE", CANONICAL_TYPE)], encode_canonical(body))

