"""Attack scenarios and the baseline-vs-secured comparison matrix.

Each scenario builds a fresh :class:`Lab` (network, CA, RA, legitimate
devices and control point), runs a fixed legitimate script, marks the audit
log, then lets one adversary act. The report classifies the outcome:

* ``attack_succeeded``: the scenario's intended effect happened;
* ``detected``: a legitimate participant logged a deny decision after the mark;
* ``prevented``: the intended effect did not happen and no reflected bytes
  reached the victim.

Legitimate scripts are identical in both modes; only verification differs.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

from .controlpoint import ControlPoint, description_url
from .device import (
    CAMERA_TYPE,
    GATEWAY_TYPE,
    Device,
    DeviceDescription,
    Mode,
    ServiceDescription,
    bundle_from_tree,
    bundle_tree,
    camera_service,
    gateway_service,
    make_description,
)
from .errors import BadParams, ControlPointError, FetchFailed, Fault, UnknownScenario, WireError
from .security import (
    AbacPolicy,
    Condition,
    Credentials,
    RegistrationAuthority,
    Rule,
    enroll_and_register,
    keygen,
    permissions,
)
from .simnet import Host, Multicast, Network, SimPacket, Unicast, amplification_factor
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
    serialize_http,
    serialize_ssdp,
)

REFRIGERATOR_TYPE = "urn:Refrigerator"

CP_GRANTS = permissions(
    "DISCOVER:*",
    f"INVOKE:{CAMERA_TYPE}:GetStatus",
    f"SUBSCRIBE:{CAMERA_TYPE}",
    f"INVOKE:{GATEWAY_TYPE}:GetStatus",
)

DEFAULT_POLICY = AbacPolicy(
    (
        Rule((Condition("hw.class", "==", "camera"), Condition("sw.role", "==", "sd")),
             permissions(f"ADVERTISE:{CAMERA_TYPE}")),
        Rule((Condition("hw.class", "==", "router"), Condition("sw.role", "==", "sd")),
             permissions(f"ADVERTISE:{GATEWAY_TYPE}")),
        Rule((Condition("hw.class", "==", "appliance"), Condition("sw.svc", "==", "refrigeration")),
             permissions(f"ADVERTISE:{REFRIGERATOR_TYPE}")),
        Rule((Condition("sw.role", "in", ("home-app", "admin-console")),), CP_GRANTS),
        Rule((Condition("sw.role", "==", "admin-console"), Condition("hw.class", "!=", "appliance")),
             permissions(f"INVOKE:{GATEWAY_TYPE}:AddPortMapping")),
    )
)

CAMERA_HW = {"class": "camera", "sensor": "imaging"}
CAMERA_SW = {"role": "sd", "svc": CAMERA_TYPE}
GATEWAY_HW = {"class": "router"}
GATEWAY_SW = {"role": "sd", "svc": GATEWAY_TYPE}
CP_HW = {"class": "phone"}
CP_SW = {"role": "home-app"}
# truthful attributes of the compromised refrigerator that plays most adversaries
ADVERSARY_HW = {"class": "appliance", "vendor": "acme"}
ADVERSARY_SW = {"role": "sd", "svc": "refrigeration"}

ADVERSARY = "adv"
VICTIM = "victim"
EXTERNAL = "ext"


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------


Bundle = tuple[DeviceDescription, list[ServiceDescription]]


@dataclass
class Catalog:
    """Descriptions used for the lab's camera and gateway."""

    camera: Bundle
    gateway: Bundle

    @classmethod
    def default(cls) -> "Catalog":
        cam, wan = camera_service(), gateway_service()
        return cls(
            (make_description("urn:Camera", "Hallway camera", "CAM-0001", "uuid:camera", [cam]), [cam]),
            (make_description("urn:InternetGateway", "Home gateway", "GW-0001", "uuid:gateway", [wan]), [wan]),
        )

    def to_bytes(self) -> bytes:
        return encode_canonical({"camera": bundle_tree(*self.camera), "gateway": bundle_tree(*self.gateway)})

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Catalog":
        tree = decode_canonical(raw)
        if set(tree) != {"camera", "gateway"}:
            raise WireError("device catalog needs exactly 'camera' and 'gateway' bundles")
        return cls(bundle_from_tree(tree["camera"]), bundle_from_tree(tree["gateway"]))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Catalog":
        return cls.from_bytes(Path(path).read_bytes())


def _renamed(bundle: Bundle, index: int) -> Bundle:
    device, services = bundle
    return DeviceDescription(device.device_type, f"{device.friendly_name} {index}", f"{device.serial_number}-{index}",
                             f"{device.udn}-{index}", device.services), services


class Lab:
    """One simulation: network, trust anchors and the participants of a scenario."""

    def __init__(self, mode: Mode, seed: int, policy: Optional[AbacPolicy] = None,
                 catalog: Optional[Catalog] = None):
        self.mode = mode
        self.seed = seed
        self.net = Network(seed)
        self.catalog = catalog or Catalog.default()
        self._keys = random.Random(f"keys:{seed}")
        self.ca_keys = keygen(self._keys)
        self.ra = RegistrationAuthority(keygen(self._keys), self.ca_keys.public, policy or DEFAULT_POLICY,
                                        rng=self._keys)
        self.adversaries: set[str] = set()
        self.mark = 0

    @property
    def secured(self) -> bool:
        return self.mode is Mode.SECURED

    def enroll(self, subject_id: str, hw: dict, sw: dict, requested: Iterable[str]) -> Credentials:
        return enroll_and_register(self.ca_keys, self.ra, subject_id, hw, sw, permissions(*requested),
                                   now=self.net.now, rng=self._keys)

    def camera(self, host_id: str = "camera", index: Optional[int] = None, response_size: int = 0) -> Device:
        device, services = self.catalog.camera if index is None else _renamed(self.catalog.camera, index)
        creds = self.enroll(host_id, CAMERA_HW, CAMERA_SW, [f"ADVERTISE:{s.service_type}" for s in services])
        return Device(self.net, host_id, device, services, mode=self.mode, credentials=creds,
                      response_size=response_size)

    def gateway(self, host_id: str = "gateway") -> Device:
        device, services = self.catalog.gateway
        creds = self.enroll(host_id, GATEWAY_HW, GATEWAY_SW, [f"ADVERTISE:{s.service_type}" for s in services])
        return Device(self.net, host_id, device, services, mode=self.mode, credentials=creds)

    def control_point(self, host_id: str = "cp") -> ControlPoint:
        creds = self.enroll(host_id, CP_HW, CP_SW, [str(p) for p in CP_GRANTS])
        return ControlPoint(self.net, host_id, mode=self.mode, credentials=creds)

    def adversary(self, wants: Iterable[str], *, insider: bool = False, host_id: str = ADVERSARY) -> "Adversary":
        """A spoof-capable adversary enrolled with truthful attributes.

        It asks the RA for ``wants`` plus what its attributes legitimately
        allow, so it ends up holding a token that lacks the permissions the
        attack needs. An ``insider`` is a compromised control-point app that
        holds the ordinary control-point grants.
        """
        if insider:
            creds = self.enroll(host_id, CP_HW, CP_SW, [*wants, *map(str, CP_GRANTS)])
        else:
            creds = self.enroll(host_id, ADVERSARY_HW, ADVERSARY_SW, [*wants, f"ADVERTISE:{REFRIGERATOR_TYPE}"])
        self.adversaries.add(host_id)
        return Adversary(self, host_id, creds)

    def bare_host(self, host_id: str) -> Host:
        return self.net.create_host(host_id)

    def start_attack(self) -> None:
        self.net.run_until_idle()
        self.mark = len(self.net.audit)

    def denies(self) -> list:
        return [e for e in self.net.deny_events(self.mark) if e.host not in self.adversaries]


class Adversary:
    """Spoof-capable attacker host: sniffs multicast, acts as a CP, can serve forged documents."""

    def __init__(self, lab: Lab, host_id: str, credentials: Credentials):
        self.lab = lab
        self.host = lab.net.create_host(host_id, spoof_capable=True)
        self.host.handler = self.on_packet
        self.id = host_id
        self.credentials = credentials
        self.cp = ControlPoint(lab.net, host_id, mode=lab.mode, credentials=credentials, host=self.host)
        self.device: Optional[Device] = None
        self.sniffed_tokens: dict[str, str] = {}
        self.sniffed_searches: list[bytes] = []
        self.replay_ports: set[int] = set()
        self.replay_answers = 0

    def token_headers(self) -> list[tuple[str, str]]:
        if self.lab.secured and self.credentials.token is not None:
            return [(CAPTOKEN_HEADER, self.credentials.token.to_hex())]
        return []

    def on_packet(self, pkt: SimPacket) -> None:
        if pkt.dport in self.replay_ports:
            self.replay_answers += 1
            return
        if isinstance(pkt.dst, Multicast) and pkt.dport == SSDP_PORT:
            self._sniff(pkt)
            if self.device is not None:
                self.device.on_packet(pkt)
            self.cp.on_packet(pkt)
        elif self.device is not None and pkt.dport == self.device.http_port:
            self.device.on_packet(pkt)
        else:
            self.cp.on_packet(pkt)

    def _sniff(self, pkt: SimPacket) -> None:
        try:
            msg = parse_ssdp(pkt.payload)
        except WireError:
            return
        if msg.kind is SsdpKind.NOTIFY and msg.captoken:
            self.sniffed_tokens[pkt.src] = msg.captoken
        elif msg.kind is SsdpKind.MSEARCH:
            self.sniffed_searches.append(pkt.payload)

    def send_ssdp(self, msg: SsdpMessage, *, src: Optional[str] = None, sport: Optional[int] = None,
                  kind: str = "ssdp") -> None:
        self.host.send(Multicast(SSDP_GROUP), serialize_ssdp(msg), src=src,
                       sport=self.host.ephemeral_port() if sport is None else sport, dport=SSDP_PORT, kind=kind)

    def raw_subscribe(self, host: str, path: str, callback: str) -> None:
        """Fire a SUBSCRIBE without waiting for the answer."""
        req = HttpExchange.request("SUBSCRIBE", path, [("HOST", host), ("CALLBACK", f"<{callback}>"),
                                                       ("NT", "upnp:event"), *self.token_headers()])
        self.host.send(Unicast(host), serialize_http(req), sport=self.host.ephemeral_port(), dport=80,
                       kind="http-request")


def _external_server(net: Network, host_id: str) -> Host:
    """An Internet web server outside the home network; answers any request with 200."""
    host = net.create_host(host_id)

    def handle(pkt: SimPacket) -> None:
        try:
            req = parse_http(pkt.payload)
        except WireError:
            return
        if req.is_request:
            resp = HttpExchange.response(200, body=encode_canonical({"server": host_id}))
            host.send(Unicast(pkt.src), serialize_http(resp), sport=pkt.dport, dport=pkt.sport, kind="http-response")

    host.handler = handle
    return host


def _padded(msg: SsdpMessage, size: int) -> SsdpMessage:
    if not size:
        return msg
    try:
        return pad_ssdp(msg, size)
    except ValueError:
        return msg


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    mode: Mode = Mode.BASELINE
    seed: int = 0
    params: dict = field(default_factory=dict)


@dataclass
class ScenarioReport:
    name: str
    mode: Mode
    attack_succeeded: bool
    detected: bool
    prevented: bool
    evidence: dict
    seed: int = 0
    params: dict = field(default_factory=dict)
    log: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "record": "scenario",
            "name": self.name,
            "mode": self.mode.value,
            "seed": self.seed,
            "params": dict(sorted(self.params.items())),
            "attack_succeeded": self.attack_succeeded,
            "detected": self.detected,
            "prevented": self.prevented,
            "evidence": self.evidence,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _report(lab: Lab, name: str, params: dict, succeeded: bool, evidence: dict,
            reflected: int = 0, hosts: Iterable[str] = ()) -> ScenarioReport:
    denies = lab.denies()
    evidence = dict(evidence)
    evidence["deny_events"] = len(denies)
    evidence["deny_reasons"] = dict(sorted(Counter(e.decision for e in denies).items()))
    evidence["deny_excerpt"] = [e.to_line() for e in denies[:5]]
    evidence["metrics"] = {h: lab.net.metrics[h].snapshot() for h in sorted(hosts)}
    attack_log = [r for r in lab.net.log if r.origin in lab.adversaries]
    evidence["attack_packets"] = len(attack_log)
    evidence["log_excerpt"] = [r.to_line() for r in attack_log[:5]]
    return ScenarioReport(
        name,
        lab.mode,
        attack_succeeded=succeeded,
        detected=bool(denies),
        prevented=not succeeded and reflected == 0,
        evidence=evidence,
        seed=lab.seed,
        params=dict(params),
        log=[r.to_line() for r in lab.net.log],
    )


def _factor(lab: Lab, victim: str) -> tuple[int, str, float]:
    reflected = lab.net.metrics[victim].reflected_in.get(ADVERSARY, 0)
    try:
        factor = amplification_factor(lab.net.metrics, ADVERSARY, victim)
    except ZeroDivisionError:
        return reflected, "0", 0.0
    return reflected, str(factor), float(factor)


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------


def adv_forgery(lab: Lab, p: dict) -> ScenarioReport:
    """Impersonate the camera: copy its documents and advertise them from the adversary."""
    camera = lab.camera()
    cp = lab.control_point()
    adv = lab.adversary([f"ADVERTISE:{CAMERA_TYPE}"])
    camera.advertise()
    lab.net.run_until_idle()
    for record in cp.discover(CAMERA_TYPE):
        cp.fetch_descriptions(record)
    lab.start_attack()

    device, services = adv.cp.fetch_descriptions(description_url(camera.id))
    adv.device = Device(lab.net, adv.id, device, services, host=adv.host)
    replayed = adv.sniffed_tokens.get(camera.id)
    for ref in device.services:
        extra = [(CAPTOKEN_HEADER, replayed)] if lab.secured and replayed else []
        msg = SsdpMessage.notify(ref.service_type, adv.device.usn(ref.service_type), adv.device.location, extra=extra)
        adv.send_ssdp(msg, sport=SSDP_PORT, kind="ssdp-notify")
    lab.net.run_until_idle()

    hijacked = [d for d in cp.discovered.values() if d.service_type == CAMERA_TYPE and d.source == adv.id]
    forged_docs = False
    if hijacked:
        forged, _ = cp.fetch_descriptions(hijacked[0])
        forged_docs = forged.udn == camera.description.udn
    return _report(lab, "AdvForgery", p, bool(hijacked), {
        "hijacked_usns": sorted(d.usn for d in hijacked),
        "forged_documents_accepted": forged_docs,
        "replayed_token": bool(replayed) and lab.secured,
    }, hosts=[adv.id, cp.id])


def adv_flood(lab: Lab, p: dict) -> ScenarioReport:
    """Flood the network with advertisements of fake camera services."""
    camera = lab.camera()
    cp = lab.control_point()
    adv = lab.adversary([f"ADVERTISE:{CAMERA_TYPE}"])
    camera.advertise()
    lab.start_attack()

    location = f"http://{adv.id}/desc/device"
    for i in range(p["flood_count"]):
        msg = SsdpMessage.notify(CAMERA_TYPE, f"uuid:fake-{i}::{CAMERA_TYPE}", location, extra=adv.token_headers())
        adv.send_ssdp(msg, sport=SSDP_PORT, kind="ssdp-notify")
    lab.net.run_until_idle()

    admitted = cp.admissions[adv.id]
    return _report(lab, "AdvFlood", p, admitted >= p["flood_count"], {
        "adversary_notifies_admitted": admitted,
        "cp_notifies_received": cp.counters["notify_received"],
        "cache_size": len(cp.discovered),
    }, hosts=[adv.id, cp.id])


def discovery_reply(lab: Lab, p: dict) -> ScenarioReport:
    """Capture the CP's M-SEARCH and replay it to harvest answers meant for the CP."""
    camera = lab.camera()
    gateway = lab.gateway()
    cp = lab.control_point()
    adv = lab.adversary(["DISCOVER:*"])
    cp.discover(CAMERA_TYPE)
    lab.start_attack()

    captured = list(adv.sniffed_searches)
    for raw in captured[:1] * p["replays"]:
        port = adv.host.ephemeral_port()
        adv.replay_ports.add(port)
        adv.host.send(Multicast(SSDP_GROUP), raw, sport=port, dport=SSDP_PORT, kind="ssdp-msearch")
    lab.net.run_until_idle()

    return _report(lab, "DiscoveryReply", p, adv.replay_answers > 0, {
        "captured_searches": len(captured),
        "replays_sent": min(len(captured), 1) * p["replays"],
        "answers_harvested": adv.replay_answers,
        "sd_answers": camera.answered_to[adv.id] + gateway.answered_to[adv.id],
    }, hosts=[adv.id, camera.id])


def discovery_flood(lab: Lab, p: dict) -> ScenarioReport:
    """Exhaust SD work with far more M-SEARCH requests than usual."""
    camera = lab.camera()
    cp = lab.control_point()
    adv = lab.adversary(["DISCOVER:*"])
    cp.discover(CAMERA_TYPE)
    lab.start_attack()

    msg = SsdpMessage.msearch(CAMERA_TYPE, 2, extra=adv.token_headers())
    for _ in range(p["flood_count"]):
        adv.send_ssdp(msg, kind="ssdp-msearch")
    lab.net.run_until_idle()

    answered = camera.answered_to[adv.id]
    return _report(lab, "DiscoveryFlood", p, answered >= p["flood_count"], {
        "searches_answered": answered,
        "searches_received": camera.counters["msearch_received"],
    }, hosts=[adv.id, camera.id])


def spoofed_discovery_amp(lab: Lab, p: dict) -> ScenarioReport:
    """Reflect M-SEARCH responses from N devices onto a victim by spoofing its address."""
    cameras = [lab.camera(f"camera{i}", index=i, response_size=p["response_size"]) for i in range(p["num_sds"])]
    cp = lab.control_point()
    adv = lab.adversary(["DISCOVER:*"])
    lab.bare_host(VICTIM)
    cp.discover(CAMERA_TYPE)
    lab.start_attack()

    natural = SsdpMessage.msearch("ssdp:all", 2, extra=adv.token_headers())
    msg = _padded(natural, p["request_size"])
    adv.send_ssdp(msg, src=VICTIM, sport=SSDP_PORT, kind="ssdp-msearch")
    lab.net.run_until_idle()

    reflected, factor, factor_float = _factor(lab, VICTIM)
    responses = [r for r in lab.net.log if r.dst == VICTIM and r.origin == adv.id]
    return _report(lab, "SpoofedDiscoveryAmp", p, factor_float > 1, {
        "amplification_factor": factor,
        "amplification_float": factor_float,
        "request_bytes": len(serialize_ssdp(msg)),
        "request_padded": msg is not natural,
        "response_bytes": sorted({r.size for r in responses}),
        "reflected_bytes": reflected,
        "reflected_messages": len(responses),
    }, reflected=reflected, hosts=[adv.id, VICTIM] + [c.id for c in cameras])


def malicious_action(lab: Lab, p: dict) -> ScenarioReport:
    """UPnProxy: install a port mapping that turns the gateway into a proxy to an outside host."""
    gateway = lab.gateway()
    cp = lab.control_point()
    adv = lab.adversary([f"INVOKE:{GATEWAY_TYPE}:AddPortMapping"])
    _external_server(lab.net, EXTERNAL)
    for record in cp.discover(GATEWAY_TYPE):
        cp.fetch_descriptions(record)
    cp.invoke(GATEWAY_TYPE, "GetStatus")
    lab.start_attack()

    fault = ""
    adv.cp.fetch_descriptions(description_url(gateway.id))
    try:
        adv.cp.invoke(GATEWAY_TYPE, "AddPortMapping", {
            "NewExternalPort": p["external_port"], "NewInternalClient": EXTERNAL, "NewInternalPort": 80})
    except Fault as exc:
        fault = exc.reason + (f" {exc.detail}" if exc.detail else "")
    lab.net.run_until_idle()

    # a legitimate client now uses the gateway's external port
    forwarded_reply = False
    url = f"http://{gateway.id}:{p['external_port']}/"
    try:
        resp = cp.request(url, HttpExchange.request("GET", "/", [("HOST", gateway.id)]))
        forwarded_reply = decode_canonical(resp.body).get("server") == EXTERNAL
    except (FetchFailed, WireError):
        pass
    lab.net.run_until_idle()

    mapping = gateway.port_mappings.get(p["external_port"])
    by_adversary = mapping is not None and mapping.creator == adv.id
    return _report(lab, "MaliciousAction", p, by_adversary and forwarded_reply, {
        "mapping_created": by_adversary,
        "mapping_table_size": len(gateway.port_mappings),
        "forwarded_to_external": forwarded_reply,
        "gateway_forwarded_packets": gateway.counters["forwarded"],
        "adversary_fault": fault,
    }, hosts=[adv.id, gateway.id, EXTERNAL])


def subscription_flood(lab: Lab, p: dict) -> ScenarioReport:
    """Fill the camera's subscription table with SUBSCRIBEs from one subject."""
    camera = lab.camera()
    cp = lab.control_point()
    adv = lab.adversary([], insider=True)
    for record in cp.discover(CAMERA_TYPE):
        cp.fetch_descriptions(record)
    lab.start_attack()

    path = lab.catalog.camera[1][0].event_sub_url
    before = camera.counters["subscriptions_accepted"]
    for i in range(p["flood_count"]):
        adv.raw_subscribe(camera.id, path, f"http://{adv.id}:5000/sink/{i}")
    lab.net.run_until_idle()
    accepted = camera.counters["subscriptions_accepted"] - before

    held = sum(1 for s in camera.subscriptions if s.subscriber == adv.id)
    return _report(lab, "SubscriptionFlood", p, camera.high_water >= p["flood_count"], {
        "high_water_mark": camera.high_water,
        "adversary_subscriptions": held,
        "accepted": accepted,
        "rejected": p["flood_count"] - accepted,
        "quota": camera.quota,
    }, hosts=[adv.id, camera.id])


def spoofed_callback_amp(lab: Lab, p: dict) -> ScenarioReport:
    """Subscribe the victim's address as CALLBACK so every event is reflected onto it."""
    cameras = [lab.camera(f"camera{i}", index=i) for i in range(p["num_sds"])]
    cp = lab.control_point()
    adv = lab.adversary([], insider=True)
    lab.bare_host(VICTIM)
    for record in cp.discover(CAMERA_TYPE)[:1]:
        cp.fetch_descriptions(record)
        cp.subscribe(CAMERA_TYPE)
    lab.start_attack()

    path = lab.catalog.camera[1][0].event_sub_url
    for camera in cameras:
        for _ in range(p["subs_per_sd"]):
            adv.raw_subscribe(camera.id, path, f"http://{VICTIM}:5000/evt")
    lab.net.run_until_idle()
    for n in range(p["events"]):
        for camera in cameras:
            camera.publish_event("MotionDetected", str(n % 2))
        lab.net.run_until_idle()

    reflected, factor, factor_float = _factor(lab, VICTIM)
    events_at_victim = sum(1 for r in lab.net.log if r.dst == VICTIM and r.kind == "gena-notify")
    return _report(lab, "SpoofedCallbackAmp", p, reflected > 0 and factor_float > 1, {
        "amplification_factor": factor,
        "amplification_float": factor_float,
        "reflected_bytes": reflected,
        "victim_event_messages": events_at_victim,
        "legit_events_received": len(cp.events),
    }, reflected=reflected, hosts=[adv.id, VICTIM] + [c.id for c in cameras])


ScenarioFn = Callable[[Lab, dict], ScenarioReport]

SCENARIOS: dict[str, tuple[ScenarioFn, dict]] = {
    "AdvForgery": (adv_forgery, {}),
    "AdvFlood": (adv_flood, {"flood_count": 1000}),
    "DiscoveryReply": (discovery_reply, {"replays": 3}),
    "DiscoveryFlood": (discovery_flood, {"flood_count": 1000}),
    "SpoofedDiscoveryAmp": (spoofed_discovery_amp, {"num_sds": 5, "request_size": 0, "response_size": 0}),
    "MaliciousAction": (malicious_action, {"external_port": 8080}),
    "SubscriptionFlood": (subscription_flood, {"flood_count": 1000}),
    "SpoofedCallbackAmp": (spoofed_callback_amp, {"num_sds": 3, "subs_per_sd": 1, "events": 5}),
}

CATEGORIES: dict[str, tuple[str, ...]] = {
    "Malicious Advertisement": ("AdvForgery", "AdvFlood"),
    "Malicious Discovery": ("DiscoveryReply", "DiscoveryFlood", "SpoofedDiscoveryAmp"),
    "Malicious Action": ("MaliciousAction",),
    "Malicious Event Subscription": ("SubscriptionFlood", "SpoofedCallbackAmp"),
}

_LIMITS = {
    "flood_count": (1, 100_000),
    "replays": (1, 10_000),
    "num_sds": (1, 9),
    "request_size": (0, 4096),
    "response_size": (0, 4096),
    "external_port": (1, 65535),
    "subs_per_sd": (1, 1000),
    "events": (0, 10_000),
}


def resolve_params(name: str, params: Optional[dict] = None) -> dict:
    """Scenario defaults overridden by ``params``; values may be ints or decimal strings."""
    if name not in SCENARIOS:
        raise UnknownScenario(f"{name!r}; known: {', '.join(SCENARIOS)}")
    resolved = dict(SCENARIOS[name][1])
    for key, value in (params or {}).items():
        if key not in resolved:
            raise BadParams(f"{name} has no parameter {key!r}")
        if isinstance(value, str):
            if not value.isdigit():
                raise BadParams(f"{key}={value!r} is not a non-negative integer")
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise BadParams(f"{key}={value!r} is not an integer")
        lo, hi = _LIMITS[key]
        if not lo <= value <= hi:
            raise BadParams(f"{key}={value} outside [{lo}, {hi}]")
        resolved[key] = value
    return resolved


def run_scenario(spec: ScenarioSpec, policy: Optional[AbacPolicy] = None,
                 catalog: Optional[Catalog] = None) -> ScenarioReport:
    params = resolve_params(spec.name, spec.params)
    fn = SCENARIOS[spec.name][0]
    return fn(Lab(spec.mode, spec.seed, policy, catalog), params)


# ---------------------------------------------------------------------------
# Matrix
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CategoryResult:
    category: str
    mode: Mode
    attack_succeeded: bool
    detected: bool
    prevented: bool

    def to_dict(self) -> dict:
        return {"record": "category", "category": self.category, "mode": self.mode.value,
                "attack_succeeded": self.attack_succeeded, "detected": self.detected, "prevented": self.prevented}


@dataclass
class Matrix:
    reports: list[ScenarioReport]
    categories: list[CategoryResult]

    def lines(self) -> list[str]:
        rows = [r.to_dict() for r in self.reports] + [c.to_dict() for c in self.categories]
        return [json.dumps(row, sort_keys=True, separators=(",", ":")) for row in rows]

    def category(self, name: str, mode: Mode) -> CategoryResult:
        return next(c for c in self.categories if c.category == name and c.mode is mode)


def aggregate(reports: Iterable[ScenarioReport]) -> list[CategoryResult]:
    """Per category and mode: succeeded if any member succeeded; detected/prevented only if all were."""
    by_key = {(r.name, r.mode): r for r in reports}
    out = []
    for mode in Mode:
        for category, members in CATEGORIES.items():
            rs = [by_key[(m, mode)] for m in members if (m, mode) in by_key]
            if rs:
                out.append(CategoryResult(category, mode, any(r.attack_succeeded for r in rs),
                                          all(r.detected for r in rs), all(r.prevented for r in rs)))
    return out


def run_matrix(seed: int = 0, params: Optional[dict] = None, policy: Optional[AbacPolicy] = None,
               catalog: Optional[Catalog] = None) -> Matrix:
    """Every scenario in both modes. ``params`` apply to whichever scenarios accept them."""
    params = params or {}
    unused = set(params) - {k for _, defaults in SCENARIOS.values() for k in defaults}
    if unused:
        raise BadParams(f"no scenario takes {sorted(unused)}")
    reports = []
    for mode in Mode:
        for name, (_, defaults) in SCENARIOS.items():
            mine = {k: v for k, v in params.items() if k in defaults}
            reports.append(run_scenario(ScenarioSpec(name, mode, seed, mine), policy, catalog))
    return Matrix(reports, aggregate(reports))


def pattern_deviations(matrix: Matrix) -> list[str]:
    """Cells that differ from the expected pattern: baseline all open, secured all closed."""
    problems = []
    for c in matrix.categories:
        expect = c.mode is Mode.SECURED
        for column, value, want in (("attack_succeeded", c.attack_succeeded, not expect),
                                    ("detected", c.detected, expect), ("prevented", c.prevented, expect)):
            if value != want:
                problems.append(f"{c.category} [{c.mode.value}] {column}={value}, expected {want}")
    return problems


def _mark(flag: bool) -> str:
    return "yes" if flag else "no"


def render_matrix(matrix: Matrix) -> str:
    width = max(len(c) for c in CATEGORIES)
    head = f"{'category':<{width}}  {'mode':<8}  {'succeeded':>9}  {'detected':>8}  {'prevented':>9}"
    rows = [head, "-" * len(head)]
    for c in matrix.categories:
        rows.append(f"{c.category:<{width}}  {c.mode.value:<8}  {_mark(c.attack_succeeded):>9}  "
                    f"{_mark(c.detected):>8}  {_mark(c.prevented):>9}")
    return "\n".join(rows)


def render_report(report: ScenarioReport) -> str:
    lines = [f"{report.name} [{report.mode.value}] seed={report.seed}",
             f"  attack succeeded: {_mark(report.attack_succeeded)}",
             f"  detected:         {_mark(report.detected)}",
             f"  prevented:        {_mark(report.prevented)}"]
    for key in sorted(report.evidence):
        if key not in ("metrics", "log_excerpt", "deny_excerpt"):
            lines.append(f"  {key}: {report.evidence[key]}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Legitimate traffic
# ---------------------------------------------------------------------------


@dataclass
class DemoResult:
    mode: Mode
    seed: int
    steps: list[str]
    completed: bool
    events_received: int
    deny_events: int
    failure: str = ""
    log: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.completed and self.events_received == 1 and self.deny_events == 0

    def to_json(self) -> str:
        return json.dumps({
            "record": "demo", "mode": self.mode.value, "seed": self.seed, "steps": self.steps,
            "completed": self.completed, "events_received": self.events_received,
            "deny_events": self.deny_events, "failure": self.failure, "ok": self.ok,
        }, sort_keys=True, separators=(",", ":"))


def run_demo(mode: Mode, seed: int = 0, policy: Optional[AbacPolicy] = None,
             catalog: Optional[Catalog] = None) -> DemoResult:
    """Discover the camera, fetch its descriptions, call GetStatus, subscribe and receive one event."""
    lab = Lab(mode, seed, policy, catalog)
    camera = lab.camera()
    lab.gateway()
    cp = lab.control_point()
    steps: list[str] = []
    failure = ""
    try:
        camera.advertise()
        lab.net.run_until_idle()
        found = cp.discover(CAMERA_TYPE)
        if not found:
            raise FetchFailed("camera not discovered")
        steps.append(f"discover {len(found)}")
        device, services = cp.fetch_descriptions(found[0])
        steps.append(f"describe {device.udn} {len(services)}")
        status = cp.invoke(CAMERA_TYPE, "GetStatus")
        steps.append(f"invoke Status={status.get('Status', '')}")
        sid = cp.subscribe(CAMERA_TYPE)
        steps.append(f"subscribe {sid}")
        camera.publish_event("MotionDetected", "1")
        lab.net.run_until_idle()
        steps.append(f"events {len(cp.events)}")
    except ControlPointError as exc:
        failure = f"{type(exc).__name__}: {exc}"
    return DemoResult(mode, seed, steps, not failure, len(cp.events), len(lab.net.deny_events()), failure,
                      [r.to_line() for r in lab.net.log])
