from __future__ import annotations

import pytest

from upnplab.attacks import Lab
from upnplab.controlpoint import AdvertDecision, ControlPoint, Via, description_url, verify_advertisement
from upnplab.device import CAMERA_TYPE, GATEWAY_TYPE, Mode, camera_service
from upnplab.errors import FetchFailed, Fault, NoToken, SubscribeRejected
from upnplab.wire import SsdpMessage


@pytest.fixture(params=list(Mode), ids=lambda m: m.value)
def lab(request):
    return Lab(request.param, 4)


def test_discovery_describe_invoke_subscribe(lab):
    cam = lab.camera()
    cp = lab.control_point()
    (found,) = cp.discover(CAMERA_TYPE)
    assert (found.source, found.via, found.location) == ("camera", Via.SEARCH_RESPONSE, cam.location)
    assert (found.token is not None) == lab.secured
    device, services = cp.fetch_descriptions(found)
    assert device == cam.description and services == [camera_service()]
    assert cp.invoke(CAMERA_TYPE, "GetStatus") == {"Status": "ok"}
    sid = cp.subscribe(CAMERA_TYPE)
    cam.publish_event("MotionDetected", "1")
    lab.net.run_until_idle()
    assert [(e.sid, e.seq, e.properties) for e in cp.events] == [(sid, 0, {"MotionDetected": "1"})]
    assert lab.net.deny_events() == []


def test_advertisements_are_admitted(lab):
    cam = lab.camera()
    cp = lab.control_point()
    cam.advertise()
    lab.net.run_until_idle()
    (record,) = cp.discovered.values()
    assert record.via is Via.ADVERTISEMENT and cp.admissions == {"camera": 1}


def test_discover_filters_by_type():
    lab = Lab(Mode.BASELINE, 0)
    lab.camera()
    lab.gateway()
    cp = lab.control_point()
    assert [d.service_type for d in cp.discover("ssdp:all")] == [CAMERA_TYPE, GATEWAY_TYPE]
    assert [d.service_type for d in cp.discover(GATEWAY_TYPE)] == [GATEWAY_TYPE]


def test_request_timeout_and_faults():
    lab = Lab(Mode.BASELINE, 0)
    lab.camera()
    cp = lab.control_point()
    with pytest.raises(FetchFailed):
        cp.fetch_descriptions(description_url("nobody"))
    assert lab.net.now == cp.timeout
    with pytest.raises(FetchFailed):
        cp.get_document("http://camera/missing")
    with pytest.raises(Fault) as info:
        cp.invoke(CAMERA_TYPE, "GetStatus")
    assert info.value.reason == "UnknownService"
    cp.fetch_descriptions(description_url("camera"))
    with pytest.raises(Fault) as info:
        cp.invoke(CAMERA_TYPE, "Reboot")
    assert info.value.reason == "UnknownAction"


def test_secured_cp_without_token():
    lab = Lab(Mode.SECURED, 0)
    lab.camera()
    creds = lab.enroll("cp", {"class": "toaster"}, {"svc": "bread"}, ["DISCOVER:*"])
    assert creds.token is None
    cp = ControlPoint(lab.net, "cp", mode=Mode.SECURED, credentials=creds)
    assert cp.discover(CAMERA_TYPE) == []
    cp.fetch_descriptions(description_url("camera"))
    with pytest.raises(NoToken):
        cp.invoke(CAMERA_TYPE, "GetStatus")
    with pytest.raises(ValueError):
        ControlPoint(lab.net, "cp2", mode=Mode.SECURED)


def test_secured_subscribe_rejected_for_foreign_callback():
    lab = Lab(Mode.SECURED, 0)
    lab.camera()
    cp = lab.control_point()
    cp.fetch_descriptions(description_url("camera"))
    with pytest.raises(SubscribeRejected) as info:
        cp.subscribe(CAMERA_TYPE, callback_url="http://victim:5000/evt")
    assert info.value.reason == "DenyCallback"


def test_verify_advertisement_outcomes():
    lab = Lab(Mode.SECURED, 0)
    cam = lab.camera()
    token = cam.credentials.token
    pk = lab.ra.public_key
    (msg,) = cam.advertisements()
    assert verify_advertisement(pk, msg, token, "camera", 0) is AdvertDecision.ACCEPT
    assert verify_advertisement(pk, msg, None, "camera", 0) is AdvertDecision.REJECT_UNAUTHORIZED
    assert verify_advertisement(pk, msg, token, "adv", 0) is AdvertDecision.REJECT_FORGED
    assert verify_advertisement(pk, msg, token.to_hex()[:-2] + "00", "camera", 0) is AdvertDecision.REJECT_FORGED
    other = SsdpMessage.notify("urn:Other", "u", cam.location)
    assert verify_advertisement(pk, other, token, "camera", 0) is AdvertDecision.REJECT_UNAUTHORIZED
    moved = SsdpMessage.notify(CAMERA_TYPE, "u", "http://elsewhere/desc/device")
    assert verify_advertisement(pk, moved, token, "camera", 0) is AdvertDecision.REJECT_FORGED
    assert verify_advertisement(pk, msg, token, "camera", token.expires_at) is AdvertDecision.REJECT_UNAUTHORIZED
    assert not AdvertDecision.REJECT_FORGED and AdvertDecision.ACCEPT
