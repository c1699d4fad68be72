"""Exception hierarchy shared by every layer of the lab."""

from __future__ import annotations


class UpnpLabError(Exception):
    """Base class for all errors raised by upnplab."""


# ---------------------------------------------------------------------------
# wire
# ---------------------------------------------------------------------------


class WireError(UpnpLabError):
    """A byte string could not be parsed, or a message could not be framed."""


class PayloadTooLarge(WireError):
    pass


class MalformedFraming(WireError):
    """Missing blank-line terminator, or trailing bytes after an SSDP head."""


class MalformedStartLine(WireError):
    pass


class MalformedHeaderLine(WireError):
    pass


class MalformedHeaderValue(WireError):
    def __init__(self, name: str, value: str):
        super().__init__(f"bad value for {name}: {value!r}")
        self.name = name
        self.value = value


class NonUtf8Header(WireError):
    pass


class MissingRequiredHeader(WireError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name


class DuplicateHeader(WireError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name


class LengthMismatch(WireError):
    pass


class InvariantViolation(WireError):
    """Raised when serializing a message that breaks its own structural rules."""


class DocumentError(WireError):
    """Canonical tree encoding/decoding failure."""


class DuplicateKey(DocumentError):
    pass


class NonScalarLeaf(DocumentError):
    pass


class BadEscape(DocumentError):
    pass


class BadKey(DocumentError):
    pass


class MalformedLine(DocumentError):
    pass


# ---------------------------------------------------------------------------
# simnet
# ---------------------------------------------------------------------------


class SimError(UpnpLabError):
    pass


class DuplicateHost(SimError):
    pass


class UnknownHost(SimError):
    pass


class SpoofDenied(SimError):
    pass


# ---------------------------------------------------------------------------
# security
# ---------------------------------------------------------------------------


class SecurityError(UpnpLabError):
    pass


class MalformedKey(SecurityError):
    pass


class MalformedToken(SecurityError):
    pass


class MalformedSpecification(SecurityError):
    pass


class InvalidPermission(SecurityError):
    pass


class EmptyAttributes(SecurityError):
    pass


class BadAttrPath(SecurityError):
    pass


class BadPolicy(SecurityError):
    pass


class NonceReuse(SecurityError):
    pass


class RegistrationError(SecurityError):
    pass


class SpecInvalid(RegistrationError):
    pass


class OwnershipFailed(RegistrationError):
    pass


class NothingGranted(RegistrationError):
    pass


# ---------------------------------------------------------------------------
# device / control point
# ---------------------------------------------------------------------------


class DeviceError(UpnpLabError):
    """Raised by service-device handlers; mapped onto an HTTP fault on the wire."""

    status = 500
    upnp_code = 501
    fault_name = ""

    def __init__(self, detail: str = ""):
        super().__init__(detail or type(self).__name__)
        self.detail = detail


class NotFound(DeviceError):
    status = 404
    upnp_code = 404


class UnknownAction(DeviceError):
    upnp_code = 401


class BadArgs(DeviceError):
    upnp_code = 402


class PortInUse(DeviceError):
    upnp_code = 718


class MissingCallback(DeviceError):
    status = 412
    upnp_code = 412


class UnknownVariable(DeviceError):
    upnp_code = 404


class NotEvented(DeviceError):
    upnp_code = 404


class AccessDenied(DeviceError):
    status = 403
    upnp_code = 606
    fault_name = "Deny"

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class ControlPointError(UpnpLabError):
    pass


class FetchFailed(ControlPointError):
    pass


class MalformedDocument(ControlPointError):
    pass


class Fault(ControlPointError):
    def __init__(self, reason: str, code: str = "", detail: str = ""):
        super().__init__(" ".join(x for x in (reason, code, detail) if x))
        self.reason = reason
        self.code = code
        self.detail = detail


class NoToken(ControlPointError):
    pass


class SubscribeRejected(ControlPointError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


# ---------------------------------------------------------------------------
# attacks
# ---------------------------------------------------------------------------


class ScenarioError(UpnpLabError):
    pass


class UnknownScenario(ScenarioError):
    pass


class BadParams(ScenarioError):
    pass
