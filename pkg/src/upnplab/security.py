"""Capability tokens issued from attribute-based policy.

Participants are enrolled by a certification authority (CA), which issues a
specification document listing their hardware and software attributes. The
document is signed twice: first by the owner over its content, then by the CA
over the content plus the owner's signature.

A registration authority (RA) checks the document, makes the registrant sign
a fresh nonce with the owner key, evaluates its ABAC policy over the
attributes and issues a signed capability token. Peers check tokens offline
with the RA public key (:func:`verify_operation`).

Signatures are Ed25519. Every signed structure is signed over its canonical
tree encoding, and decoding is strict: a token or document whose bytes do not
re-encode identically is rejected.
"""

from __future__ import annotations

import enum
import functools
import os
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import (
    BadAttrPath,
    BadPolicy,
    EmptyAttributes,
    InvalidPermission,
    MalformedKey,
    MalformedSpecification,
    MalformedToken,
    NonceReuse,
    NothingGranted,
    OwnershipFailed,
    SpecInvalid,
    WireError,
)
from .wire import decode_canonical, encode_canonical

KEY_SIZE = 32
SIGNATURE_SIZE = 64
TOKEN_LIFETIME = 10_000
NONCE_SIZE = 32
_OWNERSHIP_CONTEXT = b"upnplab ownership proof\n"


# ---------------------------------------------------------------------------
# Signature primitive
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KeyPair:
    public: bytes
    private: bytes = field(repr=False)


def keygen(rng: Optional[random.Random] = None) -> KeyPair:
    """Fresh Ed25519 key pair; pass a seeded ``rng`` for reproducible keys."""
    seed = rng.randbytes(KEY_SIZE) if rng is not None else os.urandom(KEY_SIZE)
    return KeyPair(_public_of(seed), seed)


def _public_of(private: bytes) -> bytes:
    return _private_key(private).public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


@functools.lru_cache(maxsize=256)
def _private_key(private: bytes) -> Ed25519PrivateKey:
    if not isinstance(private, bytes) or len(private) != KEY_SIZE:
        raise MalformedKey("private key must be 32 bytes")
    return Ed25519PrivateKey.from_private_bytes(private)


@functools.lru_cache(maxsize=1024)
def _public_key(public: bytes) -> Ed25519PublicKey:
    if not isinstance(public, bytes) or len(public) != KEY_SIZE:
        raise MalformedKey("public key must be 32 bytes")
    try:
        return Ed25519PublicKey.from_public_bytes(public)
    except ValueError as exc:
        raise MalformedKey(str(exc)) from exc


def sign(private: bytes, message: bytes) -> bytes:
    return _private_key(private).sign(message)


def verify(public: bytes, message: bytes, signature: bytes) -> bool:
    key = _public_key(public)
    try:
        key.verify(signature, message)
    except InvalidSignature:
        return False
    return True


# ---------------------------------------------------------------------------
# Strict field codecs shared by documents and tokens
# ---------------------------------------------------------------------------

_HEX = re.compile(r"[0-9a-f]*")
_UINT = re.compile(r"0|[1-9][0-9]{0,17}")


def _hex_field(tree: dict, key: str, size: int, error: type[Exception]) -> bytes:
    value = tree.get(key)
    if not isinstance(value, str) or len(value) != 2 * size or not _HEX.fullmatch(value):
        raise error(f"{key}: expected {size} hex bytes")
    return bytes.fromhex(value)


def _uint_field(tree: dict, key: str, error: type[Exception]) -> int:
    value = tree.get(key)
    if not isinstance(value, str) or not _UINT.fullmatch(value):
        raise error(f"{key}: expected a canonical integer")
    return int(value)


def _str_map(value: object, key: str, error: type[Exception]) -> dict[str, str]:
    if not isinstance(value, dict) or not all(isinstance(v, str) for v in value.values()):
        raise error(f"{key}: expected a flat map of strings")
    return dict(value)


def _exact_keys(tree: dict, keys: set[str], error: type[Exception]) -> None:
    if set(tree) != keys:
        raise error(f"unexpected fields {sorted(set(tree) ^ keys)}")


# ---------------------------------------------------------------------------
# Permissions
# ---------------------------------------------------------------------------


class Verb(enum.Enum):
    ADVERTISE = "ADVERTISE"
    DISCOVER = "DISCOVER"
    INVOKE = "INVOKE"
    SUBSCRIBE = "SUBSCRIBE"


@dataclass(frozen=True)
class Permission:
    """``verb`` on ``target``: a service type, or ``service_type:action`` for INVOKE."""

    verb: Verb
    target: str

    def __post_init__(self) -> None:
        if not isinstance(self.verb, Verb):
            raise InvalidPermission(f"unknown verb {self.verb!r}")
        if not isinstance(self.target, str) or not self.target:
            raise InvalidPermission("empty target")
        if self.target == "*" and self.verb is not Verb.DISCOVER:
            raise InvalidPermission("wildcard target is only allowed for DISCOVER")

    def __str__(self) -> str:
        return f"{self.verb.value}:{self.target}"

    @property
    def sort_key(self) -> tuple[str, str]:
        return (self.verb.value, self.target)

    @classmethod
    def parse(cls, text: str) -> "Permission":
        verb, sep, target = text.partition(":")
        try:
            return cls(Verb(verb), target)
        except ValueError:
            raise InvalidPermission(f"bad permission {text!r}") from None

    def matches(self, verb: Verb, target: str) -> bool:
        if self.verb is not verb:
            return False
        return self.target == target or self.target == "*"

    def to_tree(self) -> dict:
        return {"verb": self.verb.value, "target": self.target}

    @classmethod
    def from_tree(cls, tree: object) -> "Permission":
        if not isinstance(tree, dict) or set(tree) != {"verb", "target"}:
            raise InvalidPermission(f"bad permission node {tree!r}")
        try:
            return cls(Verb(tree["verb"]), tree["target"])
        except ValueError:
            raise InvalidPermission(f"unknown verb {tree['verb']!r}") from None


def permissions(*texts: str) -> frozenset[Permission]:
    return frozenset(Permission.parse(t) for t in texts)


def _sorted_perms(perms: Iterable[Permission]) -> list[Permission]:
    return sorted(perms, key=lambda p: p.sort_key)


# ---------------------------------------------------------------------------
# Specification documents (CA enrollment)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpecificationDocument:
    subject_id: str
    subject_public_key: bytes
    hardware_attrs: dict = field(hash=False)
    software_attrs: dict = field(hash=False)
    owner_signature: bytes = b""
    ca_signature: bytes = b""

    def content_tree(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "subject_public_key": self.subject_public_key.hex(),
            "hardware": dict(self.hardware_attrs),
            "software": dict(self.software_attrs),
        }

    def content_bytes(self) -> bytes:
        """What the owner signs."""
        return encode_canonical(self.content_tree())

    def endorsed_bytes(self) -> bytes:
        """What the CA signs: the content plus the owner's signature."""
        tree = self.content_tree()
        tree["owner_signature"] = self.owner_signature.hex()
        return encode_canonical(tree)

    def to_tree(self) -> dict:
        tree = self.content_tree()
        tree["owner_signature"] = self.owner_signature.hex()
        tree["ca_signature"] = self.ca_signature.hex()
        return tree

    def to_bytes(self) -> bytes:
        return encode_canonical(self.to_tree())

    def attribute(self, path: str) -> Optional[str]:
        scope, _, key = path.partition(".")
        if scope == "hw":
            return self.hardware_attrs.get(key)
        if scope == "sw":
            return self.software_attrs.get(key)
        raise BadAttrPath(path)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SpecificationDocument":
        err = MalformedSpecification
        try:
            tree = decode_canonical(raw)
        except WireError as exc:
            raise err(str(exc)) from exc
        _exact_keys(tree, {"subject_id", "subject_public_key", "hardware", "software", "owner_signature", "ca_signature"}, err)
        if not isinstance(tree["subject_id"], str):
            raise err("subject_id")
        doc = cls(
            tree["subject_id"],
            _hex_field(tree, "subject_public_key", KEY_SIZE, err),
            _str_map(tree["hardware"], "hardware", err),
            _str_map(tree["software"], "software", err),
            _hex_field(tree, "owner_signature", SIGNATURE_SIZE, err),
            _hex_field(tree, "ca_signature", SIGNATURE_SIZE, err),
        )
        if doc.to_bytes() != bytes(raw):
            raise err("not in canonical form")
        return doc


def ca_enroll(ca_keys: KeyPair, owner_keys: KeyPair, subject_id: str,
              hw_attrs: dict[str, str], sw_attrs: dict[str, str]) -> SpecificationDocument:
    if not hw_attrs or not sw_attrs:
        raise EmptyAttributes(subject_id)
    doc = SpecificationDocument(subject_id, owner_keys.public, dict(hw_attrs), dict(sw_attrs))
    owner_sig = sign(owner_keys.private, doc.content_bytes())
    doc = SpecificationDocument(subject_id, owner_keys.public, doc.hardware_attrs, doc.software_attrs, owner_sig)
    ca_sig = sign(ca_keys.private, doc.endorsed_bytes())
    return SpecificationDocument(subject_id, owner_keys.public, doc.hardware_attrs, doc.software_attrs, owner_sig, ca_sig)


def verify_specification(doc: Union[SpecificationDocument, bytes], ca_public: bytes) -> bool:
    if isinstance(doc, (bytes, bytearray)):
        try:
            doc = SpecificationDocument.from_bytes(bytes(doc))
        except MalformedSpecification:
            return False
    try:
        return verify(doc.subject_public_key, doc.content_bytes(), doc.owner_signature) and verify(
            ca_public, doc.endorsed_bytes(), doc.ca_signature
        )
    except (MalformedKey, WireError):
        return False


# ---------------------------------------------------------------------------
# Ownership puzzle
# ---------------------------------------------------------------------------


def prove_ownership(owner_private: bytes, nonce: bytes) -> bytes:
    return sign(owner_private, _OWNERSHIP_CONTEXT + nonce)


def check_ownership(subject_public: bytes, nonce: bytes, proof: bytes) -> bool:
    try:
        return verify(subject_public, _OWNERSHIP_CONTEXT + nonce, proof)
    except MalformedKey:
        return False


# ---------------------------------------------------------------------------
# ABAC
# ---------------------------------------------------------------------------

OPERATORS = ("==", "!=", "in")
_ATTR_PATH = re.compile(r"(hw|sw)\.[^/=\n\r\\#][^/=\n\r\\]*")


@dataclass(frozen=True)
class Condition:
    attr_path: str
    op: str
    value: Union[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        if not _ATTR_PATH.fullmatch(self.attr_path):
            raise BadAttrPath(self.attr_path)
        if self.op not in OPERATORS:
            raise BadPolicy(f"unknown operator {self.op!r}")
        if self.op == "in":
            if isinstance(self.value, str) or not self.value:
                raise BadPolicy("'in' needs a non-empty tuple of values")
            object.__setattr__(self, "value", tuple(self.value))
        elif not isinstance(self.value, str):
            raise BadPolicy(f"{self.op!r} needs a string value")

    def holds(self, doc: SpecificationDocument) -> bool:
        actual = doc.attribute(self.attr_path)
        if actual is None:
            return False
        if self.op == "==":
            return actual == self.value
        if self.op == "!=":
            return actual != self.value
        return actual in self.value

    def to_tree(self) -> dict:
        tree = {"attr": self.attr_path, "op": self.op}
        if self.op == "in":
            tree["values"] = [{"value": v} for v in self.value]
        else:
            tree["value"] = self.value
        return tree

    @classmethod
    def from_tree(cls, tree: dict) -> "Condition":
        try:
            if tree["op"] == "in":
                return cls(tree["attr"], "in", tuple(v["value"] for v in tree["values"]))
            return cls(tree["attr"], tree["op"], tree["value"])
        except (KeyError, TypeError) as exc:
            raise BadPolicy(f"bad condition {tree!r}") from exc


@dataclass(frozen=True)
class Rule:
    conditions: tuple[Condition, ...]
    grants: frozenset[Permission]

    def matches(self, doc: SpecificationDocument) -> bool:
        return all(c.holds(doc) for c in self.conditions)

    def to_tree(self) -> dict:
        tree: dict = {"grants": [p.to_tree() for p in _sorted_perms(self.grants)]}
        if self.conditions:
            tree["conditions"] = [c.to_tree() for c in self.conditions]
        return tree


@dataclass(frozen=True)
class AbacPolicy:
    """Ordered rules; a rule grants its permissions when all its conditions hold."""

    rules: tuple[Rule, ...] = ()

    def to_tree(self) -> dict:
        return {"rules": [r.to_tree() for r in self.rules]} if self.rules else {}

    def to_bytes(self) -> bytes:
        return encode_canonical(self.to_tree())

    @classmethod
    def from_tree(cls, tree: dict) -> "AbacPolicy":
        if not tree:
            return cls()
        if set(tree) != {"rules"} or not isinstance(tree["rules"], list):
            raise BadPolicy("policy must contain exactly a 'rules' list")
        rules = []
        for node in tree["rules"]:
            if not set(node) <= {"conditions", "grants"} or "grants" not in node:
                raise BadPolicy(f"bad rule {node!r}")
            try:
                grants = frozenset(Permission.from_tree(g) for g in node["grants"])
            except (InvalidPermission, TypeError) as exc:
                raise BadPolicy(str(exc)) from exc
            conditions = tuple(Condition.from_tree(c) for c in node.get("conditions", []))
            rules.append(Rule(conditions, grants))
        return cls(tuple(rules))

    @classmethod
    def from_bytes(cls, raw: bytes) -> "AbacPolicy":
        try:
            return cls.from_tree(decode_canonical(raw))
        except WireError as exc:
            raise BadPolicy(str(exc)) from exc

    @classmethod
    def load(cls, path: Union[str, Path]) -> "AbacPolicy":
        return cls.from_bytes(Path(path).read_bytes())


def abac_evaluate(policy: AbacPolicy, doc: SpecificationDocument, requested: Iterable[Permission]) -> frozenset[Permission]:
    """Requested permissions granted by at least one fully matching rule (default deny)."""
    grantable: set[Permission] = set()
    for rule in policy.rules:
        if rule.matches(doc):
            grantable |= rule.grants
    return frozenset(requested) & grantable


# ---------------------------------------------------------------------------
# Capability tokens
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CapToken:
    subject_id: str
    subject_public_key: bytes
    permissions: frozenset[Permission]
    issued_at: int
    expires_at: int
    ra_signature: bytes = b""

    def content_tree(self) -> dict:
        tree = {
            "subject_id": self.subject_id,
            "subject_public_key": self.subject_public_key.hex(),
            "issued_at": str(self.issued_at),
            "expires_at": str(self.expires_at),
        }
        if self.permissions:
            tree["permissions"] = [p.to_tree() for p in _sorted_perms(self.permissions)]
        return tree

    def content_bytes(self) -> bytes:
        return encode_canonical(self.content_tree())

    def to_bytes(self) -> bytes:
        tree = self.content_tree()
        tree["ra_signature"] = self.ra_signature.hex()
        return encode_canonical(tree)

    def to_hex(self) -> str:
        return self.to_bytes().hex()

    def allows(self, verb: Verb, target: str) -> bool:
        return any(p.matches(verb, target) for p in self.permissions)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CapToken":
        err = MalformedToken
        try:
            tree = decode_canonical(raw)
        except WireError as exc:
            raise err(str(exc)) from exc
        _exact_keys(tree, {"subject_id", "subject_public_key", "issued_at", "expires_at", "permissions", "ra_signature"}, err)
        if not isinstance(tree["subject_id"], str) or not isinstance(tree["permissions"], list):
            raise err("bad field types")
        try:
            perms = [Permission.from_tree(p) for p in tree["permissions"]]
        except InvalidPermission as exc:
            raise err(str(exc)) from exc
        token = cls(
            tree["subject_id"],
            _hex_field(tree, "subject_public_key", KEY_SIZE, err),
            frozenset(perms),
            _uint_field(tree, "issued_at", err),
            _uint_field(tree, "expires_at", err),
            _hex_field(tree, "ra_signature", SIGNATURE_SIZE, err),
        )
        if len(token.permissions) != len(perms) or token.to_bytes() != bytes(raw):
            raise err("not in canonical form")
        return token

    @classmethod
    def from_hex(cls, text: str) -> "CapToken":
        if not _HEX.fullmatch(text) or len(text) % 2:
            raise MalformedToken("token is not lowercase hex")
        return cls.from_bytes(bytes.fromhex(text))


class Decision(enum.Enum):
    PERMIT = "Permit"
    DENY_EXPIRED = "DenyExpired"
    DENY_FORGED = "DenyForged"
    DENY_SUBJECT_MISMATCH = "DenySubjectMismatch"
    DENY_INSUFFICIENT = "DenyInsufficient"

    def __bool__(self) -> bool:
        return self is Decision.PERMIT


def verify_operation(ra_public: bytes, token: Union[CapToken, bytes, str], verb: Verb, target: str,
                     claimed_subject: str, now: int) -> Decision:
    """Decide locally whether ``token`` lets ``claimed_subject`` do ``verb`` on ``target``.

    ``token`` may be a parsed token, its canonical bytes, or their hex form.
    """
    try:
        if isinstance(token, str):
            token = CapToken.from_hex(token)
        elif isinstance(token, (bytes, bytearray)):
            token = CapToken.from_bytes(bytes(token))
        ok = verify(ra_public, token.content_bytes(), token.ra_signature)
    except (MalformedToken, MalformedKey, WireError):
        return Decision.DENY_FORGED
    if not ok:
        return Decision.DENY_FORGED
    if now >= token.expires_at:
        return Decision.DENY_EXPIRED
    if claimed_subject != token.subject_id:
        return Decision.DENY_SUBJECT_MISMATCH
    if not token.allows(verb, target):
        return Decision.DENY_INSUFFICIENT
    return Decision.PERMIT


# ---------------------------------------------------------------------------
# Registration authority
# ---------------------------------------------------------------------------


class RegistrationAuthority:
    def __init__(self, keys: KeyPair, ca_public: bytes, policy: AbacPolicy, *,
                 rng: Optional[random.Random] = None, lifetime: int = TOKEN_LIFETIME):
        if lifetime <= 0:
            raise ValueError("token lifetime must be positive")
        self.keys = keys
        self.ca_public = ca_public
        self.policy = policy
        self.lifetime = lifetime
        self._rng = rng
        self._issued: set[bytes] = set()
        self._outstanding: set[bytes] = set()

    @property
    def public_key(self) -> bytes:
        return self.keys.public

    def challenge(self) -> bytes:
        nonce = self._rng.randbytes(NONCE_SIZE) if self._rng is not None else os.urandom(NONCE_SIZE)
        if nonce in self._issued:
            raise NonceReuse(nonce.hex())
        self._issued.add(nonce)
        self._outstanding.add(nonce)
        return nonce

    def register(self, doc: SpecificationDocument, requested: Iterable[Permission], proof: bytes,
                 nonce: bytes, now: int) -> CapToken:
        """Issue a token once the document, the ownership proof and the policy all pass."""
        if not verify_specification(doc, self.ca_public):
            raise SpecInvalid(doc.subject_id)
        if nonce not in self._outstanding:
            raise OwnershipFailed("unknown or already used nonce")
        self._outstanding.discard(nonce)
        if not check_ownership(doc.subject_public_key, nonce, proof):
            raise OwnershipFailed(doc.subject_id)
        granted = abac_evaluate(self.policy, doc, requested)
        if not granted:
            raise NothingGranted(doc.subject_id)
        token = CapToken(doc.subject_id, doc.subject_public_key, granted, now, now + self.lifetime)
        return CapToken(token.subject_id, token.subject_public_key, token.permissions, token.issued_at,
                        token.expires_at, sign(self.keys.private, token.content_bytes()))


def ra_challenge(ra: RegistrationAuthority) -> bytes:
    return ra.challenge()


def ra_register(ra: RegistrationAuthority, doc: SpecificationDocument, requested: Iterable[Permission],
                proof: bytes, nonce: bytes, now: int) -> CapToken:
    return ra.register(doc, requested, proof, nonce, now)


@dataclass
class Credentials:
    """What an enrolled participant carries into the network."""

    keys: KeyPair
    specification: SpecificationDocument
    token: Optional[CapToken]
    ra_public: bytes

    @property
    def subject_id(self) -> str:
        return self.specification.subject_id


def enroll_and_register(ca_keys: KeyPair, ra: RegistrationAuthority, subject_id: str,
                        hw_attrs: dict[str, str], sw_attrs: dict[str, str],
                        requested: Iterable[Permission], now: int = 0,
                        rng: Optional[random.Random] = None) -> Credentials:
    """Full onboarding flow. A participant the policy grants nothing gets ``token=None``."""
    keys = keygen(rng)
    doc = ca_enroll(ca_keys, keys, subject_id, hw_attrs, sw_attrs)
    nonce = ra.challenge()
    try:
        token: Optional[CapToken] = ra.register(doc, requested, prove_ownership(keys.private, nonce), nonce, now)
    except NothingGranted:
        token = None
    return Credentials(keys, doc, token, ra.public_key)
