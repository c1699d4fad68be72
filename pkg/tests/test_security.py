from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from upnplab.errors import (
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
)
from upnplab.security import (
    AbacPolicy,
    CapToken,
    Condition,
    Decision,
    Permission,
    RegistrationAuthority,
    Rule,
    SpecificationDocument,
    Verb,
    abac_evaluate,
    ca_enroll,
    check_ownership,
    enroll_and_register,
    keygen,
    permissions,
    prove_ownership,
    ra_challenge,
    ra_register,
    sign,
    verify,
    verify_operation,
    verify_specification,
)

CAM = "urn:SecurityCamera"
POLICY = AbacPolicy((
    Rule((Condition("sw.svc", "==", CAM),), permissions(f"ADVERTISE:{CAM}")),
    Rule((Condition("sw.role", "in", ("home-app", "admin")),), permissions("DISCOVER:*", f"INVOKE:{CAM}:GetStatus")),
))


@pytest.fixture
def world():
    rng = random.Random(3)
    ca = keygen(rng)
    ra = RegistrationAuthority(keygen(rng), ca.public, POLICY, rng=rng)
    return rng, ca, ra


def test_sign_verify(world):
    rng, _, _ = world
    k, other = keygen(rng), keygen(rng)
    sig = sign(k.private, b"m")
    assert verify(k.public, b"m", sig)
    assert not verify(other.public, b"m", sig)
    assert not verify(k.public, b"m!", sig)
    assert not verify(k.public, b"m", sig[:-1] + bytes([sig[-1] ^ 1]))


def test_signature_fails_for_each_flipped_bit(world):
    rng, _, _ = world
    k = keygen(rng)
    m = bytes(range(16))
    sig = sign(k.private, m)
    for bit in range(64):
        flipped = bytearray(m)
        flipped[bit // 8] ^= 0x80 >> (bit % 8)
        assert not verify(k.public, bytes(flipped), sig)


def test_malformed_keys():
    with pytest.raises(MalformedKey):
        sign(b"short", b"m")
    with pytest.raises(MalformedKey):
        verify(b"short", b"m", b"\0" * 64)


def test_seeded_keygen_is_reproducible():
    assert keygen(random.Random(5)) == keygen(random.Random(5))
    assert keygen(random.Random(5)) != keygen(random.Random(6))


def test_permissions():
    p = Permission.parse(f"INVOKE:{CAM}:GetStatus")
    assert (p.verb, p.target) == (Verb.INVOKE, f"{CAM}:GetStatus")
    assert str(p) == f"INVOKE:{CAM}:GetStatus"
    assert Permission.parse("DISCOVER:*").matches(Verb.DISCOVER, "anything")
    assert not Permission.parse("DISCOVER:*").matches(Verb.INVOKE, "anything")
    for bad in ("ADVERTISE:*", "FLY:x", "INVOKE:", "nocolon"):
        with pytest.raises(InvalidPermission):
            Permission.parse(bad)


def test_enrollment_and_document_checks(world):
    rng, ca, _ = world
    owner = keygen(rng)
    doc = ca_enroll(ca, owner, "camera", {"sensor": "imaging"}, {"svc": CAM})
    assert verify_specification(doc, ca.public)
    assert verify_specification(doc.to_bytes(), ca.public)
    assert SpecificationDocument.from_bytes(doc.to_bytes()) == doc
    assert doc.attribute("hw.sensor") == "imaging" and doc.attribute("sw.missing") is None
    rogue = keygen(rng)
    assert not verify_specification(ca_enroll(rogue, owner, "camera", {"sensor": "imaging"}, {"svc": CAM}), ca.public)
    with pytest.raises(EmptyAttributes):
        ca_enroll(ca, owner, "x", {}, {"svc": CAM})


def test_modified_attributes_break_the_document(world):
    rng, ca, _ = world
    doc = ca_enroll(ca, keygen(rng), "fridge", {"class": "appliance"}, {"svc": "refrigeration"})
    raw = doc.to_bytes().replace(b"refrigeration", b"urn:SecurityCam")
    assert not verify_specification(raw, ca.public)


def test_specification_bytes_are_strict(world):
    rng, ca, _ = world
    raw = ca_enroll(ca, keygen(rng), "c", {"a": "1"}, {"b": "2"}).to_bytes()
    lines = raw.split(b"\n")
    with pytest.raises(MalformedSpecification):
        SpecificationDocument.from_bytes(b"\n".join(reversed(lines[:-1])) + b"\n")
    assert not verify_specification(b"garbage", ca.public)


def test_ownership_puzzle(world):
    rng, ca, ra = world
    owner = keygen(rng)
    nonce = ra_challenge(ra)
    proof = prove_ownership(owner.private, nonce)
    assert check_ownership(owner.public, nonce, proof)
    assert not check_ownership(owner.public, ra_challenge(ra), proof)
    assert not check_ownership(keygen(rng).public, nonce, proof)
    # the proof is domain-separated from ordinary signatures over the nonce
    assert not check_ownership(owner.public, nonce, sign(owner.private, nonce))


def test_nonce_reuse_is_detected(world):
    _, ca, _ = world
    ra = RegistrationAuthority(keygen(random.Random(1)), ca.public, POLICY, rng=random.Random(9))
    ra.challenge()
    ra._rng = random.Random(9)
    with pytest.raises(NonceReuse):
        ra.challenge()


def test_registration_gates(world):
    rng, ca, ra = world
    owner = keygen(rng)
    doc = ca_enroll(ca, owner, "camera", {"sensor": "imaging"}, {"svc": CAM})
    nonce = ra_challenge(ra)
    token = ra_register(ra, doc, permissions(f"ADVERTISE:{CAM}", "DISCOVER:*"), prove_ownership(owner.private, nonce),
                        nonce, now=5)
    assert token.permissions == permissions(f"ADVERTISE:{CAM}")
    assert (token.issued_at, token.expires_at) == (5, 5 + ra.lifetime)
    assert verify_operation(ra.public_key, token, Verb.ADVERTISE, CAM, "camera", 6) is Decision.PERMIT

    forged = ca_enroll(keygen(rng), owner, "camera", {"sensor": "imaging"}, {"svc": CAM})
    nonce = ra_challenge(ra)
    with pytest.raises(SpecInvalid):
        ra_register(ra, forged, permissions(f"ADVERTISE:{CAM}"), prove_ownership(owner.private, nonce), nonce, 0)

    # a leaked document without the owner's key
    thief = keygen(rng)
    nonce = ra_challenge(ra)
    with pytest.raises(OwnershipFailed):
        ra_register(ra, doc, permissions(f"ADVERTISE:{CAM}"), prove_ownership(thief.private, nonce), nonce, 0)
    # the nonce was consumed by the failed attempt
    with pytest.raises(OwnershipFailed):
        ra_register(ra, doc, permissions(f"ADVERTISE:{CAM}"), prove_ownership(owner.private, nonce), nonce, 0)

    fridge_keys = keygen(rng)
    fridge = ca_enroll(ca, fridge_keys, "fridge", {"class": "appliance"}, {"svc": "refrigeration"})
    nonce = ra_challenge(ra)
    with pytest.raises(NothingGranted):
        ra_register(ra, fridge, permissions(f"ADVERTISE:{CAM}"), prove_ownership(fridge_keys.private, nonce), nonce, 0)


def test_enroll_and_register_without_grant(world):
    rng, ca, ra = world
    creds = enroll_and_register(ca, ra, "fridge", {"class": "appliance"}, {"svc": "refrigeration"},
                                permissions(f"ADVERTISE:{CAM}"), rng=rng)
    assert creds.token is None and creds.subject_id == "fridge"


def _token(world, perms=(f"ADVERTISE:{CAM}",), sw=None):
    rng, ca, ra = world
    creds = enroll_and_register(ca, ra, "camera", {"sensor": "imaging"}, sw or {"svc": CAM}, permissions(*perms), now=0,
                                rng=rng)
    return ra, creds.token


def test_verify_operation_decisions(world):
    ra, token = _token(world)
    pk = ra.public_key
    assert verify_operation(pk, token, Verb.ADVERTISE, CAM, "camera", 0) is Decision.PERMIT
    assert verify_operation(pk, token.to_hex(), Verb.ADVERTISE, CAM, "camera", 0) is Decision.PERMIT
    assert verify_operation(pk, token, Verb.ADVERTISE, CAM, "camera", token.expires_at) is Decision.DENY_EXPIRED
    assert verify_operation(pk, token, Verb.ADVERTISE, CAM, "fridge", 0) is Decision.DENY_SUBJECT_MISMATCH
    assert verify_operation(pk, token, Verb.INVOKE, CAM, "camera", 0) is Decision.DENY_INSUFFICIENT
    assert verify_operation(keygen(random.Random(77)).public, token, Verb.ADVERTISE, CAM, "camera", 0) is Decision.DENY_FORGED
    assert verify_operation(pk, "zz", Verb.ADVERTISE, CAM, "camera", 0) is Decision.DENY_FORGED
    assert not Decision.DENY_EXPIRED and Decision.PERMIT


def test_decision_order_forged_before_expired(world):
    ra, token = _token(world)
    raw = bytearray(token.to_bytes())
    raw[raw.index(b"ra_signature=") + 13] ^= 1
    assert verify_operation(ra.public_key, bytes(raw), Verb.ADVERTISE, CAM, "x", 10**9) is Decision.DENY_FORGED


def test_wildcard_discover(world):
    ra, token = _token(world, perms=("DISCOVER:*",), sw={"role": "home-app"})
    assert verify_operation(ra.public_key, token, Verb.DISCOVER, "urn:anything", "camera", 0) is Decision.PERMIT


def test_token_bytes_round_trip_and_strictness(world):
    _, token = _token(world, perms=(f"ADVERTISE:{CAM}",))
    assert CapToken.from_bytes(token.to_bytes()) == token
    assert CapToken.from_hex(token.to_hex()) == token
    with pytest.raises(MalformedToken):
        CapToken.from_hex(token.to_hex().upper())
    with pytest.raises(MalformedToken):
        CapToken.from_bytes(token.to_bytes() + b"extra=1\n")


def test_policy_file_round_trip():
    assert AbacPolicy.from_bytes(POLICY.to_bytes()) == POLICY
    assert AbacPolicy.from_bytes(b"") == AbacPolicy()
    with pytest.raises(BadPolicy):
        AbacPolicy.from_bytes(b"rules/#0/conditions/#0/attr=hw.x\n")
    with pytest.raises(BadPolicy):
        AbacPolicy.from_bytes(b"other=1\n")
    with pytest.raises(BadAttrPath):
        Condition("xx.y", "==", "1")
    with pytest.raises(BadPolicy):
        Condition("hw.y", "<", "1")
    with pytest.raises(BadPolicy):
        Condition("hw.y", "in", "abc")


def test_empty_policy_denies_everything(world):
    rng, ca, _ = world
    doc = ca_enroll(ca, keygen(rng), "c", {"a": "1"}, {"svc": CAM})
    assert abac_evaluate(AbacPolicy(), doc, permissions(f"ADVERTISE:{CAM}")) == frozenset()
    assert abac_evaluate(POLICY, doc, permissions(f"ADVERTISE:{CAM}")) == permissions(f"ADVERTISE:{CAM}")


def test_missing_attribute_never_matches(world):
    rng, ca, _ = world
    doc = ca_enroll(ca, keygen(rng), "c", {"a": "1"}, {"b": "2"})
    policy = AbacPolicy((Rule((Condition("hw.zz", "!=", "x"),), permissions("DISCOVER:*")),))
    assert abac_evaluate(policy, doc, permissions("DISCOVER:*")) == frozenset()


_vals = st.sampled_from(["a", "b", "c"])
_perm_pool = [Permission(v, t) for v in Verb for t in ("s1", "s2")] + [Permission(Verb.DISCOVER, "*")]


@given(st.dictionaries(st.sampled_from(["x", "y"]), _vals, min_size=1),
       st.dictionaries(st.sampled_from(["x", "y"]), _vals, min_size=1),
       st.frozensets(st.sampled_from(_perm_pool)))
def test_grant_is_subset_of_request_and_backed_by_a_rule(hw, sw, requested):
    rng = random.Random(0)
    ca = keygen(rng)
    doc = ca_enroll(ca, keygen(rng), "s", hw, sw)
    policy = AbacPolicy((Rule((Condition("hw.x", "==", "a"),), frozenset(_perm_pool[:4])),
                         Rule((Condition("sw.y", "in", ("a", "b")),), frozenset(_perm_pool[3:]))))
    granted = abac_evaluate(policy, doc, requested)
    assert granted <= requested
    assert all(any(r.matches(doc) and p in r.grants for r in policy.rules) for p in granted)
