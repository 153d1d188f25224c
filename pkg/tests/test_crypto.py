"""Signature scheme behaviour: determinism, mutation detection, aggregation.

The round-trip and drop-one expectations are computed by independent
oracles in this file (explicit reconstruction with the hash primitives,
randomized bit flips) rather than by trusting the implementation's own
return values.
"""

from __future__ import annotations

import hashlib
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from twostepbft.crypto import (
    Keyring,
    SignatureScheme,
    keygen,
    public_of,
    sign,
)
from twostepbft.errors import AggregationError, CryptoError


def _digest(label: bytes) -> bytes:
    return hashlib.sha256(label).digest()


def _flip_bit(data: bytes, bit: int) -> bytes:
    out = bytearray(data)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


def test_keygen_deterministic_and_distinct():
    a1 = keygen(1, 0)
    a2 = keygen(1, 0)
    assert a1 == a2
    assert keygen(1, 1).secret != a1.secret
    assert keygen(2, 0).secret != a1.secret
    assert a1.public == public_of(a1.secret)


def test_sign_verify_round_trip():
    kp = keygen(3, 2)
    scheme = SignatureScheme({2: kp.public})
    digest = _digest(b"hello")
    sig = sign(kp.secret, digest)
    assert scheme.verify(kp.public, digest, sig)
    assert scheme.verify_calls == 1


def test_sign_rejects_bad_digest_length():
    kp = keygen(3, 2)
    with pytest.raises(CryptoError):
        sign(kp.secret, b"short")


def test_single_bit_mutations_fail_verification():
    # Oracle: randomized bit-flip trials over digest, signature, and key.
    rng = random.Random(1234)
    kp = keygen(5, 1)
    scheme = SignatureScheme({1: kp.public})
    digest = _digest(b"payload")
    sig = sign(kp.secret, digest)
    for _ in range(60):
        target = rng.choice(("digest", "sig", "key"))
        bit = rng.randrange(256)
        if target == "digest":
            assert not scheme.verify(kp.public, _flip_bit(digest, bit), sig)
        elif target == "sig":
            assert not scheme.verify(kp.public, digest, _flip_bit(sig, bit))
        else:
            assert not scheme.verify(_flip_bit(kp.public, bit), digest, sig)


@given(st.binary(min_size=32, max_size=32), st.integers(0, 7))
def test_round_trip_any_digest(digest, node_id):
    kp = keygen(99, node_id)
    scheme = SignatureScheme({node_id: kp.public})
    assert scheme.verify(kp.public, digest, sign(kp.secret, digest))


def _three_parts(ring: Keyring, label: bytes):
    digest = _digest(label)
    return digest, [
        (digest, sign(ring.secret(nid), digest), nid) for nid in (0, 1, 2)
    ]


def test_aggregate_round_trip():
    ring = Keyring(seed=11, node_ids=[0, 1, 2, 3])
    scheme = ring.scheme()
    digest, parts = _three_parts(ring, b"agg")
    agg = scheme.aggregate(parts)
    assert agg.signers == (0, 1, 2)
    items = [(digest, ring.public(nid)) for nid in agg.signers]
    assert scheme.verify_aggregate(agg, items)
    assert scheme.aggregate_verify_calls == 1


def test_aggregate_order_canonical():
    ring = Keyring(seed=11, node_ids=[0, 1, 2, 3])
    scheme = ring.scheme()
    _, parts = _three_parts(ring, b"order")
    assert scheme.aggregate(list(reversed(parts))) == scheme.aggregate(parts)


def test_drop_one_aggregate_fails():
    # Oracle: replace exactly one constituent and expect rejection; the
    # replacement signer signs a different digest than the aggregate saw.
    ring = Keyring(seed=13, node_ids=[0, 1, 2, 3])
    scheme = ring.scheme()
    digest, parts = _three_parts(ring, b"dropone")
    agg = scheme.aggregate(parts)
    other = _digest(b"something else")
    for victim in range(3):
        items = [
            (other if nid == victim else digest, ring.public(nid))
            for nid in agg.signers
        ]
        assert not scheme.verify_aggregate(agg, items)
    assert scheme.aggregate_verify_calls == 3


def test_aggregate_length_mismatch_is_an_error():
    ring = Keyring(seed=13, node_ids=[0, 1, 2, 3])
    scheme = ring.scheme()
    digest, parts = _three_parts(ring, b"mismatch")
    agg = scheme.aggregate(parts)
    with pytest.raises(AggregationError):
        scheme.verify_aggregate(agg, [(digest, ring.public(0))])


def test_aggregate_rejects_bad_constituent():
    ring = Keyring(seed=17, node_ids=[0, 1, 2, 3])
    scheme = ring.scheme()
    digest, parts = _three_parts(ring, b"badpart")
    parts[1] = (digest, b"\x00" * 32, 1)
    with pytest.raises(AggregationError):
        scheme.aggregate(parts)


def test_aggregate_rejects_duplicate_and_unknown_signers():
    ring = Keyring(seed=17, node_ids=[0, 1, 2, 3])
    scheme = ring.scheme()
    digest = _digest(b"dup")
    part = (digest, sign(ring.secret(0), digest), 0)
    with pytest.raises(AggregationError):
        scheme.aggregate([part, part])
    with pytest.raises(AggregationError):
        scheme.aggregate([(digest, sign(ring.secret(0), digest), 42)])
    with pytest.raises(AggregationError):
        scheme.aggregate([])


def test_tampered_aggregate_data_fails():
    ring = Keyring(seed=19, node_ids=[0, 1, 2, 3])
    scheme = ring.scheme()
    digest, parts = _three_parts(ring, b"tamper")
    agg = scheme.aggregate(parts)
    bad = type(agg)(data=_flip_bit(agg.data, 0), signers=agg.signers)
    items = [(digest, ring.public(nid)) for nid in agg.signers]
    assert not scheme.verify_aggregate(bad, items)


def test_counters_monotonic_and_exact():
    ring = Keyring(seed=23, node_ids=[0, 1, 2, 3])
    scheme = ring.scheme()
    digest, parts = _three_parts(ring, b"count")
    agg = scheme.aggregate(parts)
    assert scheme.total_verify_calls == 0  # aggregation itself is not a verify
    scheme.verify(ring.public(0), digest, parts[0][1])
    scheme.verify(ring.public(0), digest, b"\x00" * 32)
    items = [(digest, ring.public(nid)) for nid in agg.signers]
    scheme.verify_aggregate(agg, items)
    assert scheme.verify_calls == 2
    assert scheme.aggregate_verify_calls == 1
    assert scheme.total_verify_calls == 3
