"""Deterministic aggregatable signatures for simulation.

This is a test scheme, not real cryptography: a signature is an HMAC keyed
by material derived from the signer's public key, so verifiers can recompute
it without pairings and simulations stay fast and reproducible.  What the
scheme does preserve, and what the tests pin down, is the checking behaviour
real aggregate signatures would give us: any single-bit change to a digest,
signature, or key makes verification fail, and an aggregate is accepted only
if every constituent signer signed exactly its claimed digest.

Verification work is counted on the scheme instance (one tick per verify,
one per verify_aggregate) so traces can report how much checking a protocol
step performed.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

from .errors import AggregationError, CryptoError

DIGEST_LEN = 32

_KEYGEN_TAG = b"twostepbft/keygen/"
_PUB_TAG = b"twostepbft/pub/"
_SIG_TAG = b"twostepbft/sig/"
_AGG_TAG = b"twostepbft/agg/"


def _h(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class KeyPair:
    node_id: int
    secret: bytes
    public: bytes


@dataclass(frozen=True)
class AggregateSignature:
    """Constant-size digest standing in for an aggregated signature.

    signers records whose signatures went in, in ascending node order; the
    data commits to (signer, digest, signature) triples in that order.
    """

    data: bytes
    signers: tuple[int, ...]


def keygen(seed: int, node_id: int) -> KeyPair:
    secret = _h(_KEYGEN_TAG + seed.to_bytes(8, "big") + node_id.to_bytes(8, "big"))
    return KeyPair(node_id=node_id, secret=secret, public=_h(_PUB_TAG + secret))


def public_of(secret: bytes) -> bytes:
    return _h(_PUB_TAG + secret)


def _expected_sig(public: bytes, digest: bytes) -> bytes:
    return hmac.new(_h(_SIG_TAG + public), digest, hashlib.sha256).digest()


def sign(secret: bytes, digest: bytes) -> bytes:
    if len(digest) != DIGEST_LEN:
        raise CryptoError(f"digest must be {DIGEST_LEN} bytes, got {len(digest)}")
    return _expected_sig(public_of(secret), digest)


class SignatureScheme:
    """Verification context: a public-key directory plus work counters."""

    def __init__(self, publics: dict[int, bytes]):
        self.publics = dict(publics)
        self.verify_calls = 0
        self.aggregate_verify_calls = 0

    @property
    def total_verify_calls(self) -> int:
        return self.verify_calls + self.aggregate_verify_calls

    def verify(self, public: bytes, digest: bytes, sig: bytes) -> bool:
        self.verify_calls += 1
        if len(digest) != DIGEST_LEN or len(sig) != DIGEST_LEN:
            return False
        return hmac.compare_digest(_expected_sig(public, digest), sig)

    def verify_by_id(self, node_id: int, digest: bytes, sig: bytes) -> bool:
        public = self.publics.get(node_id)
        if public is None:
            self.verify_calls += 1
            return False
        return self.verify(public, digest, sig)

    def aggregate(self, parts: list[tuple[bytes, bytes, int]]) -> AggregateSignature:
        """Combine (digest, signature, node_id) parts into one aggregate.

        Parts are canonicalised to ascending node order.  Every constituent
        is checked against the directory up front: aggregation is performed
        by a node that just validated these signatures, so a bad part is a
        caller bug, not a runtime condition to tolerate.
        """
        if not parts:
            raise AggregationError("cannot aggregate zero signatures")
        ordered = sorted(parts, key=lambda p: p[2])
        signers = tuple(p[2] for p in ordered)
        if len(set(signers)) != len(signers):
            raise AggregationError("duplicate signer in aggregate")
        acc = hashlib.sha256(_AGG_TAG)
        for digest, sig, node_id in ordered:
            public = self.publics.get(node_id)
            if public is None:
                raise AggregationError(f"unknown signer {node_id}")
            if len(digest) != DIGEST_LEN or not hmac.compare_digest(
                _expected_sig(public, digest), sig
            ):
                raise AggregationError(f"invalid constituent signature from {node_id}")
            acc.update(node_id.to_bytes(8, "big"))
            acc.update(digest)
            acc.update(sig)
        return AggregateSignature(data=acc.digest(), signers=signers)

    def verify_aggregate(
        self, agg: AggregateSignature, items: list[tuple[bytes, bytes]]
    ) -> bool:
        """Check an aggregate against per-signer (digest, public_key) items.

        items[i] belongs to agg.signers[i]; digests may differ per signer.
        A length mismatch is a caller error, not a failed verification.
        """
        self.aggregate_verify_calls += 1
        if len(items) != len(agg.signers):
            raise AggregationError(
                f"{len(items)} items for {len(agg.signers)} signers"
            )
        acc = hashlib.sha256(_AGG_TAG)
        for node_id, (digest, public) in zip(agg.signers, items):
            if len(digest) != DIGEST_LEN:
                return False
            acc.update(node_id.to_bytes(8, "big"))
            acc.update(digest)
            acc.update(_expected_sig(public, digest))
        return hmac.compare_digest(acc.digest(), agg.data)


class Keyring:
    """All key material for one simulated network, derived from one seed."""

    def __init__(self, seed: int, node_ids: list[int]):
        self.seed = seed
        self.pairs = {nid: keygen(seed, nid) for nid in node_ids}

    def secret(self, node_id: int) -> bytes:
        return self.pairs[node_id].secret

    def public(self, node_id: int) -> bytes:
        return self.pairs[node_id].public

    def publics(self) -> dict[int, bytes]:
        return {nid: kp.public for nid, kp in self.pairs.items()}

    def scheme(self) -> SignatureScheme:
        return SignatureScheme(self.publics())
