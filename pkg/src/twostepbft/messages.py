"""Protocol values: blocks, votes, certificates, and the view-change family.

Each type carries a canonical binary encoding (field order as declared, using
the wire primitives) and a signing digest formed by hashing a domain tag plus
that encoding.  Identity and signing never share bytes across families.

Certificate constructors enforce quorum arithmetic at build time: a
certificate object that exists is structurally well formed, and only its
signatures remain to be checked by a verifier.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from . import wire
from .crypto import AggregateSignature, Keyring, SignatureScheme, sign
from .errors import CodecError, ConfigError, InputError, ProtocolViolation, QuorumError

ZERO_HASH = b"\x00" * 32

QC_KINDS = ("block", "ready", "view")

PRIMARY_MODES = ("round_robin", "seeded_random")


def _tagged(tag: bytes, data: bytes) -> bytes:
    return hashlib.sha256(tag + data).digest()


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class Config:
    """Static parameters of one replicated group."""

    n: int
    timeout_base_ms: int
    primary_mode: str = "round_robin"
    primary_seed: int = 0

    def __post_init__(self):
        if self.n < 4 or (self.n - 1) % 3 != 0:
            raise ConfigError(f"n must be 3f+1 for some f >= 1, got {self.n}")
        if self.timeout_base_ms <= 0:
            raise ConfigError("timeout_base_ms must be positive")
        if self.primary_mode not in PRIMARY_MODES:
            raise ConfigError(f"unknown primary_mode {self.primary_mode!r}")

    @property
    def f(self) -> int:
        return (self.n - 1) // 3

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1


def primary_of(view: int, config: Config) -> int:
    """Primary for a view: fixed rotation, or a seed-keyed pseudorandom draw."""
    if config.primary_mode == "round_robin":
        return view % config.n
    raw = _tagged(
        b"twostepbft/primary", wire.u64(config.primary_seed) + wire.u64(view)
    )
    return int.from_bytes(raw, "big") % config.n


# ---------------------------------------------------------------------------
# client requests


@dataclass(frozen=True)
class ClientRequest:
    client: int
    timestamp: int
    op: bytes
    sig: bytes = b""

    def body(self) -> bytes:
        return wire.u64(self.client) + wire.u64(self.timestamp) + wire.blob(self.op)

    def digest(self) -> bytes:
        return _tagged(b"twostepbft/request", self.body())

    def encode(self) -> bytes:
        return self.body() + wire.blob(self.sig)


def decode_request(r: wire.Reader) -> ClientRequest:
    return ClientRequest(
        client=r.u64(), timestamp=r.u64(), op=r.blob(), sig=r.blob()
    )


def signed_request(client: int, timestamp: int, op: bytes, secret: bytes) -> ClientRequest:
    req = ClientRequest(client=client, timestamp=timestamp, op=op)
    return replace(req, sig=sign(secret, req.digest()))


# ---------------------------------------------------------------------------
# blocks


@dataclass(frozen=True)
class BlockHeader:
    view: int
    seq: int
    parent_hash: bytes
    payload_hash: bytes
    proposer: int

    def encode(self) -> bytes:
        return (
            wire.u64(self.view)
            + wire.u64(self.seq)
            + wire.blob(self.parent_hash)
            + wire.blob(self.payload_hash)
            + wire.u64(self.proposer)
        )

    def digest(self) -> bytes:
        """Block identity and the digest the proposer signs."""
        return _tagged(b"twostepbft/block", self.encode())


def decode_header(r: wire.Reader) -> BlockHeader:
    return BlockHeader(
        view=r.u64(),
        seq=r.u64(),
        parent_hash=r.blob(),
        payload_hash=r.blob(),
        proposer=r.u64(),
    )


def payload_hash(commands: tuple[ClientRequest, ...]) -> bytes:
    return _tagged(
        b"twostepbft/payload", wire.vec([c.encode() for c in commands])
    )


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    commands: tuple[ClientRequest, ...]
    qc_parent: "QC"
    qc_nr: "NegativeQC | None"
    proposer_sig: bytes

    @property
    def view(self) -> int:
        return self.header.view

    @property
    def seq(self) -> int:
        return self.header.seq

    def block_hash(self) -> bytes:
        return self.header.digest()

    def encode(self) -> bytes:
        return (
            self.header.encode()
            + wire.vec([c.encode() for c in self.commands])
            + wire.blob(self.qc_parent.encode())
            + _encode_optional(self.qc_nr)
            + wire.blob(self.proposer_sig)
        )


def decode_block(r: wire.Reader) -> Block:
    header = decode_header(r)
    commands = tuple(decode_request(r) for _ in range(r.count()))
    qc_parent = decode_qc(wire.Reader(r.blob()))
    qc_nr = _decode_optional(r, decode_negative_qc)
    return Block(
        header=header,
        commands=commands,
        qc_parent=qc_parent,
        qc_nr=qc_nr,
        proposer_sig=r.blob(),
    )


def create_prepare_msg(
    view: int,
    seq: int,
    parent_hash: bytes,
    commands: tuple[ClientRequest, ...],
    qc_parent: "QC",
    qc_nr: "NegativeQC | None",
    proposer: int,
    secret: bytes,
) -> Block:
    """Build and sign a proposal for one slot of the chain."""
    header = BlockHeader(
        view=view,
        seq=seq,
        parent_hash=parent_hash,
        payload_hash=payload_hash(commands),
        proposer=proposer,
    )
    return Block(
        header=header,
        commands=commands,
        qc_parent=qc_parent,
        qc_nr=qc_nr,
        proposer_sig=sign(secret, header.digest()),
    )


# ---------------------------------------------------------------------------
# votes and quorum certificates


@dataclass(frozen=True)
class Vote:
    view: int
    seq: int
    block_hash: bytes
    voter: int
    sig: bytes

    def encode(self) -> bytes:
        return (
            wire.u64(self.view)
            + wire.u64(self.seq)
            + wire.blob(self.block_hash)
            + wire.u64(self.voter)
            + wire.blob(self.sig)
        )


def decode_vote(r: wire.Reader) -> Vote:
    return Vote(
        view=r.u64(), seq=r.u64(), block_hash=r.blob(), voter=r.u64(), sig=r.blob()
    )


def vote_digest(view: int, seq: int, block_hash: bytes) -> bytes:
    # All voters for one block sign the same digest, which is what lets a
    # block QC aggregate them.
    return _tagged(
        b"twostepbft/vote",
        wire.u64(view) + wire.u64(seq) + wire.blob(block_hash),
    )


def make_vote(view: int, seq: int, block_hash: bytes, voter: int, secret: bytes) -> Vote:
    return Vote(
        view=view,
        seq=seq,
        block_hash=block_hash,
        voter=voter,
        sig=sign(secret, vote_digest(view, seq, block_hash)),
    )


def ready_digest(view: int) -> bytes:
    return _tagged(b"twostepbft/ready", wire.u64(view))


@dataclass(frozen=True)
class QC:
    """2f+1 signatures over one digest: a committed fact about one view."""

    kind: str
    view: int
    seq: int
    block_hash: bytes
    agg: AggregateSignature

    def encode(self) -> bytes:
        return (
            wire.u64(QC_KINDS.index(self.kind))
            + wire.u64(self.view)
            + wire.u64(self.seq)
            + wire.blob(self.block_hash)
            + _encode_agg(self.agg)
        )

    def signed_digest(self) -> bytes:
        if self.kind == "block":
            return vote_digest(self.view, self.seq, self.block_hash)
        if self.kind == "ready":
            return ready_digest(self.view)
        raise InputError(f"no signed digest for QC kind {self.kind!r}")


def decode_qc(r: wire.Reader) -> QC:
    kind_index = r.u64()
    if kind_index >= len(QC_KINDS):
        raise CodecError(f"bad QC kind index {kind_index}")
    return QC(
        kind=QC_KINDS[kind_index],
        view=r.u64(),
        seq=r.u64(),
        block_hash=r.blob(),
        agg=_decode_agg(r),
    )


def generate_qc(votes: list[Vote], config: Config, scheme: SignatureScheme) -> QC:
    """Fold 2f+1 votes for one block into a certificate."""
    if not votes:
        raise QuorumError("no votes")
    head = votes[0]
    for v in votes:
        if (v.view, v.seq, v.block_hash) != (head.view, head.seq, head.block_hash):
            raise InputError("votes target different blocks")
    voters = {v.voter for v in votes}
    if len(voters) != len(votes):
        raise InputError("duplicate voter")
    if len(votes) < config.quorum:
        raise QuorumError(f"{len(votes)} votes, quorum is {config.quorum}")
    digest = vote_digest(head.view, head.seq, head.block_hash)
    agg = scheme.aggregate([(digest, v.sig, v.voter) for v in votes])
    return QC(
        kind="block",
        view=head.view,
        seq=head.seq,
        block_hash=head.block_hash,
        agg=agg,
    )


def generate_ready_qc(
    readys: "list[ReadyMsg]", config: Config, scheme: SignatureScheme
) -> QC:
    if not readys:
        raise QuorumError("no ready messages")
    view = readys[0].view
    if any(m.view != view for m in readys):
        raise InputError("ready messages for different views")
    senders = {m.sender for m in readys}
    if len(senders) != len(readys):
        raise InputError("duplicate ready sender")
    if len(readys) < config.quorum:
        raise QuorumError(f"{len(readys)} readys, quorum is {config.quorum}")
    digest = ready_digest(view)
    agg = scheme.aggregate([(digest, m.sig, m.sender) for m in readys])
    return QC(kind="ready", view=view, seq=0, block_hash=ZERO_HASH, agg=agg)


def verify_qc(qc: QC, config: Config, scheme: SignatureScheme) -> bool:
    """One aggregate verification; quorum and signer-set checks are free."""
    if len(qc.agg.signers) < config.quorum:
        return False
    if any(s < 0 or s >= config.n for s in qc.agg.signers):
        return False
    digest = qc.signed_digest()
    items = [(digest, scheme.publics[s]) for s in qc.agg.signers]
    return scheme.verify_aggregate(qc.agg, items)


# ---------------------------------------------------------------------------
# negative responses: proof that a payload is unrecoverable


@dataclass(frozen=True)
class NegativeResponse:
    """Signed statement: 'I hold no payload for any block at this seq.'"""

    view: int
    seq: int
    sender: int
    sig: bytes

    def encode(self) -> bytes:
        return (
            wire.u64(self.view)
            + wire.u64(self.seq)
            + wire.u64(self.sender)
            + wire.blob(self.sig)
        )


def decode_negative_response(r: wire.Reader) -> NegativeResponse:
    return NegativeResponse(view=r.u64(), seq=r.u64(), sender=r.u64(), sig=r.blob())


def negresp_digest(view: int, seq: int) -> bytes:
    return _tagged(b"twostepbft/negresp", wire.u64(view) + wire.u64(seq))


def make_negative_response(view: int, seq: int, sender: int, secret: bytes) -> NegativeResponse:
    return NegativeResponse(
        view=view, seq=seq, sender=sender, sig=sign(secret, negresp_digest(view, seq))
    )


@dataclass(frozen=True)
class NegativeQC:
    """2f+1 negative responses: no honest node committed anything at seq.

    A quorum of 'payload unknown' statements intersects every possible commit
    quorum, so a fresh proposal carrying this certificate safely displaces
    any uncertified header at the same seq.  u_hash names the header the
    builder was asked about, for audit; the refusal itself is per-seq.
    """

    view: int
    seq: int
    u_hash: bytes
    agg: AggregateSignature

    def encode(self) -> bytes:
        return (
            wire.u64(self.view)
            + wire.u64(self.seq)
            + wire.blob(self.u_hash)
            + _encode_agg(self.agg)
        )


def decode_negative_qc(r: wire.Reader) -> NegativeQC:
    return NegativeQC(view=r.u64(), seq=r.u64(), u_hash=r.blob(), agg=_decode_agg(r))


def generate_negative_qc(
    responses: list[NegativeResponse],
    u_hash: bytes,
    config: Config,
    scheme: SignatureScheme,
) -> NegativeQC:
    if not responses:
        raise QuorumError("no negative responses")
    view, seq = responses[0].view, responses[0].seq
    if any((m.view, m.seq) != (view, seq) for m in responses):
        raise InputError("negative responses for different slots")
    senders = {m.sender for m in responses}
    if len(senders) != len(responses):
        raise InputError("duplicate negative responder")
    if len(responses) < config.quorum:
        raise QuorumError(f"{len(responses)} responses, quorum is {config.quorum}")
    digest = negresp_digest(view, seq)
    agg = scheme.aggregate([(digest, m.sig, m.sender) for m in responses])
    return NegativeQC(view=view, seq=seq, u_hash=u_hash, agg=agg)


def verify_negative_qc(nqc: NegativeQC, config: Config, scheme: SignatureScheme) -> bool:
    if len(nqc.agg.signers) < config.quorum:
        return False
    if any(s < 0 or s >= config.n for s in nqc.agg.signers):
        return False
    digest = negresp_digest(nqc.view, nqc.seq)
    items = [(digest, scheme.publics[s]) for s in nqc.agg.signers]
    return scheme.verify_aggregate(nqc.agg, items)


# ---------------------------------------------------------------------------
# view change


@dataclass(frozen=True)
class UHeader:
    """Header of a block this node voted for but never saw certified.

    Carries the proposer's signature so the header is self-authenticating:
    two distinct UHeaders for one (view, seq) are, by themselves, proof of
    equivocation.
    """

    header: BlockHeader
    proposer_sig: bytes

    @property
    def seq(self) -> int:
        return self.header.seq

    def u_hash(self) -> bytes:
        return self.header.digest()

    def encode(self) -> bytes:
        return self.header.encode() + wire.blob(self.proposer_sig)


def decode_uheader(r: wire.Reader) -> UHeader:
    return UHeader(header=decode_header(r), proposer_sig=r.blob())


@dataclass(frozen=True)
class ViewChangeMsg:
    next_view: int
    qc_latest: QC
    u: UHeader | None
    proof: "EquivocationProof | None"
    sender: int
    sig: bytes

    def body(self) -> bytes:
        return (
            wire.u64(self.next_view)
            + wire.blob(self.qc_latest.encode())
            + _encode_optional(self.u)
            + _encode_optional(self.proof)
            + wire.u64(self.sender)
        )

    def body_digest(self) -> bytes:
        return _tagged(b"twostepbft/viewchange", self.body())

    def encode(self) -> bytes:
        return self.body() + wire.blob(self.sig)


def decode_view_change(r: wire.Reader) -> ViewChangeMsg:
    return ViewChangeMsg(
        next_view=r.u64(),
        qc_latest=decode_qc(wire.Reader(r.blob())),
        u=_decode_optional(r, decode_uheader),
        proof=_decode_optional(r, decode_equivocation_proof),
        sender=r.u64(),
        sig=r.blob(),
    )


def make_view_change(
    next_view: int,
    qc_latest: QC,
    u: UHeader | None,
    proof: "EquivocationProof | None",
    sender: int,
    secret: bytes,
) -> ViewChangeMsg:
    msg = ViewChangeMsg(
        next_view=next_view, qc_latest=qc_latest, u=u, proof=proof, sender=sender, sig=b""
    )
    return replace(msg, sig=sign(secret, msg.body_digest()))


@dataclass(frozen=True)
class AggQC:
    """2f+1 view-change bodies under a single aggregate signature.

    Entries are stored sender-sorted with their individual signatures
    stripped; the aggregate covers each sender's body digest, so one
    aggregate verification authenticates every entry at once.
    """

    view: int
    entries: tuple[ViewChangeMsg, ...]
    agg: AggregateSignature

    def encode(self) -> bytes:
        return (
            wire.u64(self.view)
            + wire.vec([wire.blob(e.encode()) for e in self.entries])
            + _encode_agg(self.agg)
        )


def decode_agg_qc(r: wire.Reader) -> AggQC:
    view = r.u64()
    entries = tuple(
        decode_view_change(wire.Reader(r.blob())) for _ in range(r.count())
    )
    return AggQC(view=view, entries=entries, agg=_decode_agg(r))


def create_agg_qc(
    msgs: list[ViewChangeMsg],
    config: Config,
    scheme: SignatureScheme,
    strip_sigs: bool = True,
) -> AggQC:
    if not msgs:
        raise QuorumError("no view-change messages")
    view = msgs[0].next_view
    if any(m.next_view != view for m in msgs):
        raise InputError("view-change messages for different views")
    senders = {m.sender for m in msgs}
    if len(senders) != len(msgs):
        raise InputError("duplicate view-change sender")
    if len(msgs) < config.quorum:
        raise QuorumError(f"{len(msgs)} messages, quorum is {config.quorum}")
    agg = scheme.aggregate([(m.body_digest(), m.sig, m.sender) for m in msgs])
    ordered = sorted(msgs, key=lambda m: m.sender)
    # strip_sigs is the normal shape: the aggregate replaces per-entry
    # signatures.  Keeping them models a protocol without aggregation, for
    # cost comparison runs.
    entries = tuple(replace(m, sig=b"") for m in ordered) if strip_sigs else tuple(ordered)
    return AggQC(view=view, entries=entries, agg=agg)


def high_qc(aggqc: AggQC) -> QC:
    """The freshest certificate carried by any entry.

    Ordered by (seq, view).  Two certificates at the same (seq, view) for
    different blocks would need an honest double vote, which cannot happen
    under the fault bound, so that case is a hard stop.
    """
    best: QC | None = None
    for entry in aggqc.entries:
        qc = entry.qc_latest
        if best is None or (qc.seq, qc.view) > (best.seq, best.view):
            best = qc
        elif (qc.seq, qc.view) == (best.seq, best.view) and qc.block_hash != best.block_hash:
            raise ProtocolViolation(
                "two certificates at one (seq, view) for different blocks"
            )
    assert best is not None
    return best


def relevant_us(aggqc: AggQC) -> list[UHeader]:
    """Uncertified headers one slot past the freshest QC, deduplicated.

    These are the only headers a view change may need to recover: anything
    older is superseded by the high QC, anything newer cannot have been
    voted by an honest node.  Sorted by header hash so every node sees the
    same candidate order.
    """
    anchor = high_qc(aggqc).seq + 1
    seen: dict[bytes, UHeader] = {}
    for entry in aggqc.entries:
        if entry.u is not None and entry.u.seq == anchor:
            seen.setdefault(entry.u.u_hash(), entry.u)
    return [seen[h] for h in sorted(seen)]


@dataclass(frozen=True)
class NewViewMsg:
    view: int
    aggqc: AggQC
    need_payload: bool
    sender: int
    sig: bytes

    def body(self) -> bytes:
        return (
            wire.u64(self.view)
            + wire.blob(self.aggqc.encode())
            + wire.u64(int(self.need_payload))
            + wire.u64(self.sender)
        )

    def body_digest(self) -> bytes:
        return _tagged(b"twostepbft/newview", self.body())

    def encode(self) -> bytes:
        return self.body() + wire.blob(self.sig)


def decode_new_view(r: wire.Reader) -> NewViewMsg:
    return NewViewMsg(
        view=r.u64(),
        aggqc=decode_agg_qc(wire.Reader(r.blob())),
        need_payload=bool(r.u64()),
        sender=r.u64(),
        sig=r.blob(),
    )


def create_nv_msg(aggqc: AggQC, need_payload: bool, sender: int, secret: bytes) -> NewViewMsg:
    msg = NewViewMsg(
        view=aggqc.view, aggqc=aggqc, need_payload=need_payload, sender=sender, sig=b""
    )
    return replace(msg, sig=sign(secret, msg.body_digest()))


@dataclass(frozen=True)
class ReadyMsg:
    """Acknowledgement of a new-view; may carry recovery material.

    attachment is None, a recovered payload (tuple of requests), or a
    NegativeResponse.  Only (view, sender) are signed: the quorum statement
    is 'I accept this view change', and attachments authenticate themselves.
    """

    view: int
    sender: int
    sig: bytes
    attachment: "tuple[ClientRequest, ...] | NegativeResponse | None" = None

    def encode(self) -> bytes:
        if self.attachment is None:
            att = wire.u64(0)
        elif isinstance(self.attachment, NegativeResponse):
            att = wire.u64(1) + wire.blob(self.attachment.encode())
        else:
            att = wire.u64(2) + wire.vec([c.encode() for c in self.attachment])
        return wire.u64(self.view) + wire.u64(self.sender) + wire.blob(self.sig) + att


def decode_ready(r: wire.Reader) -> ReadyMsg:
    view, sender, sig = r.u64(), r.u64(), r.blob()
    tag = r.u64()
    attachment: tuple[ClientRequest, ...] | NegativeResponse | None
    if tag == 0:
        attachment = None
    elif tag == 1:
        attachment = decode_negative_response(wire.Reader(r.blob()))
    elif tag == 2:
        attachment = tuple(decode_request(r) for _ in range(r.count()))
    else:
        raise CodecError(f"bad ready attachment tag {tag}")
    return ReadyMsg(view=view, sender=sender, sig=sig, attachment=attachment)


def make_ready(
    view: int,
    sender: int,
    secret: bytes,
    attachment: "tuple[ClientRequest, ...] | NegativeResponse | None" = None,
) -> ReadyMsg:
    return ReadyMsg(
        view=view, sender=sender, sig=sign(secret, ready_digest(view)), attachment=attachment
    )


@dataclass(frozen=True)
class RecoveryProposal:
    """First proposal after a view change with the ready certificate riding
    along, so the certificate does not cost a broadcast of its own."""

    block: Block
    ready_cert: QC

    def encode(self) -> bytes:
        return self.block.encode() + self.ready_cert.encode()


def decode_recovery_proposal(r: wire.Reader) -> RecoveryProposal:
    return RecoveryProposal(block=decode_block(r), ready_cert=decode_qc(r))


# ---------------------------------------------------------------------------
# equivocation evidence


@dataclass(frozen=True)
class EquivocationProof:
    """Two signed headers from one proposer for the same (view, seq)."""

    header_a: BlockHeader
    sig_a: bytes
    header_b: BlockHeader
    sig_b: bytes

    def encode(self) -> bytes:
        return (
            self.header_a.encode()
            + wire.blob(self.sig_a)
            + self.header_b.encode()
            + wire.blob(self.sig_b)
        )

    def proof_id(self) -> bytes:
        return _tagged(b"twostepbft/proof", self.encode())

    @property
    def accused(self) -> int:
        return self.header_a.proposer


def decode_equivocation_proof(r: wire.Reader) -> EquivocationProof:
    return EquivocationProof(
        header_a=decode_header(r),
        sig_a=r.blob(),
        header_b=decode_header(r),
        sig_b=r.blob(),
    )


def make_equivocation_proof(
    header_a: BlockHeader, sig_a: bytes, header_b: BlockHeader, sig_b: bytes
) -> EquivocationProof:
    # Canonical order so the same pair always yields the same proof_id.
    if header_b.digest() < header_a.digest():
        header_a, sig_a, header_b, sig_b = header_b, sig_b, header_a, sig_a
    return EquivocationProof(header_a=header_a, sig_a=sig_a, header_b=header_b, sig_b=sig_b)


def verify_equivocation_proof(
    proof: EquivocationProof, scheme: SignatureScheme
) -> bool:
    """Same proposer, same (view, seq), distinct headers, both signed.

    Same view matters: re-proposing a seq in a later view is the legitimate
    recovery path, so cross-view pairs prove nothing.
    """
    a, b = proof.header_a, proof.header_b
    if a.proposer != b.proposer or a.view != b.view or a.seq != b.seq:
        return False
    if a.digest() == b.digest():
        return False
    public = scheme.publics.get(a.proposer)
    if public is None:
        return False
    return scheme.verify(public, a.digest(), proof.sig_a) and scheme.verify(
        public, b.digest(), proof.sig_b
    )


# ---------------------------------------------------------------------------
# client replies, payload recovery, chain sync


@dataclass(frozen=True)
class Reply:
    view: int
    client: int
    timestamp: int
    result: bytes
    block_hash: bytes
    replier: int
    sig: bytes

    def body(self) -> bytes:
        return (
            wire.u64(self.view)
            + wire.u64(self.client)
            + wire.u64(self.timestamp)
            + wire.blob(self.result)
            + wire.blob(self.block_hash)
            + wire.u64(self.replier)
        )

    def body_digest(self) -> bytes:
        return _tagged(b"twostepbft/reply", self.body())

    def encode(self) -> bytes:
        return self.body() + wire.blob(self.sig)


def decode_reply(r: wire.Reader) -> Reply:
    return Reply(
        view=r.u64(),
        client=r.u64(),
        timestamp=r.u64(),
        result=r.blob(),
        block_hash=r.blob(),
        replier=r.u64(),
        sig=r.blob(),
    )


def make_reply(
    view: int,
    client: int,
    timestamp: int,
    result: bytes,
    block_hash: bytes,
    replier: int,
    secret: bytes,
) -> Reply:
    msg = Reply(
        view=view,
        client=client,
        timestamp=timestamp,
        result=result,
        block_hash=block_hash,
        replier=replier,
        sig=b"",
    )
    return replace(msg, sig=sign(secret, msg.body_digest()))


@dataclass(frozen=True)
class PayloadRequest:
    view: int
    seq: int
    sender: int
    sig: bytes

    def encode(self) -> bytes:
        return (
            wire.u64(self.view)
            + wire.u64(self.seq)
            + wire.u64(self.sender)
            + wire.blob(self.sig)
        )


def decode_payload_request(r: wire.Reader) -> PayloadRequest:
    return PayloadRequest(view=r.u64(), seq=r.u64(), sender=r.u64(), sig=r.blob())


def payload_request_digest(view: int, seq: int) -> bytes:
    return _tagged(b"twostepbft/payloadreq", wire.u64(view) + wire.u64(seq))


def make_payload_request(view: int, seq: int, sender: int, secret: bytes) -> PayloadRequest:
    return PayloadRequest(
        view=view, seq=seq, sender=sender, sig=sign(secret, payload_request_digest(view, seq))
    )


@dataclass(frozen=True)
class PayloadData:
    """A recovered payload answering a payload request."""

    view: int
    seq: int
    commands: tuple[ClientRequest, ...]
    sender: int
    sig: bytes

    def body(self) -> bytes:
        return (
            wire.u64(self.view)
            + wire.u64(self.seq)
            + wire.vec([c.encode() for c in self.commands])
            + wire.u64(self.sender)
        )

    def body_digest(self) -> bytes:
        return _tagged(b"twostepbft/payloaddata", self.body())

    def encode(self) -> bytes:
        return self.body() + wire.blob(self.sig)


def decode_payload_data(r: wire.Reader) -> PayloadData:
    return PayloadData(
        view=r.u64(),
        seq=r.u64(),
        commands=tuple(decode_request(r) for _ in range(r.count())),
        sender=r.u64(),
        sig=r.blob(),
    )


def make_payload_data(
    view: int, seq: int, commands: tuple[ClientRequest, ...], sender: int, secret: bytes
) -> PayloadData:
    msg = PayloadData(view=view, seq=seq, commands=commands, sender=sender, sig=b"")
    return replace(msg, sig=sign(secret, msg.body_digest()))


@dataclass(frozen=True)
class BlockFetch:
    """Request for missing chain segments [from_seq, to_seq]."""

    from_seq: int
    to_seq: int
    sender: int
    sig: bytes

    def body(self) -> bytes:
        return wire.u64(self.from_seq) + wire.u64(self.to_seq) + wire.u64(self.sender)

    def body_digest(self) -> bytes:
        return _tagged(b"twostepbft/fetch", self.body())

    def encode(self) -> bytes:
        return self.body() + wire.blob(self.sig)


def decode_block_fetch(r: wire.Reader) -> BlockFetch:
    return BlockFetch(from_seq=r.u64(), to_seq=r.u64(), sender=r.u64(), sig=r.blob())


def make_block_fetch(from_seq: int, to_seq: int, sender: int, secret: bytes) -> BlockFetch:
    msg = BlockFetch(from_seq=from_seq, to_seq=to_seq, sender=sender, sig=b"")
    return replace(msg, sig=sign(secret, msg.body_digest()))


@dataclass(frozen=True)
class BlockData:
    """Contiguous committed segments: (block, certifying QC) pairs."""

    segments: tuple[tuple[Block, QC], ...]
    sender: int
    sig: bytes

    def body(self) -> bytes:
        parts = [
            wire.blob(b.encode()) + wire.blob(qc.encode()) for b, qc in self.segments
        ]
        return wire.vec(parts) + wire.u64(self.sender)

    def body_digest(self) -> bytes:
        return _tagged(b"twostepbft/blockdata", self.body())

    def encode(self) -> bytes:
        return self.body() + wire.blob(self.sig)


def decode_block_data(r: wire.Reader) -> BlockData:
    count = r.count()
    segments = []
    for _ in range(count):
        block = decode_block(wire.Reader(r.blob()))
        qc = decode_qc(wire.Reader(r.blob()))
        segments.append((block, qc))
    return BlockData(segments=tuple(segments), sender=r.u64(), sig=r.blob())


def make_block_data(
    segments: tuple[tuple[Block, QC], ...], sender: int, secret: bytes
) -> BlockData:
    msg = BlockData(segments=segments, sender=sender, sig=b"")
    return replace(msg, sig=sign(secret, msg.body_digest()))


# ---------------------------------------------------------------------------
# genesis


def make_genesis(config: Config, keyring: Keyring, scheme: SignatureScheme) -> tuple[Block, QC]:
    """The fixed slot-0 block plus a certificate signed by every node."""
    header = BlockHeader(
        view=0, seq=0, parent_hash=ZERO_HASH, payload_hash=payload_hash(()), proposer=0
    )
    block = Block(
        header=header,
        commands=(),
        qc_parent=QC(
            kind="block",
            view=0,
            seq=0,
            block_hash=ZERO_HASH,
            agg=AggregateSignature(data=ZERO_HASH, signers=()),
        ),
        qc_nr=None,
        proposer_sig=sign(keyring.secret(0), header.digest()),
    )
    digest = vote_digest(0, 0, block.block_hash())
    parts = [
        (digest, sign(keyring.secret(nid), digest), nid) for nid in range(config.n)
    ]
    qc = QC(
        kind="block",
        view=0,
        seq=0,
        block_hash=block.block_hash(),
        agg=scheme.aggregate(parts),
    )
    return block, qc


# ---------------------------------------------------------------------------
# shared encoding helpers and debug rendering


def _encode_agg(agg: AggregateSignature) -> bytes:
    return wire.blob(agg.data) + wire.vec([wire.u64(s) for s in agg.signers])


def _decode_agg(r: wire.Reader) -> AggregateSignature:
    data = r.blob()
    signers = tuple(r.u64() for _ in range(r.count()))
    return AggregateSignature(data=data, signers=signers)


def _encode_optional(value) -> bytes:
    if value is None:
        return wire.u64(0)
    return wire.u64(1) + wire.blob(value.encode())


def _decode_optional(r: wire.Reader, decoder):
    tag = r.u64()
    if tag == 0:
        return None
    if tag != 1:
        raise CodecError(f"bad optional tag {tag}")
    inner = wire.Reader(r.blob())
    value = decoder(inner)
    inner.expect_done()
    return value


def decode_exact(data: bytes, decoder):
    """Decode a full buffer with the given family decoder; reject leftovers."""
    r = wire.Reader(data)
    value = decoder(r)
    r.expect_done()
    return value


def to_debug(value):
    """JSON-friendly rendering of any protocol value, for traces and logs."""
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, (list, tuple)):
        return [to_debug(v) for v in value]
    if isinstance(value, dict):
        return {str(k): to_debug(v) for k, v in value.items()}
    if hasattr(value, "__dataclass_fields__"):
        out = {"_type": type(value).__name__}
        for f in fields(value):
            out[f.name] = to_debug(getattr(value, f.name))
        return out
    return value
