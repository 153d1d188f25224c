"""Core value types: codecs, certificate constructors, and quorum arithmetic.

The quorum facts this protocol leans on (overlap of any two quorums, the
impossibility of rival certificates at one slot, when a refusal quorum can
exist) are established here by independent exhaustive enumeration, then the
constructors are checked against them.
"""

from __future__ import annotations

import itertools
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from twostepbft import wire
from twostepbft.crypto import AggregateSignature, Keyring, sign
from twostepbft.errors import (
    CodecError,
    ConfigError,
    InputError,
    ProtocolViolation,
    QuorumError,
)
from twostepbft.messages import (
    AggQC,
    Block,
    BlockHeader,
    Config,
    EquivocationProof,
    NegativeResponse,
    QC,
    ZERO_HASH,
    create_agg_qc,
    create_prepare_msg,
    decode_agg_qc,
    decode_block,
    decode_exact,
    decode_new_view,
    decode_qc,
    decode_ready,
    decode_reply,
    decode_request,
    decode_view_change,
    decode_vote,
    generate_negative_qc,
    generate_qc,
    generate_ready_qc,
    high_qc,
    make_equivocation_proof,
    make_genesis,
    make_negative_response,
    make_ready,
    make_reply,
    make_view_change,
    make_vote,
    create_nv_msg,
    primary_of,
    relevant_us,
    signed_request,
    to_debug,
    verify_equivocation_proof,
    verify_negative_qc,
    verify_qc,
)

# ---------------------------------------------------------------------------
# quorum arithmetic oracles


@pytest.mark.parametrize("n", [4, 7])
def test_any_two_quorums_share_an_honest_node(n):
    # Exhaustive: every pair of 2f+1 subsets of n = 3f+1 nodes overlaps in
    # at least f+1 nodes, so at least one is honest.  This is the fact that
    # makes both certificates and refusal certificates binding.
    f = (n - 1) // 3
    quorum = 2 * f + 1
    nodes = range(n)
    for a in itertools.combinations(nodes, quorum):
        for b in itertools.combinations(nodes, quorum):
            assert len(set(a) & set(b)) >= f + 1


def test_no_two_rival_certificates_per_slot():
    # Exhaustive at n=4: each of 3 honest nodes votes for at most one of two
    # rival blocks; the 1 Byzantine node may vote for both.  No assignment
    # gives both blocks a quorum, so two certificates for one (view, seq)
    # with different blocks cannot both exist.
    for votes in itertools.product(("a", "b", None), repeat=3):
        count_a = sum(1 for v in votes if v == "a") + 1  # byzantine double vote
        count_b = sum(1 for v in votes if v == "b") + 1
        assert not (count_a >= 3 and count_b >= 3)


def test_refusal_quorum_only_without_any_commit():
    # Exhaustive at n=4: h honest nodes hold the payload (they voted for the
    # block); refusals can come from the other honest nodes plus the
    # Byzantine one.  A commit by any honest node requires 3 votes, hence at
    # least 2 honest holders; check that those two conditions exclude each
    # other for every h.
    for holders in range(0, 4):
        refusals_available = (3 - holders) + 1
        commit_possible = holders >= 2  # 2 honest + byzantine = 3 votes
        if commit_possible:
            assert refusals_available < 3
        if refusals_available >= 3:
            assert not commit_possible


# ---------------------------------------------------------------------------
# configuration


def test_config_derives_fault_bound():
    cfg = Config(n=4, timeout_base_ms=40)
    assert cfg.f == 1 and cfg.quorum == 3
    cfg7 = Config(n=7, timeout_base_ms=40)
    assert cfg7.f == 2 and cfg7.quorum == 5


@pytest.mark.parametrize("n", [3, 5, 6, 8])
def test_config_rejects_non_3f1_sizes(n):
    with pytest.raises(ConfigError):
        Config(n=n, timeout_base_ms=40)


def test_config_rejects_bad_timeout_and_mode():
    with pytest.raises(ConfigError):
        Config(n=4, timeout_base_ms=0)
    with pytest.raises(ConfigError):
        Config(n=4, timeout_base_ms=40, primary_mode="lottery")


def test_round_robin_primary():
    cfg = Config(n=4, timeout_base_ms=40)
    assert primary_of(5, cfg) == 1
    assert [primary_of(v, cfg) for v in range(4)] == [0, 1, 2, 3]


def test_seeded_random_primary_deterministic_and_roughly_uniform():
    cfg = Config(n=4, timeout_base_ms=40, primary_mode="seeded_random", primary_seed=9)
    draws = [primary_of(v, cfg) for v in range(10_000)]
    assert draws == [primary_of(v, cfg) for v in range(10_000)]
    assert set(draws) == {0, 1, 2, 3}
    for node in range(4):
        share = draws.count(node) / len(draws)
        assert abs(share - 0.25) < 0.05 * 0.25 + 0.02  # within 5% plus slack


def test_seeded_random_differs_by_seed():
    a = Config(n=4, timeout_base_ms=40, primary_mode="seeded_random", primary_seed=1)
    b = Config(n=4, timeout_base_ms=40, primary_mode="seeded_random", primary_seed=2)
    assert [primary_of(v, a) for v in range(50)] != [primary_of(v, b) for v in range(50)]


# ---------------------------------------------------------------------------
# helpers


def _network(n=4, seed=7):
    cfg = Config(n=n, timeout_base_ms=40)
    ring = Keyring(seed=seed, node_ids=list(range(n)))
    scheme = ring.scheme()
    return cfg, ring, scheme


def _block_at(cfg, ring, scheme, view=1, seq=1, ops=(b"tx",), proposer=1):
    genesis, genesis_qc = make_genesis(cfg, ring, scheme)
    commands = tuple(
        signed_request(1000, i, op, ring.secret(0)) for i, op in enumerate(ops)
    )
    block = create_prepare_msg(
        view=view,
        seq=seq,
        parent_hash=genesis.block_hash(),
        commands=commands,
        qc_parent=genesis_qc,
        qc_nr=None,
        proposer=proposer,
        secret=ring.secret(proposer),
    )
    return block, genesis_qc


def _qc_for(block, cfg, ring, scheme, voters=(0, 1, 2), view=None):
    view = block.view if view is None else view
    votes = [
        make_vote(view, block.seq, block.block_hash(), nid, ring.secret(nid))
        for nid in voters
    ]
    return generate_qc(votes, cfg, scheme)


# ---------------------------------------------------------------------------
# votes and block certificates


def test_generate_qc_round_trip():
    cfg, ring, scheme = _network()
    block, _ = _block_at(cfg, ring, scheme)
    qc = _qc_for(block, cfg, ring, scheme)
    assert qc.kind == "block" and qc.view == 1 and qc.seq == 1
    assert verify_qc(qc, cfg, scheme)


def test_generate_qc_rejects_short_mixed_duplicate():
    cfg, ring, scheme = _network()
    block, _ = _block_at(cfg, ring, scheme)
    votes = [
        make_vote(1, 1, block.block_hash(), nid, ring.secret(nid)) for nid in (0, 1, 2)
    ]
    with pytest.raises(QuorumError):
        generate_qc(votes[:2], cfg, scheme)
    mixed = votes[:2] + [make_vote(2, 1, block.block_hash(), 2, ring.secret(2))]
    with pytest.raises(InputError):
        generate_qc(mixed, cfg, scheme)
    with pytest.raises(InputError):
        generate_qc(votes[:2] + [votes[0]], cfg, scheme)
    with pytest.raises(QuorumError):
        generate_qc([], cfg, scheme)


def test_verify_qc_rejects_subquorum_and_foreign_signers():
    cfg, ring, scheme = _network()
    block, _ = _block_at(cfg, ring, scheme)
    qc = _qc_for(block, cfg, ring, scheme)
    short = QC(
        kind=qc.kind,
        view=qc.view,
        seq=qc.seq,
        block_hash=qc.block_hash,
        agg=AggregateSignature(data=qc.agg.data, signers=qc.agg.signers[:2]),
    )
    assert not verify_qc(short, cfg, scheme)
    foreign = QC(
        kind=qc.kind,
        view=qc.view,
        seq=qc.seq,
        block_hash=qc.block_hash,
        agg=AggregateSignature(data=qc.agg.data, signers=(0, 1, 9)),
    )
    assert not verify_qc(foreign, cfg, scheme)


def test_ready_qc():
    cfg, ring, scheme = _network()
    readys = [make_ready(4, nid, ring.secret(nid)) for nid in (0, 2, 3)]
    qc = generate_ready_qc(readys, cfg, scheme)
    assert qc.kind == "ready" and qc.view == 4
    assert verify_qc(qc, cfg, scheme)
    with pytest.raises(QuorumError):
        generate_ready_qc(readys[:2], cfg, scheme)


def test_negative_qc():
    cfg, ring, scheme = _network()
    responses = [make_negative_response(5, 2, nid, ring.secret(nid)) for nid in (1, 2, 3)]
    nqc = generate_negative_qc(responses, b"\xaa" * 32, cfg, scheme)
    assert verify_negative_qc(nqc, cfg, scheme)
    with pytest.raises(QuorumError):
        generate_negative_qc(responses[:2], b"\xaa" * 32, cfg, scheme)
    mixed = responses[:2] + [make_negative_response(5, 3, 0, ring.secret(0))]
    with pytest.raises(InputError):
        generate_negative_qc(mixed, b"\xaa" * 32, cfg, scheme)


# ---------------------------------------------------------------------------
# view change values


def _vc_set(cfg, ring, scheme, next_view=2, senders=(0, 1, 2), us=None):
    genesis, genesis_qc = make_genesis(cfg, ring, scheme)
    msgs = []
    for nid in senders:
        u = None if us is None else us.get(nid)
        msgs.append(
            make_view_change(next_view, genesis_qc, u, None, nid, ring.secret(nid))
        )
    return msgs


def test_create_agg_qc_canonical_entries():
    cfg, ring, scheme = _network()
    msgs = _vc_set(cfg, ring, scheme, senders=(2, 0, 1))
    aggqc = create_agg_qc(msgs, cfg, scheme)
    assert aggqc.view == 2
    assert [e.sender for e in aggqc.entries] == [0, 1, 2]
    assert all(e.sig == b"" for e in aggqc.entries)
    assert aggqc.agg.signers == (0, 1, 2)


def test_create_agg_qc_rejects_bad_inputs():
    cfg, ring, scheme = _network()
    msgs = _vc_set(cfg, ring, scheme)
    with pytest.raises(QuorumError):
        create_agg_qc(msgs[:2], cfg, scheme)
    with pytest.raises(InputError):
        create_agg_qc(msgs[:2] + [msgs[0]], cfg, scheme)
    other = _vc_set(cfg, ring, scheme, next_view=3, senders=(3,))
    with pytest.raises(InputError):
        create_agg_qc(msgs[:2] + other, cfg, scheme)


def test_high_qc_picks_freshest_by_seq_then_view():
    cfg, ring, scheme = _network()
    block, genesis_qc = _block_at(cfg, ring, scheme)
    block_qc = _qc_for(block, cfg, ring, scheme)
    msgs = [
        make_view_change(2, genesis_qc, None, None, 0, ring.secret(0)),
        make_view_change(2, block_qc, None, None, 1, ring.secret(1)),
        make_view_change(2, genesis_qc, None, None, 2, ring.secret(2)),
    ]
    aggqc = create_agg_qc(msgs, cfg, scheme)
    assert high_qc(aggqc) == block_qc


def test_high_qc_same_slot_same_block_tolerated():
    cfg, ring, scheme = _network()
    block, _ = _block_at(cfg, ring, scheme)
    qc_a = _qc_for(block, cfg, ring, scheme, voters=(0, 1, 2))
    qc_b = _qc_for(block, cfg, ring, scheme, voters=(1, 2, 3))
    msgs = [
        make_view_change(2, qc_a, None, None, 0, ring.secret(0)),
        make_view_change(2, qc_b, None, None, 1, ring.secret(1)),
        make_view_change(2, qc_a, None, None, 2, ring.secret(2)),
    ]
    got = high_qc(create_agg_qc(msgs, cfg, scheme))
    assert got.block_hash == block.block_hash()


def test_high_qc_rival_certificates_is_a_protocol_violation():
    # Unreachable under the fault bound (see the exhaustive oracle above),
    # so reaching it must hard-stop rather than pick a side.
    cfg, ring, scheme = _network()
    block_a, _ = _block_at(cfg, ring, scheme, ops=(b"a",))
    block_b, _ = _block_at(cfg, ring, scheme, ops=(b"b",))
    qc_a = _qc_for(block_a, cfg, ring, scheme)
    qc_b = _qc_for(block_b, cfg, ring, scheme)
    msgs = [
        make_view_change(2, qc_a, None, None, 0, ring.secret(0)),
        make_view_change(2, qc_b, None, None, 1, ring.secret(1)),
        make_view_change(2, qc_a, None, None, 2, ring.secret(2)),
    ]
    aggqc = create_agg_qc(msgs, cfg, scheme)
    with pytest.raises(ProtocolViolation):
        high_qc(aggqc)


def test_relevant_us_filters_dedups_sorts():
    cfg, ring, scheme = _network()
    block, _ = _block_at(cfg, ring, scheme, ops=(b"x",))
    stale = create_prepare_msg(
        view=1,
        seq=9,
        parent_hash=ZERO_HASH,
        commands=(),
        qc_parent=block.qc_parent,
        qc_nr=None,
        proposer=1,
        secret=ring.secret(1),
    )
    from twostepbft.messages import UHeader

    u_live = UHeader(header=block.header, proposer_sig=block.proposer_sig)
    u_stale = UHeader(header=stale.header, proposer_sig=stale.proposer_sig)
    us = {0: u_live, 1: u_stale, 2: u_live}
    msgs = _vc_set(cfg, ring, scheme, us=us)
    aggqc = create_agg_qc(msgs, cfg, scheme)
    found = relevant_us(aggqc)
    assert found == [u_live]  # stale seq filtered, duplicate folded


def test_new_view_round_trip_fields():
    cfg, ring, scheme = _network()
    aggqc = create_agg_qc(_vc_set(cfg, ring, scheme), cfg, scheme)
    nv = create_nv_msg(aggqc, True, 2, ring.secret(2))
    assert nv.view == aggqc.view and nv.need_payload
    decoded = decode_exact(nv.encode(), decode_new_view)
    assert decoded == nv


# ---------------------------------------------------------------------------
# equivocation proofs


def _two_headers(ring, view=3, seq=2, proposer=3):
    headers = []
    for tag in (b"left", b"right"):
        h = BlockHeader(
            view=view, seq=seq, parent_hash=ZERO_HASH, payload_hash=tag * 8, proposer=proposer
        )
        headers.append((h, sign(ring.secret(proposer), h.digest())))
    return headers


def test_equivocation_proof_valid_pair():
    cfg, ring, scheme = _network()
    (ha, sa), (hb, sb) = _two_headers(ring)
    proof = make_equivocation_proof(ha, sa, hb, sb)
    assert verify_equivocation_proof(proof, scheme)
    assert proof.accused == 3
    flipped = make_equivocation_proof(hb, sb, ha, sa)
    assert flipped.proof_id() == proof.proof_id()


def test_equivocation_proof_rejects_cross_view_and_same_header():
    cfg, ring, scheme = _network()
    (ha, sa), _ = _two_headers(ring, view=3)
    _, (hb, sb) = _two_headers(ring, view=4)
    cross = EquivocationProof(header_a=ha, sig_a=sa, header_b=hb, sig_b=sb)
    assert not verify_equivocation_proof(cross, scheme)
    same = EquivocationProof(header_a=ha, sig_a=sa, header_b=ha, sig_b=sa)
    assert not verify_equivocation_proof(same, scheme)


def test_equivocation_proof_rejects_bad_signature():
    cfg, ring, scheme = _network()
    (ha, sa), (hb, sb) = _two_headers(ring)
    forged = EquivocationProof(header_a=ha, sig_a=sa, header_b=hb, sig_b=b"\x00" * 32)
    assert not verify_equivocation_proof(forged, scheme)


# ---------------------------------------------------------------------------
# genesis


def test_genesis_certified_by_everyone(config4, keyring4, scheme4, genesis4):
    block, qc = genesis4
    assert block.seq == 0 and block.view == 0
    assert qc.agg.signers == (0, 1, 2, 3)
    assert verify_qc(qc, config4, scheme4)
    again, _ = make_genesis(config4, keyring4, scheme4)
    assert again.block_hash() == block.block_hash()


# ---------------------------------------------------------------------------
# codec round trips


def test_block_codec_round_trip():
    cfg, ring, scheme = _network()
    block, _ = _block_at(cfg, ring, scheme, ops=(b"tx1", b"tx2"))
    assert decode_exact(block.encode(), decode_block) == block


def test_block_with_refusal_certificate_round_trip():
    cfg, ring, scheme = _network()
    responses = [make_negative_response(4, 2, nid, ring.secret(nid)) for nid in (0, 1, 3)]
    nqc = generate_negative_qc(responses, b"\xbb" * 32, cfg, scheme)
    genesis, genesis_qc = make_genesis(cfg, ring, scheme)
    block = create_prepare_msg(
        view=4,
        seq=1,
        parent_hash=genesis.block_hash(),
        commands=(),
        qc_parent=genesis_qc,
        qc_nr=nqc,
        proposer=0,
        secret=ring.secret(0),
    )
    assert decode_exact(block.encode(), decode_block) == block


def test_vote_and_request_and_reply_round_trip():
    cfg, ring, scheme = _network()
    vote = make_vote(2, 3, b"\xcc" * 32, 1, ring.secret(1))
    assert decode_exact(vote.encode(), decode_vote) == vote
    req = signed_request(1001, 5, b"op-bytes", ring.secret(0))
    assert decode_exact(req.encode(), decode_request) == req
    reply = make_reply(2, 1001, 5, b"ok", b"\xdd" * 32, 3, ring.secret(3))
    assert decode_exact(reply.encode(), decode_reply) == reply


def test_view_change_and_agg_qc_round_trip():
    cfg, ring, scheme = _network()
    block, _ = _block_at(cfg, ring, scheme)
    from twostepbft.messages import UHeader

    u = UHeader(header=block.header, proposer_sig=block.proposer_sig)
    (ha, sa), (hb, sb) = _two_headers(ring)
    proof = make_equivocation_proof(ha, sa, hb, sb)
    genesis, genesis_qc = make_genesis(cfg, ring, scheme)
    vc = make_view_change(2, genesis_qc, u, proof, 0, ring.secret(0))
    assert decode_exact(vc.encode(), decode_view_change) == vc
    msgs = [vc] + _vc_set(cfg, ring, scheme, senders=(1, 2))
    aggqc = create_agg_qc(msgs, cfg, scheme)
    assert decode_exact(aggqc.encode(), decode_agg_qc) == aggqc


def test_ready_codec_all_attachment_shapes():
    cfg, ring, scheme = _network()
    plain = make_ready(3, 0, ring.secret(0))
    assert decode_exact(plain.encode(), decode_ready) == plain
    neg = make_ready(
        3, 1, ring.secret(1), attachment=make_negative_response(3, 2, 1, ring.secret(1))
    )
    assert decode_exact(neg.encode(), decode_ready) == neg
    payload = make_ready(
        3,
        2,
        ring.secret(2),
        attachment=(signed_request(1000, 1, b"op", ring.secret(0)),),
    )
    assert decode_exact(payload.encode(), decode_ready) == payload


def test_qc_codec_rejects_garbage():
    cfg, ring, scheme = _network()
    block, _ = _block_at(cfg, ring, scheme)
    qc = _qc_for(block, cfg, ring, scheme)
    data = qc.encode()
    assert decode_exact(data, decode_qc) == qc
    with pytest.raises(CodecError):
        decode_exact(data + b"\x00", decode_qc)
    with pytest.raises(CodecError):
        decode_exact(data[:-1], decode_qc)
    with pytest.raises(CodecError):
        decode_exact(wire.u64(9) + data[8:], decode_qc)  # bad kind index


@given(
    st.integers(0, 2**40),
    st.integers(0, 2**40),
    st.binary(min_size=0, max_size=64),
)
def test_request_codec_round_trip_any_fields(client, ts, op):
    req = signed_request(client, ts, op, Keyring(seed=1, node_ids=[0]).secret(0))
    assert decode_exact(req.encode(), decode_request) == req


def test_debug_rendering_is_json_serializable():
    cfg, ring, scheme = _network()
    block, _ = _block_at(cfg, ring, scheme, ops=(b"tx",))
    rendered = to_debug(block)
    text = json.dumps(rendered, sort_keys=True)
    assert "BlockHeader" in text
    assert block.block_hash().hex() in json.dumps(to_debug(block.block_hash()))
