"""Replica state machine tests on an instant, fully scriptable network.

Every test drives real Replica instances through hand-built schedules:
deliveries are FIFO with zero delay, timers fire only when a test says so,
and a drop hook plays the adversary.  Byzantine nodes are not instantiated
at all; their messages are crafted with the ordinary constructors and
injected directly.
"""

from __future__ import annotations

from collections import deque

import pytest

from twostepbft.crypto import Keyring
from twostepbft.messages import (
    Config,
    PayloadData,
    PayloadRequest,
    RecoveryProposal,
    Vote,
    create_prepare_msg,
    make_genesis,
    make_view_change,
    make_vote,
    signed_request,
    BlockHeader,
    UHeader,
    payload_hash,
)
from twostepbft.crypto import sign
from twostepbft.replica import (
    Broadcast,
    Commit,
    Replica,
    ReplyTo,
    ScheduleBlacklist,
    Send,
    StartTimer,
)


class Net:
    """Instant-delivery harness: one FIFO queue, manual timers."""

    def __init__(self, n=4, seed=11, byzantine=(), piggyback=True, verify_mode="linear"):
        self.n = n
        self.client = n
        self.config = Config(n=n, timeout_base_ms=40)
        self.keyring = Keyring(seed, list(range(n + 1)))
        self.scheme = self.keyring.scheme()
        self.genesis = make_genesis(self.config, self.keyring, self.scheme)
        self.byzantine = set(byzantine)
        self.replicas = {
            i: Replica(
                i,
                self.config,
                self.keyring.secret(i),
                self.scheme,
                self.genesis[0],
                self.genesis[1],
                piggyback=piggyback,
                verify_mode=verify_mode,
            )
            for i in range(n)
            if i not in self.byzantine
        }
        self.queue: deque = deque()
        self.timers: dict[int, tuple[int, int]] = {}
        self.commits: dict[int, list] = {i: [] for i in self.replicas}
        self.replies: list = []
        self.blacklist_events: list = []
        self.notes: dict[int, list] = {i: [] for i in self.replicas}
        self.log: list = []  # (sender, target, msg) for every queued delivery
        self.crashed: set[int] = set()
        self.drop = None  # callable (sender, target, msg) -> bool
        self.now = 0

    # -- plumbing ----------------------------------------------------------

    def push(self, sender: int, target: int, msg) -> None:
        self.queue.append((sender, target, msg))

    def push_all(self, sender: int, msg) -> None:
        for i in range(self.n):
            self.push(sender, i, msg)

    def dispatch(self, node: int, actions) -> None:
        for a in actions:
            if isinstance(a, Broadcast):
                self.push_all(node, a.msg)
            elif isinstance(a, Send):
                self.push(node, a.to, a.msg)
            elif isinstance(a, ReplyTo):
                self.replies.append((node, a.client, a.msg))
            elif isinstance(a, Commit):
                self.commits[node].append(a)
            elif isinstance(a, StartTimer):
                self.timers[node] = (a.epoch, a.deadline)
            elif isinstance(a, ScheduleBlacklist):
                self.blacklist_events.append((node, a.node, a.proof))
            else:
                raise AssertionError(f"unknown action {a!r}")
        self.notes[node].extend(self.replicas[node].drain_notes())

    def run(self, limit=50_000) -> None:
        steps = 0
        while self.queue:
            steps += 1
            assert steps < limit, "instant network did not quiesce"
            sender, target, msg = self.queue.popleft()
            self.log.append((sender, target, msg))
            if target not in self.replicas or target in self.crashed:
                continue
            if self.drop is not None and self.drop(sender, target, msg):
                continue
            self.dispatch(target, self.replicas[target].on_deliver(msg, self.now))

    def submit(self, req) -> None:
        for i in range(self.n):
            self.push(self.client, i, req)

    def fire_timer(self, node: int) -> None:
        epoch, deadline = self.timers[node]
        self.now = max(self.now, deadline)
        self.dispatch(node, self.replicas[node].on_timer_fired(epoch, self.now))
        self.run()

    # -- inspection --------------------------------------------------------

    def chain_of(self, node: int):
        r = self.replicas[node]
        return [
            (s, r.chain[s][0].block_hash()) for s in sorted(r.chain) if s > 0
        ]

    def assert_agreement(self):
        chains = [self.chain_of(i) for i in self.replicas if i not in self.crashed]
        lengths = {len(c) for c in chains}
        longest = max(chains, key=len)
        for c in chains:
            assert c == longest[: len(c)]
        return lengths

    def request(self, ts: int, op: bytes):
        return signed_request(self.client, ts, op, self.keyring.secret(self.client))


@pytest.fixture
def net():
    return Net()


# ---------------------------------------------------------------------------
# normal operation


def test_happy_path_single_request(net):
    req = net.request(1, b"set x 1")
    net.submit(req)
    net.run()
    for i in net.replicas:
        assert net.chain_of(i) != []
        block = net.replicas[i].chain[1][0]
        assert block.commands == (req,)
        assert block.view == 1
        assert net.replicas[i].cur_view == 2
        assert not net.replicas[i].mempool
    net.assert_agreement()
    # every replica answered the client
    repliers = {node for node, _c, _m in net.replies}
    assert repliers == set(net.replicas)
    # idle after commit: no live timers
    for i in net.replicas:
        assert net.replicas[i].pacemaker.deadline is None


def test_two_requests_rotate_primary(net):
    net.submit(net.request(1, b"a"))
    net.run()
    net.submit(net.request(2, b"b"))
    net.run()
    for i in net.replicas:
        b1 = net.replicas[i].chain[1][0]
        b2 = net.replicas[i].chain[2][0]
        assert (b1.view, b2.view) == (1, 2)
        assert b1.header.proposer == 1 and b2.header.proposer == 2
        assert b2.header.parent_hash == b1.block_hash()
    net.assert_agreement()


def test_batched_requests_share_a_block(net):
    first = net.request(1, b"a")
    net.submit(first)
    later = [net.request(ts, b"x") for ts in (2, 3, 4)]
    for r in later:
        net.submit(r)
    net.run()
    # the first request triggered seq 1; everything queued behind it rode
    # in the next block as one batch
    for i in net.replicas:
        assert net.replicas[i].chain[1][0].commands == (first,)
        assert set(net.replicas[i].chain[2][0].commands) == set(later)
    net.assert_agreement()


def test_duplicate_request_is_replayed_not_recommitted(net):
    req = net.request(1, b"a")
    net.submit(req)
    net.run()
    before = {i: len(net.chain_of(i)) for i in net.replicas}
    net.replies.clear()
    net.submit(req)
    net.run()
    assert {i: len(net.chain_of(i)) for i in net.replicas} == before
    assert {node for node, _c, _m in net.replies} == set(net.replicas)
    for _node, _client, reply in net.replies:
        assert reply.block_hash == net.replicas[0].chain[1][0].block_hash()


def test_unknown_client_signature_rejected(net):
    bad = signed_request(net.client, 1, b"a", net.keyring.secret(0))
    net.submit(bad)
    net.run()
    for i in net.replicas:
        assert not net.replicas[i].mempool
        assert net.chain_of(i) == []


# ---------------------------------------------------------------------------
# view change: crashed primary


def test_crashed_primary_recovered_by_view_change():
    net = Net(byzantine={1})  # view-1 primary never exists
    req = net.request(1, b"pay alice")
    net.submit(req)
    net.run()
    assert all(net.chain_of(i) == [] for i in net.replicas)
    net.fire_timer(0)
    assert all(net.chain_of(i) == [] for i in net.replicas)
    net.fire_timer(2)  # second demand lets node 3 join via amplification
    for i in net.replicas:
        block = net.replicas[i].chain[1][0]
        assert block.view == 2
        assert block.header.proposer == 2
        assert block.commands == (req,)
        assert block.qc_nr is None
    net.assert_agreement()
    # linear verification: exactly two aggregate checks per accepted new-view
    for i in net.replicas:
        nv_notes = [n for n in net.notes[i] if n["kind"] == "new_view_verify"]
        assert nv_notes and all(n["aggregate_verifies"] == 2 for n in nv_notes)
        assert all(n["ok"] for n in nv_notes)


def test_quadratic_verification_cost():
    net = Net(byzantine={1}, verify_mode="quadratic")
    net.submit(net.request(1, b"a"))
    net.run()
    net.fire_timer(0)
    net.fire_timer(2)
    net.assert_agreement()
    assert net.chain_of(0) != []
    for i in net.replicas:
        nv_notes = [n for n in net.notes[i] if n["kind"] == "new_view_verify"]
        assert nv_notes and all(
            n["aggregate_verifies"] == net.config.quorum for n in nv_notes
        )


def test_voted_payload_survives_view_change(net):
    """Primary crashes after its proposal is voted but before anyone
    assembles a certificate; the next view re-proposes the same payload."""
    req = net.request(1, b"transfer 5")
    net.submit(req)
    net.drop = lambda s, t, m: isinstance(m, Vote)
    net.run()
    original = net.replicas[0].block_store
    assert all(net.chain_of(i) == [] for i in net.replicas)
    assert all(net.replicas[i].voted_u is not None for i in net.replicas)
    net.crashed.add(1)
    net.drop = None
    net.fire_timer(0)
    net.fire_timer(2)
    for i in net.replicas:
        if i == 1:
            continue
        block = net.replicas[i].chain[1][0]
        assert block.view == 2
        assert block.commands == (req,)  # same payload, new header
        assert block.header.proposer == 2
    # the re-proposal rode with the ready certificate in one broadcast
    assert any(
        isinstance(m, RecoveryProposal) for _s, _t, m in net.log
    )


def test_base_mode_recovers_payload_with_request_round():
    net = Net(byzantine={1}, piggyback=False)
    req = net.request(1, b"transfer 9")
    b = create_prepare_msg(
        1, 1, net.genesis[0].block_hash(), (req,),
        net.genesis[1], None, 1, net.keyring.secret(1),
    )
    net.submit(req)
    # the proposal reaches only nodes 0 and 3; primary-to-be 2 never sees it
    net.push(1, 0, b)
    net.push(1, 3, b)
    net.drop = lambda s, t, m: isinstance(m, Vote)
    net.run()
    assert net.replicas[0].voted_u is not None
    assert net.replicas[2].voted_u is None
    net.drop = None
    net.fire_timer(0)
    net.fire_timer(2)
    for i in net.replicas:
        block = net.replicas[i].chain[1][0]
        assert block.commands == (req,)
        assert block.view == 2
    kinds = [type(m).__name__ for _s, _t, m in net.log]
    assert "PayloadRequest" in kinds and "PayloadData" in kinds
    assert not any(isinstance(m, RecoveryProposal) for _s, _t, m in net.log)


def test_fabricated_header_displaced_by_refusal_quorum():
    """A view-change entry advertises a block nobody can produce the payload
    for; the new view must displace it with a refusal certificate."""
    net = Net(byzantine={1})
    req = net.request(1, b"real work")
    net.submit(req)
    net.run()
    ghost = BlockHeader(
        view=1,
        seq=1,
        parent_hash=net.genesis[0].block_hash(),
        payload_hash=payload_hash((net.request(99, b"ghost"),)),
        proposer=1,
    )
    ghost_u = UHeader(header=ghost, proposer_sig=sign(net.keyring.secret(1), ghost.digest()))
    net.fire_timer(0)
    byz_vc = make_view_change(2, net.genesis[1], ghost_u, None, 1, net.keyring.secret(1))
    net.push(1, 2, byz_vc)  # reaches the next primary before node 3's demand
    net.run()
    net.fire_timer(2)
    for i in net.replicas:
        block = net.replicas[i].chain[1][0]
        assert block.view == 2
        assert block.commands == (req,)
        assert block.qc_nr is not None
        assert block.qc_nr.seq == 1
    net.assert_agreement()


# ---------------------------------------------------------------------------
# equivocation


def _equivocating_pair(net, r1, r2):
    sk = net.keyring.secret(1)
    b = create_prepare_msg(
        1, 1, net.genesis[0].block_hash(), (r1,), net.genesis[1], None, 1, sk
    )
    b2 = create_prepare_msg(
        1, 1, net.genesis[0].block_hash(), (r2,), net.genesis[1], None, 1, sk
    )
    return b, b2


def test_equivocation_blacklists_proposer_everywhere():
    net = Net(byzantine={1})
    r1 = net.request(1, b"left")
    r2 = net.request(2, b"right")
    net.submit(r2)
    b, b2 = _equivocating_pair(net, r1, r2)
    # everyone certifies b2; the rival header surfaces afterwards
    for i in (0, 2, 3):
        net.push(1, i, b2)
    net.push_all(1, make_vote(1, 1, b2.block_hash(), 1, net.keyring.secret(1)))
    net.run()
    for i in net.replicas:
        assert net.replicas[i].chain[1][0].block_hash() == b2.block_hash()
    net.push(1, 2, b)  # node 2 now holds both signed headers
    net.run()
    for i in net.replicas:
        assert net.replicas[i].blacklist == {1}
    accused = {a for _node, a, _p in net.blacklist_events}
    assert accused == {1}
    # each node schedules the blacklist exactly once
    nodes = [node for node, _a, _p in net.blacklist_events]
    assert sorted(nodes) == sorted(net.replicas)


def test_blacklisted_primary_view_is_skipped():
    net = Net(byzantine={1})
    r1 = net.request(1, b"left")
    r2 = net.request(2, b"right")
    net.submit(r2)
    b, b2 = _equivocating_pair(net, r1, r2)
    for i in (0, 2, 3):
        net.push(1, i, b2)
    net.push_all(1, make_vote(1, 1, b2.block_hash(), 1, net.keyring.secret(1)))
    net.run()
    net.push(1, 2, b)
    net.run()
    # drive the chain toward view 5, whose primary is the blacklisted node
    for ts, op in ((3, b"a"), (4, b"b"), (5, b"c")):
        net.submit(net.request(ts, op))
        net.run()
    views = [net.replicas[0].chain[s][0].view for s in sorted(net.replicas[0].chain) if s > 0]
    assert views[:4] == [1, 2, 3, 4]
    # entering view 5 triggered an immediate view change past the offender
    tail = net.replicas[0]
    assert tail.cur_view >= 6
    assert all(
        net.replicas[i].chain[s][0].header.proposer != 1
        for i in net.replicas
        for s in net.replicas[i].chain
        if s > 1
    )
    net.assert_agreement()


def test_revocation_rolls_back_partially_seen_commit():
    """A certified block seen by one honest node is revoked when the view
    change proceeds without that node, then the slot is redecided."""
    net = Net(byzantine={1})
    r1 = net.request(1, b"left")
    r2 = net.request(2, b"right")
    net.submit(r2)
    b, b2 = _equivocating_pair(net, r1, r2)
    net.push(1, 0, b)
    net.push(1, 2, b2)
    net.push(1, 3, b2)
    # votes travel only to node 3, which alone assembles the certificate
    net.drop = lambda s, t, m: isinstance(m, Vote) and t != 3
    net.push(1, 3, make_vote(1, 1, b2.block_hash(), 1, net.keyring.secret(1)))
    net.run()
    assert net.chain_of(3) == [(1, b2.block_hash())]
    assert net.chain_of(0) == [] and net.chain_of(2) == []
    net.drop = None
    net.fire_timer(0)
    byz_vc = make_view_change(2, net.genesis[1], None, None, 1, net.keyring.secret(1))
    net.push(1, 2, byz_vc)
    net.run()
    net.fire_timer(2)
    # the lone committer refuses the conflicting slot, so the redecided
    # block is two votes short until the byzantine node helps it along
    assert net.chain_of(3) == [(1, b2.block_hash())]
    redo = next(m for _s, _t, m in net.log if isinstance(m, RecoveryProposal))
    redone = redo.block.block_hash()
    net.push_all(1, make_vote(2, 1, redone, 1, net.keyring.secret(1)))
    net.run()
    assert net.chain_of(0)[0] == (1, redone)
    assert net.chain_of(2)[0] == (1, redone)
    # node 3 sits on its fork until fresh traffic and one more view change
    # bring it the rival certificate
    net.submit(net.request(3, b"after"))
    net.run()
    net.fire_timer(0)
    net.fire_timer(2)
    # node 3 revoked its commit and recommitted the slot under the new view
    seq1 = [c for c in net.commits[3] if c.block.seq == 1]
    assert len(seq1) == 2
    assert seq1[0].block.block_hash() != seq1[1].block.block_hash()
    assert seq1[0].block.view == 1 and seq1[1].block.view == 2
    assert any(n["kind"] == "rollback" for n in net.notes[3])
    # every honest node ends on the same redecided slot
    for i in net.replicas:
        assert net.replicas[i].chain[1][0].block_hash() == redone
    # both signed headers crossed paths during recovery: offender caught
    assert all(net.replicas[i].blacklist == {1} for i in net.replicas)
    net.assert_agreement()


# ---------------------------------------------------------------------------
# catch-up


def test_partitioned_node_catches_up_from_vote_certificate(net):
    req = net.request(1, b"a")
    net.submit(req)
    # node 3 misses the proposal and every vote for it
    net.drop = lambda s, t, m: t == 3 and not isinstance(m, type(req))
    net.run()
    assert net.chain_of(3) == []
    net.drop = None
    net.submit(net.request(2, b"b"))
    net.run()
    # the next proposal's parent certificate pulled node 3 forward
    assert [s for s, _h in net.chain_of(3)] == [1, 2]
    net.assert_agreement()
