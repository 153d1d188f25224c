"""Deterministic replica state machine.

A replica is a pure event processor: the caller hands it one delivered
message or one fired timer together with the current clock reading, and it
returns the complete list of actions the node takes in response (broadcasts,
point-to-point sends, client replies, commits, timer arms, blacklist
updates).  The replica never reads a clock, never generates randomness, and
never talks to a network, which is what makes runs replayable bit for bit.

Happy path: the primary of the current view broadcasts one proposal; every
node votes; every node assembles the 2f+1 votes it hears into a certificate
and commits.  Two message steps per block, a vote is both an endorsement
and a commit trigger.

Unhappy path: timeouts produce view-change messages, the next primary folds
2f+1 of them into an aggregate certificate inside a new-view, and nodes
acknowledge with ready messages.  The first proposal of the new view must
extend the freshest certificate carried by the aggregate; if an uncertified
block one slot past it may have been committed by someone, the proposal
must either re-propose its payload or carry a refusal certificate proving
nobody committed there.

Self delivery: every broadcast is expected to be delivered back to its
sender (at zero delay in the simulator).  Handlers therefore never process
their own output inline; a node's own proposal, vote, or view-change comes
back through the same entry points as everyone else's, which keeps the
code paths uniform.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field

from .crypto import SignatureScheme, sign
from .errors import ProtocolViolation
from .messages import (
    AggQC,
    Block,
    BlockData,
    BlockFetch,
    ClientRequest,
    Config,
    EquivocationProof,
    NegativeResponse,
    NewViewMsg,
    PayloadData,
    PayloadRequest,
    QC,
    ReadyMsg,
    RecoveryProposal,
    Reply,
    UHeader,
    ViewChangeMsg,
    Vote,
    create_agg_qc,
    create_nv_msg,
    create_prepare_msg,
    generate_negative_qc,
    generate_qc,
    generate_ready_qc,
    high_qc as aggqc_high,
    make_block_data,
    make_block_fetch,
    make_equivocation_proof,
    make_negative_response,
    make_payload_data,
    make_payload_request,
    make_ready,
    make_reply,
    make_view_change,
    make_vote,
    negresp_digest,
    payload_hash,
    payload_request_digest,
    primary_of,
    ready_digest,
    relevant_us,
    verify_equivocation_proof,
    verify_negative_qc,
    verify_qc,
    vote_digest,
)
from .pacemaker import Pacemaker

MAX_BATCH = 64
FETCH_SPAN = 64

_EXEC_TAG = b"twostepbft/exec"


def execute(op: bytes) -> bytes:
    """The replicated service: a fixed function of the operation bytes."""
    return hashlib.sha256(_EXEC_TAG + op).digest()[:16]


# ---------------------------------------------------------------------------
# actions


@dataclass(frozen=True)
class Broadcast:
    msg: object


@dataclass(frozen=True)
class Send:
    to: int
    msg: object


@dataclass(frozen=True)
class ReplyTo:
    client: int
    msg: Reply


@dataclass(frozen=True)
class Commit:
    block: Block
    qc: QC


@dataclass(frozen=True)
class StartTimer:
    epoch: int
    deadline: int


@dataclass(frozen=True)
class ScheduleBlacklist:
    node: int
    proof: EquivocationProof


Action = object


@dataclass
class _Recovery:
    """Per-view bookkeeping between a new-view and its first commit."""

    view: int
    aggqc: AggQC
    high: QC
    relevant: list[UHeader]
    need_payload: bool
    ready_cert_seen: bool = False
    cert_broadcast: bool = False
    payload_requested: bool = False
    proposed: bool = False
    readys: dict[int, ReadyMsg] = field(default_factory=dict)
    payloads: dict[bytes, tuple[ClientRequest, ...]] = field(default_factory=dict)
    negresps: dict[int, NegativeResponse] = field(default_factory=dict)


class Replica:
    """One consensus node.

    piggyback=True attaches the ready certificate to the first proposal of a
    view; False broadcasts it on its own and recovers payloads with explicit
    request/response rounds.  verify_mode picks how an incoming new-view is
    checked: 'linear' does two aggregate verifications total, 'quadratic'
    verifies each of the 2f+1 embedded certificates individually.
    """

    def __init__(
        self,
        node_id: int,
        config: Config,
        secret: bytes,
        scheme: SignatureScheme,
        genesis_block: Block,
        genesis_qc: QC,
        piggyback: bool = True,
        verify_mode: str = "linear",
    ):
        if verify_mode not in ("linear", "quadratic"):
            raise ValueError(f"bad verify_mode {verify_mode!r}")
        self.node_id = node_id
        self.config = config
        self.secret = secret
        self.scheme = scheme
        self.piggyback = piggyback
        self.verify_mode = verify_mode

        self.cur_view = 1
        self.mode = "normal"
        self.chain: dict[int, tuple[Block, QC]] = {0: (genesis_block, genesis_qc)}
        self.tip_seq = 0
        self.tip_hash = genesis_block.block_hash()
        self.high_qc = genesis_qc
        # highest view whose quorum endorsed the chain we sit on: the view
        # of the freshest certificate we committed, raised further when a
        # new-view's aggregate anchors exactly at our tip.  A conflicting
        # certificate overrules only by beating this, so a fork confirmed
        # by a later quorum cannot be undone by leftovers of earlier views.
        self.fork_vouch = 0
        self.voted_u: UHeader | None = None
        self.voted: dict[tuple[int, int], bytes] = {}
        self.seen_headers: dict[tuple[int, int, int], tuple] = {}
        self.block_store: dict[bytes, Block] = {genesis_block.block_hash(): genesis_block}
        self.pending_votes: dict[tuple[int, int, bytes], dict[int, Vote]] = {}
        self.mempool: OrderedDict[tuple[int, int], ClientRequest] = OrderedDict()
        self.committed_ops: dict[tuple[int, int], int] = {}
        self.blacklist: set[int] = set()
        self.relayed_proofs: set[bytes] = set()
        self.pacemaker = Pacemaker(config)
        self.vc_msgs: dict[int, dict[int, ViewChangeMsg]] = {}
        self.nv_sent: set[int] = set()
        self.recovery: dict[int, _Recovery] = {}
        self.pending_first: dict[int, list[Block]] = {}
        self.pending_ready_certs: dict[int, QC] = {}
        self.pending_commits: dict[bytes, QC] = {}
        self.fetching: set[int] = set()
        self.proposed_slots: set[tuple[int, int]] = set()
        self._notes: list[dict] = []

    # -- driver interface --------------------------------------------------

    def boot(self, now: int) -> list[Action]:
        # Nothing to do until a request arrives: proposals are demand
        # driven and the watchdog only runs while work is pending.
        return []

    def on_deliver(self, msg: object, now: int) -> list[Action]:
        if isinstance(msg, Block):
            return self.on_proposal(msg, now)
        if isinstance(msg, RecoveryProposal):
            actions = self.on_ready_cert(msg.ready_cert, now)
            return actions + self.on_proposal(msg.block, now)
        if isinstance(msg, Vote):
            return self.on_vote(msg, now)
        if isinstance(msg, ViewChangeMsg):
            return self.on_view_change(msg, now)
        if isinstance(msg, NewViewMsg):
            return self.on_new_view(msg, now)
        if isinstance(msg, ReadyMsg):
            return self.on_ready(msg, now)
        if isinstance(msg, QC):
            return self.on_ready_cert(msg, now)
        if isinstance(msg, PayloadRequest):
            return self.on_payload_request(msg, now)
        if isinstance(msg, PayloadData):
            return self.on_payload_data(msg, now)
        if isinstance(msg, NegativeResponse):
            return self.on_negative_response(msg, now)
        if isinstance(msg, BlockFetch):
            return self.on_block_fetch(msg, now)
        if isinstance(msg, BlockData):
            return self.on_block_data(msg, now)
        if isinstance(msg, EquivocationProof):
            return self._handle_proof(msg, now)
        if isinstance(msg, ClientRequest):
            return self.on_client_request(msg, now)
        return []

    def on_timer_fired(self, epoch: int, now: int) -> list[Action]:
        if not self.pacemaker.on_timer(epoch, now):
            return []
        target = self._vc_target()
        actions = self._trigger_vc(target, now)
        # Certified blocks stuck behind a lost fetch outlive the request that
        # asked for them; start the fetch over instead of waiting on it.
        if self.pending_commits:
            self.fetching.clear()
            hi = max(qc.seq for qc in self.pending_commits.values())
            actions += self._fetch(self.tip_seq + 1, hi, now)
        # A timeout can also mean the primary simply never heard about our
        # backlog, so re-offer it to both the current leader and the one the
        # demanded view would install.
        leaders = dict.fromkeys(
            (primary_of(self.cur_view, self.config), primary_of(target, self.config))
        )
        for leader in leaders:
            if leader == self.node_id or leader in self.blacklist:
                continue
            for req in list(self.mempool.values())[:MAX_BATCH]:
                actions.append(Send(leader, req))
        return actions

    def drain_notes(self) -> list[dict]:
        notes, self._notes = self._notes, []
        return notes

    # -- client requests ---------------------------------------------------

    def on_client_request(self, req: ClientRequest, now: int) -> list[Action]:
        key = (req.client, req.timestamp)
        public = self.scheme.publics.get(req.client)
        if public is None or not self.scheme.verify(public, req.digest(), req.sig):
            return []
        done = self.committed_ops.get(key)
        if done is not None:
            block, _qc = self.chain[done]
            reply = make_reply(
                block.view,
                req.client,
                req.timestamp,
                execute(req.op),
                block.block_hash(),
                self.node_id,
                self.secret,
            )
            return [ReplyTo(req.client, reply)]
        actions: list[Action] = []
        if key not in self.mempool:
            self.mempool[key] = req
            leader = primary_of(self.cur_view, self.config)
            if leader != self.node_id and leader not in self.blacklist:
                actions.append(Send(leader, req))
        fresh = self.pacemaker.ensure_armed(now)
        if fresh is not None:
            actions.append(StartTimer(*fresh))
        if self._can_lead_normally():
            actions += self._propose_normal(now)
        return actions

    def _can_lead_normally(self) -> bool:
        """True while we are the primary of a view entered by committing its
        predecessor and have not demanded a later view."""
        return (
            primary_of(self.cur_view, self.config) == self.node_id
            and self.cur_view == self.chain[self.tip_seq][0].view + 1
            and self.pacemaker.highest_vc_sent <= self.cur_view
        )

    def _batch(self) -> tuple[ClientRequest, ...]:
        picked = []
        for req in self.mempool.values():
            picked.append(req)
            if len(picked) >= MAX_BATCH:
                break
        return tuple(picked)

    # -- proposals and votes -----------------------------------------------

    def _propose_normal(self, now: int) -> list[Action]:
        view, seq = self.cur_view, self.tip_seq + 1
        if (view, seq) in self.proposed_slots:
            return []
        self.proposed_slots.add((view, seq))
        block = create_prepare_msg(
            view,
            seq,
            self.tip_hash,
            self._batch(),
            self.chain[self.tip_seq][1],
            None,
            self.node_id,
            self.secret,
        )
        return [Broadcast(block)]

    def on_proposal(self, block: Block, now: int) -> list[Action]:
        header = block.header
        if header.proposer != primary_of(header.view, self.config):
            return []
        if header.proposer in self.blacklist:
            return []
        if header.payload_hash != payload_hash(block.commands):
            return []
        if not self.scheme.verify_by_id(
            header.proposer, header.digest(), block.proposer_sig
        ):
            return []
        actions = self._register_header(header, block.proposer_sig, now)
        if header.proposer in self.blacklist:
            # the header we just saw completed an equivocation pair
            return actions
        self.block_store[block.block_hash()] = block
        return actions + self._try_vote(block, now)

    def _register_header(self, header, proposer_sig: bytes, now: int) -> list[Action]:
        """Track one signed header per (view, seq, proposer); a second
        distinct one is an equivocation and yields a proof."""
        key = (header.view, header.seq, header.proposer)
        prev = self.seen_headers.get(key)
        if prev is None:
            self.seen_headers[key] = (header, proposer_sig)
            return []
        if prev[0].digest() == header.digest():
            return []
        proof = make_equivocation_proof(prev[0], prev[1], header, proposer_sig)
        return self._handle_proof(proof, now)

    def _try_vote(self, block: Block, now: int) -> list[Action]:
        view, seq = block.view, block.seq
        if view < self.cur_view:
            return []
        if view > block.qc_parent.view + 1:
            return self._try_vote_recovery(block, now)

        # normal case: the parent certificate is from the immediately
        # preceding view, so the vote only needs local chain agreement
        qc_parent = block.qc_parent
        if (
            qc_parent.kind != "block"
            or qc_parent.seq + 1 != seq
            or qc_parent.block_hash != block.header.parent_hash
        ):
            return []
        actions = self._consider_qc(qc_parent, now)
        if view != self.cur_view:
            if view > self.cur_view:
                self._buffer_first(view, block)
            return actions
        if self.tip_seq != seq - 1 or self.tip_hash != block.header.parent_hash:
            return actions
        if self.pacemaker.highest_vc_sent > view:
            return actions
        return actions + self._emit_vote(block, now)

    def _try_vote_recovery(self, block: Block, now: int) -> list[Action]:
        view, seq = block.view, block.seq
        ctx = self.recovery.get(view)
        if ctx is None or not ctx.ready_cert_seen:
            self._buffer_first(view, block)
            return []
        if view != self.cur_view:
            return []
        high = ctx.high
        ok = (
            block.header.parent_hash == high.block_hash
            and seq == high.seq + 1
            and (block.qc_parent.view, block.qc_parent.seq, block.qc_parent.block_hash)
            == (high.view, high.seq, high.block_hash)
        )
        if ok and ctx.relevant:
            allowed = {u.header.payload_hash for u in ctx.relevant}
            if block.header.payload_hash not in allowed:
                nqc = block.qc_nr
                ok = (
                    nqc is not None
                    and nqc.view == view
                    and nqc.seq == seq
                    and verify_negative_qc(nqc, self.config, self.scheme)
                )
        if not ok:
            # a first proposal that ignores the recovery obligations is not
            # just unvotable, it disqualifies the primary for this view
            self._note("recovery_reject", view=view, seq=seq)
            return self._trigger_vc(self._vc_target(), now)
        return self._emit_vote(block, now)

    def _emit_vote(self, block: Block, now: int) -> list[Action]:
        view, seq = block.view, block.seq
        if seq <= self.tip_seq:
            return []
        if (view, seq) in self.voted:
            return []
        self.voted[(view, seq)] = block.block_hash()
        self.voted_u = UHeader(header=block.header, proposer_sig=block.proposer_sig)
        vote = make_vote(view, seq, block.block_hash(), self.node_id, self.secret)
        return [Broadcast(vote)]

    def _buffer_first(self, view: int, block: Block) -> None:
        box = self.pending_first.setdefault(view, [])
        if len(box) < 8 and all(
            b.block_hash() != block.block_hash() for b in box
        ):
            box.append(block)

    def on_vote(self, vote: Vote, now: int) -> list[Action]:
        if not (0 <= vote.voter < self.config.n):
            return []
        if self.chain.get(vote.seq) is not None:
            return []
        if not self.scheme.verify_by_id(
            vote.voter, vote_digest(vote.view, vote.seq, vote.block_hash), vote.sig
        ):
            return []
        key = (vote.view, vote.seq, vote.block_hash)
        tally = self.pending_votes.setdefault(key, {})
        if vote.voter in tally:
            return []
        tally[vote.voter] = vote
        if len(tally) != self.config.quorum:
            return []
        qc = generate_qc(list(tally.values()), self.config, self.scheme)
        self._update_high(qc)
        if qc.view < self.cur_view:
            # The tally finished after we moved past its view.  Whatever
            # that view certified may since have been superseded by a
            # recovery we took part in, so the certificate is kept as
            # evidence for view changes but does not commit anything here.
            return []
        return self._commit_certified(qc.block_hash, qc, now)

    # -- certificates and commits ------------------------------------------

    def _update_high(self, qc: QC) -> None:
        if qc.kind == "block" and (qc.seq, qc.view) > (self.high_qc.seq, self.high_qc.view):
            self.high_qc = qc

    def _consider_qc(self, qc: QC, now: int) -> list[Action]:
        """Adopt knowledge from a certificate of unverified origin."""
        if qc.kind != "block":
            return []
        done = self.chain.get(qc.seq)
        if done is not None:
            if done[0].block_hash() == qc.block_hash:
                return []
            # conflicting certificate for a slot we committed: it only
            # overrules by outrunning every quorum that endorsed our fork.
            # A descendant's certificate or a new-view anchored at our tip
            # re-affirms the whole chain under it, so the slot's own
            # certificate view is not the bar; fork_vouch is.
            if qc.view <= self.fork_vouch:
                return []
            if not verify_qc(qc, self.config, self.scheme):
                return []
            self._update_high(qc)
            self._rollback_to(qc.seq - 1)
            return self._commit_certified(qc.block_hash, qc, now)
        if qc.seq <= self.tip_seq:
            return []
        if qc.view < self.cur_view:
            # A certificate from a view we already left behind cannot just
            # extend the chain: the views between may have redecided its
            # slot.  It stays available through high_qc and the block
            # store; if it still matters, a view change re-anchors on it.
            return []
        if not verify_qc(qc, self.config, self.scheme):
            return []
        self._update_high(qc)
        return self._commit_certified(qc.block_hash, qc, now)

    def _commit_certified(self, block_hash: bytes, qc: QC, now: int) -> list[Action]:
        """Commit a certified block plus any uncommitted ancestors.

        The caller vouches for qc.  Ancestor certificates ride inside each
        block and were checked by the 2f+1 voters who certified the child,
        so they are not re-verified here.  If the ancestry crosses a slot we
        committed differently, the quorum behind qc consciously built past
        our copy, so the incoming chain wins whenever qc outruns every
        quorum that endorsed ours; the crossed slot was redecided while we
        were cut off, and our copy rolls back.
        """
        block = self.block_store.get(block_hash)
        if block is None:
            self.pending_commits[block_hash] = qc
            return self._fetch(self.tip_seq + 1, qc.seq, now)
        segment = [(block, qc)]
        walker = block
        while walker.seq > 1:
            pseq = walker.seq - 1
            done = self.chain.get(pseq)
            if done is not None:
                if done[0].block_hash() == walker.header.parent_hash:
                    break
                if qc.view <= self.fork_vouch:
                    return []
            parent = self.block_store.get(walker.header.parent_hash)
            if parent is None:
                self.pending_commits[block_hash] = qc
                return self._fetch(min(self.tip_seq + 1, pseq), pseq, now)
            segment.append((parent, walker.qc_parent))
            walker = parent
        anchor = walker.seq - 1
        committed_anchor = self.chain.get(anchor)
        if (
            committed_anchor is None
            or committed_anchor[0].block_hash() != walker.header.parent_hash
        ):
            raise ProtocolViolation(
                f"certified chain at seq {walker.seq} does not connect to "
                f"the committed prefix at seq {anchor}"
            )
        if anchor < self.tip_seq:
            self._rollback_to(anchor)
        actions: list[Action] = []
        for blk, cert in reversed(segment):
            self._commit_block(blk, cert, actions)
        actions += self._after_commit(now)
        return actions

    def _commit_block(self, block: Block, qc: QC, actions: list[Action]) -> None:
        assert block.seq == self.tip_seq + 1
        self.chain[block.seq] = (block, qc)
        self.tip_seq = block.seq
        self.tip_hash = block.block_hash()
        self.fork_vouch = max(self.fork_vouch, qc.view)
        self._update_high(qc)
        actions.append(Commit(block, qc))
        for req in block.commands:
            key = (req.client, req.timestamp)
            self.mempool.pop(key, None)
            if key in self.committed_ops:
                # Already applied at an earlier height.  A proposer that has
                # not yet fetched the payload of a certified ancestor cannot
                # filter its batch against it, so a command can reappear in a
                # later block; it must still take effect exactly once.
                continue
            self.committed_ops[key] = block.seq
            self._note("exec", client=req.client, ts=req.timestamp, seq=block.seq)
            reply = make_reply(
                block.view,
                req.client,
                req.timestamp,
                execute(req.op),
                block.block_hash(),
                self.node_id,
                self.secret,
            )
            actions.append(ReplyTo(req.client, reply))
        if self.voted_u is not None and self.voted_u.seq <= block.seq:
            self.voted_u = None
        self.pending_commits.pop(block.block_hash(), None)
        self.fetching.discard(block.seq)

    def _after_commit(self, now: int) -> list[Action]:
        actions: list[Action] = []
        epoch_deadline = self.pacemaker.on_commit(now)
        if self.mempool:
            actions.append(StartTimer(*epoch_deadline))
        else:
            self.pacemaker.disarm()
        tip_block = self.chain[self.tip_seq][0]
        self.cur_view = max(self.cur_view, tip_block.view + 1)
        self.mode = "normal"
        self.pacemaker.prune(self.cur_view - 1)
        for v in [v for v in self.recovery if v < self.cur_view]:
            del self.recovery[v]
        for v in [v for v in self.vc_msgs if v < self.cur_view]:
            del self.vc_msgs[v]
        for v in [v for v in self.pending_ready_certs if v < self.cur_view]:
            del self.pending_ready_certs[v]
        for v in [v for v in self.pending_first if v < self.cur_view]:
            del self.pending_first[v]
        for key in [k for k in self.pending_votes if k[1] <= self.tip_seq]:
            del self.pending_votes[key]
        for key in [k for k in self.voted if k[1] <= self.tip_seq]:
            del self.voted[key]

        # stashed certificates may now connect to the chain
        for h, qc in list(self.pending_commits.items()):
            if qc.view < self.cur_view:
                # went stale while we waited for its block; a view change
                # will resurface it if it still matters
                del self.pending_commits[h]
                continue
            if qc.seq > self.tip_seq and h in self.block_store:
                actions += self._commit_certified(h, qc, now)
                return actions

        leader = primary_of(self.cur_view, self.config)
        if leader in self.blacklist:
            actions += self._trigger_vc(self._vc_target(), now)
        elif self._can_lead_normally() and self.mempool:
            actions += self._propose_normal(now)
        elif self.mempool and leader != self.node_id:
            # whatever is still queued here may never have reached the leader
            for req in list(self.mempool.values())[:MAX_BATCH]:
                actions.append(Send(leader, req))
        actions += self._retry_buffered(self.cur_view, now)
        return actions

    # -- view changes ------------------------------------------------------

    def _vc_target(self) -> int:
        return max(self.cur_view, self.pacemaker.highest_vc_sent) + 1

    def _trigger_vc(
        self, target: int, now: int, proof: EquivocationProof | None = None
    ) -> list[Action]:
        if target <= self.pacemaker.highest_vc_sent:
            return []
        u = None
        if self.voted_u is not None and self.voted_u.seq > self.high_qc.seq:
            u = self.voted_u
        vc = make_view_change(target, self.high_qc, u, proof, self.node_id, self.secret)
        self.pacemaker.mark_vc_sent(target)
        self.mode = "view_change"
        return [Broadcast(vc), StartTimer(*self.pacemaker.on_failure(now))]

    def on_view_change(self, vc: ViewChangeMsg, now: int) -> list[Action]:
        if not (0 <= vc.sender < self.config.n):
            return []
        if not self.scheme.verify_by_id(vc.sender, vc.body_digest(), vc.sig):
            return []
        actions: list[Action] = []
        if vc.proof is not None:
            actions += self._handle_proof(vc.proof, now)
        join = self.pacemaker.on_vc_observed(vc.sender, vc.next_view, self.cur_view)
        if join is not None:
            actions += self._trigger_vc(join, now)
        # A demand can carry a certificate we lack, including a strictly
        # fresher one for a height we filled from a fork; let the usual gate
        # sort stale from new.
        actions += self._consider_qc(vc.qc_latest, now)
        if (
            primary_of(vc.next_view, self.config) == self.node_id
            and vc.next_view >= self.cur_view
            and vc.next_view not in self.nv_sent
        ):
            box = self.vc_msgs.setdefault(vc.next_view, {})
            box.setdefault(vc.sender, vc)
            others = [s for s in box if s != self.node_id]
            if len(others) >= self.config.quorum - 1:
                actions += self._build_new_view(vc.next_view, now)
        return actions

    def _build_new_view(self, view: int, now: int) -> list[Action]:
        """Fold 2f+1 view-change messages (always including our own view of
        the world) into an aggregate and announce the new view."""
        self.nv_sent.add(view)
        box = self.vc_msgs[view]
        mine = box.get(self.node_id)
        if mine is None:
            u = None
            if self.voted_u is not None and self.voted_u.seq > self.high_qc.seq:
                u = self.voted_u
            mine = make_view_change(
                view, self.high_qc, u, None, self.node_id, self.secret
            )
        entries = [mine]
        for sender, m in box.items():
            if sender != self.node_id and len(entries) < self.config.quorum:
                entries.append(m)
        aggqc = create_agg_qc(
            entries,
            self.config,
            self.scheme,
            strip_sigs=(self.verify_mode == "linear"),
        )
        relevant = [u for u in relevant_us(aggqc) if self._plausible_u(u)]
        need_payload = bool(relevant) and not any(
            u.u_hash() in self.block_store for u in relevant
        )
        nv = create_nv_msg(aggqc, need_payload, self.node_id, self.secret)
        return [Broadcast(nv)]

    def _plausible_u(self, u: UHeader) -> bool:
        p = u.header.proposer
        return p == primary_of(u.header.view, self.config) and self.scheme.verify_by_id(
            p, u.header.digest(), u.proposer_sig
        )

    def on_new_view(self, nv: NewViewMsg, now: int) -> list[Action]:
        if nv.sender != primary_of(nv.view, self.config):
            return []
        if nv.view < self.cur_view or nv.view in self.recovery:
            return []
        if nv.sender in self.blacklist:
            return self._trigger_vc(max(self._vc_target(), nv.view + 1), now)
        ok, high = self._verify_new_view(nv)
        if not ok:
            return []
        relevant = [u for u in relevant_us(nv.aggqc) if self._plausible_u(u)]
        self.cur_view = nv.view
        ctx = _Recovery(
            view=nv.view,
            aggqc=nv.aggqc,
            high=high,
            relevant=relevant,
            need_payload=nv.need_payload,
        )
        self.recovery[nv.view] = ctx
        actions: list[Action] = []
        for u in relevant:
            actions += self._register_header(u.header, u.proposer_sig, now)
        self._adopt_authoritative(high, nv.view, now)
        self.pacemaker.prune(self.cur_view - 1)
        for v in [v for v in self.vc_msgs if v <= self.cur_view]:
            del self.vc_msgs[v]
        for v in [v for v in self.recovery if v < self.cur_view]:
            del self.recovery[v]
        if nv.sender not in self.blacklist:
            attachment = None
            if nv.need_payload and self.piggyback:
                held = [u for u in relevant if u.u_hash() in self.block_store]
                if held:
                    attachment = self.block_store[held[0].u_hash()].commands
                else:
                    attachment = make_negative_response(
                        nv.view, high.seq + 1, self.node_id, self.secret
                    )
            actions.append(
                Send(nv.sender, make_ready(nv.view, self.node_id, self.secret, attachment))
            )
        actions.append(StartTimer(*self.pacemaker.arm(now)))
        cert = self.pending_ready_certs.pop(nv.view, None)
        if cert is not None:
            actions += self.on_ready_cert(cert, now)
        actions += self._retry_buffered(nv.view, now)
        return actions

    def _verify_new_view(self, nv: NewViewMsg) -> tuple[bool, QC | None]:
        """Check a new-view; cost depends on verify_mode.

        linear: one aggregate verification covers all 2f+1 entry bodies and
        one more covers the freshest certificate.  quadratic: each entry's
        certificate is verified on its own, the way a protocol without
        signature aggregation would have to.
        """
        aggqc = nv.aggqc
        entries = aggqc.entries
        senders = tuple(e.sender for e in entries)
        before = self.scheme.aggregate_verify_calls
        structural = (
            aggqc.view == nv.view
            and len(entries) >= self.config.quorum
            and all(e.next_view == nv.view for e in entries)
            and all(0 <= s < self.config.n for s in senders)
            and all(a < b for a, b in zip(senders, senders[1:]))
            and aggqc.agg.signers == senders
        )
        ok = structural and self.scheme.verify_by_id(
            nv.sender, nv.body_digest(), nv.sig
        )
        high: QC | None = None
        if ok:
            high = aggqc_high(aggqc)
            if self.verify_mode == "linear":
                items = [
                    (e.body_digest(), self.scheme.publics[e.sender]) for e in entries
                ]
                ok = self.scheme.verify_aggregate(aggqc.agg, items) and verify_qc(
                    high, self.config, self.scheme
                )
            else:
                for e in entries:
                    if not self.scheme.verify_by_id(e.sender, e.body_digest(), e.sig):
                        ok = False
                    if not verify_qc(e.qc_latest, self.config, self.scheme):
                        ok = False
        delta = self.scheme.aggregate_verify_calls - before
        self._note(
            "new_view_verify",
            view=nv.view,
            aggregate_verifies=delta,
            ok=bool(ok),
            mode=self.verify_mode,
        )
        return (ok, high if ok else None)

    def _adopt_authoritative(self, high: QC, nv_view: int, now: int) -> None:
        """Take note of a new-view's anchor without committing anything.

        The anchor is what the first proposal of the view must extend; it
        becomes final when that proposal's own certificate forms, which
        carries the anchor into the chain of anyone still missing it.
        Committing it here instead would let a straggler mint a commit for
        a certificate the views in between may have already orphaned.  If
        the aggregate anchors exactly at our tip, its 2f+1 demands are a
        fresh endorsement of our whole fork: any certificate absent from
        them was held by at most f honest replicas and cannot overrule us,
        which is recorded by raising fork_vouch to this view.
        """
        self._update_high(high)
        if self.tip_seq == high.seq and self.tip_hash == high.block_hash:
            self.fork_vouch = max(self.fork_vouch, nv_view)

    def _rollback_to(self, anchor_seq: int) -> None:
        dropped = []
        for s in range(self.tip_seq, anchor_seq, -1):
            block, _qc = self.chain.pop(s)
            dropped.append(s)
            for req in block.commands:
                key = (req.client, req.timestamp)
                # Only the height that actually applied the command owns its
                # entry; a duplicate copy skipped at commit time stays applied.
                if self.committed_ops.get(key) == s:
                    self.committed_ops.pop(key)
                    if key not in self.mempool:
                        self.mempool[key] = req
        self.tip_seq = anchor_seq
        self.tip_hash = self.chain[anchor_seq][0].block_hash()
        if dropped:
            self._note("rollback", seqs=sorted(dropped), to_seq=anchor_seq)

    # -- ready phase and the first proposal of a view ----------------------

    def on_ready(self, ready: ReadyMsg, now: int) -> list[Action]:
        if primary_of(ready.view, self.config) != self.node_id:
            return []
        ctx = self.recovery.get(ready.view)
        if ctx is None or ready.sender in ctx.readys:
            return []
        if not (0 <= ready.sender < self.config.n):
            return []
        if not self.scheme.verify_by_id(
            ready.sender, ready_digest(ready.view), ready.sig
        ):
            return []
        ctx.readys[ready.sender] = ready
        att = ready.attachment
        if isinstance(att, tuple):
            got = payload_hash(att)
            for u in ctx.relevant:
                if u.header.payload_hash == got:
                    ctx.payloads.setdefault(u.u_hash(), att)
        elif isinstance(att, NegativeResponse):
            if (
                att.sender == ready.sender
                and att.view == ready.view
                and att.seq == ctx.high.seq + 1
                and self.scheme.verify_by_id(
                    att.sender, negresp_digest(att.view, att.seq), att.sig
                )
            ):
                ctx.negresps.setdefault(att.sender, att)
        if len(ctx.readys) < self.config.quorum:
            return []
        if self.piggyback:
            return self._try_first_proposal(ctx, now)
        if not ctx.cert_broadcast:
            ctx.cert_broadcast = True
            cert = generate_ready_qc(
                list(ctx.readys.values())[: self.config.quorum],
                self.config,
                self.scheme,
            )
            return [Broadcast(cert)]
        return []

    def _build_first_block(self, ctx: _Recovery) -> Block | None:
        """The first proposal of a view: re-propose a possibly committed
        payload if one is recoverable, otherwise displace it with a refusal
        certificate, otherwise just extend with fresh commands."""
        view, seq = ctx.view, ctx.high.seq + 1
        for u in ctx.relevant:
            held = self.block_store.get(u.u_hash())
            commands = held.commands if held is not None else ctx.payloads.get(u.u_hash())
            if commands is not None:
                return create_prepare_msg(
                    view, seq, ctx.high.block_hash, commands,
                    ctx.high, None, self.node_id, self.secret,
                )
        if ctx.relevant:
            if len(ctx.negresps) < self.config.quorum:
                return None
            qc_nr = generate_negative_qc(
                list(ctx.negresps.values())[: self.config.quorum],
                ctx.relevant[0].u_hash(),
                self.config,
                self.scheme,
            )
            return create_prepare_msg(
                view, seq, ctx.high.block_hash, self._batch(),
                ctx.high, qc_nr, self.node_id, self.secret,
            )
        return create_prepare_msg(
            view, seq, ctx.high.block_hash, self._batch(),
            ctx.high, None, self.node_id, self.secret,
        )

    def _try_first_proposal(self, ctx: _Recovery, now: int) -> list[Action]:
        if ctx.proposed or (ctx.view, ctx.high.seq + 1) in self.proposed_slots:
            return []
        block = self._build_first_block(ctx)
        if block is None:
            return []
        ctx.proposed = True
        self.proposed_slots.add((ctx.view, ctx.high.seq + 1))
        if self.piggyback:
            cert = generate_ready_qc(
                list(ctx.readys.values())[: self.config.quorum],
                self.config,
                self.scheme,
            )
            return [Broadcast(RecoveryProposal(block=block, ready_cert=cert))]
        return [Broadcast(block)]

    def on_ready_cert(self, cert: QC, now: int) -> list[Action]:
        if cert.kind != "ready":
            return []
        ctx = self.recovery.get(cert.view)
        if ctx is None:
            if cert.view >= self.cur_view:
                self.pending_ready_certs.setdefault(cert.view, cert)
            return []
        if ctx.ready_cert_seen:
            return []
        if not verify_qc(cert, self.config, self.scheme):
            return []
        ctx.ready_cert_seen = True
        actions: list[Action] = []
        if primary_of(cert.view, self.config) == self.node_id and not self.piggyback:
            missing = ctx.relevant and not any(
                u.u_hash() in self.block_store for u in ctx.relevant
            )
            if missing and not ctx.payload_requested:
                ctx.payload_requested = True
                actions.append(
                    Broadcast(
                        make_payload_request(
                            ctx.view, ctx.high.seq + 1, self.node_id, self.secret
                        )
                    )
                )
            elif not missing:
                actions += self._try_first_proposal(ctx, now)
        actions += self._retry_buffered(cert.view, now)
        return actions

    def on_payload_request(self, req: PayloadRequest, now: int) -> list[Action]:
        if req.sender != primary_of(req.view, self.config):
            return []
        if not self.scheme.verify_by_id(
            req.sender, payload_request_digest(req.view, req.seq), req.sig
        ):
            return []
        ctx = self.recovery.get(req.view)
        if ctx is None or req.seq != ctx.high.seq + 1:
            return []
        for u in ctx.relevant:
            held = self.block_store.get(u.u_hash())
            if held is not None:
                return [
                    Send(
                        req.sender,
                        make_payload_data(
                            req.view, req.seq, held.commands, self.node_id, self.secret
                        ),
                    )
                ]
        return [
            Send(
                req.sender,
                make_negative_response(req.view, req.seq, self.node_id, self.secret),
            )
        ]

    def on_payload_data(self, pd: PayloadData, now: int) -> list[Action]:
        ctx = self.recovery.get(pd.view)
        if ctx is None or primary_of(pd.view, self.config) != self.node_id:
            return []
        if pd.seq != ctx.high.seq + 1 or ctx.proposed:
            return []
        if not self.scheme.verify_by_id(pd.sender, pd.body_digest(), pd.sig):
            return []
        got = payload_hash(pd.commands)
        matched = False
        for u in ctx.relevant:
            if u.header.payload_hash == got:
                ctx.payloads.setdefault(u.u_hash(), pd.commands)
                matched = True
        if not matched:
            return []
        return self._try_first_proposal(ctx, now)

    def on_negative_response(self, nr: NegativeResponse, now: int) -> list[Action]:
        ctx = self.recovery.get(nr.view)
        if ctx is None or primary_of(nr.view, self.config) != self.node_id:
            return []
        if nr.seq != ctx.high.seq + 1 or not (0 <= nr.sender < self.config.n):
            return []
        if not self.scheme.verify_by_id(
            nr.sender, negresp_digest(nr.view, nr.seq), nr.sig
        ):
            return []
        ctx.negresps.setdefault(nr.sender, nr)
        if ctx.proposed or len(ctx.negresps) < self.config.quorum:
            return []
        if any(
            u.u_hash() in self.block_store or u.u_hash() in ctx.payloads
            for u in ctx.relevant
        ):
            return []
        return self._try_first_proposal(ctx, now)

    def _retry_buffered(self, view: int, now: int) -> list[Action]:
        actions: list[Action] = []
        for block in self.pending_first.pop(view, []):
            actions += self._try_vote(block, now)
        return actions

    # -- chain sync --------------------------------------------------------

    def _fetch(self, lo: int, hi: int, now: int) -> list[Action]:
        wanted = [s for s in range(lo, hi + 1) if s not in self.fetching]
        if not wanted:
            return []
        self.fetching.update(wanted)
        req = make_block_fetch(min(wanted), max(wanted), self.node_id, self.secret)
        targets = [n for n in range(self.config.n) if n != self.node_id]
        return [Send(t, req) for t in targets[: self.config.quorum]]

    def on_block_fetch(self, bf: BlockFetch, now: int) -> list[Action]:
        if not (0 <= bf.sender < self.config.n) or bf.sender == self.node_id:
            return []
        if not self.scheme.verify_by_id(bf.sender, bf.body_digest(), bf.sig):
            return []
        lo = max(bf.from_seq, 1)
        hi = min(bf.to_seq, self.tip_seq, lo + FETCH_SPAN - 1)
        if lo > hi:
            return []
        segments = tuple(self.chain[s] for s in range(lo, hi + 1))
        return [Send(bf.sender, make_block_data(segments, self.node_id, self.secret))]

    def on_block_data(self, bd: BlockData, now: int) -> list[Action]:
        if not (0 <= bd.sender < self.config.n):
            return []
        if not self.scheme.verify_by_id(bd.sender, bd.body_digest(), bd.sig):
            return []
        actions: list[Action] = []
        for block, qc in sorted(bd.segments, key=lambda seg: seg[0].seq):
            if qc.block_hash != block.block_hash():
                continue
            if block.header.payload_hash != payload_hash(block.commands):
                continue
            self.block_store.setdefault(block.block_hash(), block)
            actions += self._consider_qc(qc, now)
        # a stashed certificate may now have its block
        for h, qc in list(self.pending_commits.items()):
            if qc.view < self.cur_view:
                del self.pending_commits[h]
                continue
            if qc.seq > self.tip_seq and h in self.block_store:
                actions += self._commit_certified(h, qc, now)
                break
        return actions

    # -- equivocation ------------------------------------------------------

    def _handle_proof(self, proof: EquivocationProof, now: int) -> list[Action]:
        pid = proof.proof_id()
        if pid in self.relayed_proofs:
            return []
        if not verify_equivocation_proof(proof, self.scheme):
            return []
        self.relayed_proofs.add(pid)
        self.blacklist.add(proof.accused)
        actions: list[Action] = [
            ScheduleBlacklist(proof.accused, proof),
            Broadcast(proof),
        ]
        if proof.accused == primary_of(self.cur_view, self.config):
            actions += self._trigger_vc(self._vc_target(), now, proof=proof)
        return actions

    # -- misc --------------------------------------------------------------

    def _note(self, kind: str, **fields) -> None:
        self._notes.append({"kind": kind, **fields})
