"""Bounded-exhaustive exploration of the n=4 equivocation window.

One fixed protocol instance: four nodes, the primary of view 1 equivocates
two blocks at height 1 and may assist either side with votes, view-change
entries, readys, and recovery votes.  Everything else is honest.  The
explorer enumerates every delivery order of every message the system can
produce over a two-view horizon, merging states reached along different
orders, and checks two things on every single transition:

* a block held by at least f+1 honest nodes at a height is never replaced
  or dropped at any honest node afterwards, and
* there exists some schedule on which a block held by at most f honest
  nodes is replaced, with the equivocator blacklisted everywhere by the
  end of it.

Time is virtualized: watchdog deadlines always count as expired when the
scheduler chooses to fire them, which is exactly the adversarial-timing
assumption, so explored states differ only in protocol-visible content.

The horizon is enforced as a window: messages minted for views past it
are never delivered and watchdog demands that could only target views
past it are never scheduled, because nothing either produces can change
what happens inside the window.  Bookkeeping that only such futures
could ever read again is likewise left out of the state identity, so
runs that differ only in out-of-window residue merge.  Block-transfer
requests are re-deliverable instead of consumed: a replica missing a
block retries its fetch on its own watchdog, and keeping the request
live in the queue reproduces every retry timing without the timer.
"""

from __future__ import annotations

import hashlib
import io
import pickle
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

from .crypto import Keyring
from .messages import (
    QC,
    Block,
    BlockFetch,
    ClientRequest,
    Config,
    EquivocationProof,
    NegativeResponse,
    NewViewMsg,
    PayloadData,
    PayloadRequest,
    ReadyMsg,
    RecoveryProposal,
    UHeader,
    ViewChangeMsg,
    Vote,
    create_prepare_msg,
    make_genesis,
    make_ready,
    make_view_change,
    make_vote,
    primary_of,
    signed_request,
)
from .replica import (
    Broadcast,
    Commit,
    Replica,
    ReplyTo,
    ScheduleBlacklist,
    Send,
    StartTimer,
)

N = 4
BYZ = 1
HONEST = (0, 2, 3)
CLIENT = 4
HORIZON_VIEW = 3  # stop branching once every honest node got here


def _msg_view(msg) -> int | None:
    """The view a message belongs to, or None if it is view-free.

    Messages for views at or past the horizon are never delivered: no
    certificate for such a view can form inside the window, so the only
    thing they could do is move a node past the horizon, where the search
    stops anyway.
    """
    if isinstance(msg, (Block, QC, Vote, NewViewMsg, ReadyMsg,
                        PayloadRequest, PayloadData, NegativeResponse)):
        return msg.view
    if isinstance(msg, RecoveryProposal):
        return msg.block.view
    if isinstance(msg, ViewChangeMsg):
        return msg.next_view
    return None  # requests, proofs and block transfers always circulate


def _high_dead_fields(cur_view: int, node_id: int, nv_sent, config) -> bool:
    """True when the node's highest certificate can never be read again.

    The highest certificate and the retained payload header leave a node
    only inside view-change messages.  Once the node is past view 1,
    every demand it can still issue targets a view past the horizon; the
    one exception is the primary of view 2 building its new-view from a
    box that is missing its own entry, which reads both directly.
    """
    if cur_view < HORIZON_VIEW - 1:
        return False
    if (
        node_id == primary_of(HORIZON_VIEW - 1, config)
        and cur_view <= HORIZON_VIEW - 1
        and HORIZON_VIEW - 1 not in nv_sent
    ):
        return False
    return True


def _high_dead(r: Replica) -> bool:
    return _high_dead_fields(r.cur_view, r.node_id, r.nv_sent, r.config)


@dataclass
class ConfigResult:
    assignment: dict[int, str]
    byz_u: str | None
    states: int
    capped: bool
    violations: list[str] = field(default_factory=list)
    revoked_and_blacklisted: bool = False


@dataclass
class ExploreResult:
    configs: list[ConfigResult]

    @property
    def states(self) -> int:
        return sum(c.states for c in self.configs)

    @property
    def complete(self) -> bool:
        return not any(c.capped for c in self.configs)

    @property
    def violations(self) -> list[str]:
        return [v for c in self.configs for v in c.violations]

    @property
    def witnesses(self) -> list[ConfigResult]:
        return [c for c in self.configs if c.revoked_and_blacklisted]


class _Instance:
    """The fixed cast: keys, genesis, twin blocks, canned adversary messages."""

    def __init__(self):
        self.config = Config(n=N, timeout_base_ms=40)
        self.keyring = Keyring(seed=5, node_ids=list(range(N + 1)))
        self.scheme = self.keyring.scheme()
        self.genesis, self.genesis_qc = make_genesis(
            self.config, self.keyring, self.scheme
        )
        self.req_a = signed_request(CLIENT, 1, b"alpha", self.keyring.secret(CLIENT))
        secret = self.keyring.secret(BYZ)
        # One twin carries the request, the other is empty.  The conflict is
        # about block identity, not payload, and a single request keeps the
        # reachable state count down.
        self.twins = {
            "x": create_prepare_msg(
                1, 1, self.genesis.block_hash(), (self.req_a,),
                self.genesis_qc, None, BYZ, secret,
            ),
            "y": create_prepare_msg(
                1, 1, self.genesis.block_hash(), (),
                self.genesis_qc, None, BYZ, secret,
            ),
        }
        self.twin_hashes = {
            side: blk.block_hash() for side, blk in self.twins.items()
        }
        self.twin_votes = {
            side: make_vote(1, 1, blk.block_hash(), BYZ, secret)
            for side, blk in self.twins.items()
        }
        # Everything below is immutable and shared by reference across all
        # replicas and snapshots, so snapshots store a one-byte token for
        # each instead of re-serializing the object graph every time.
        self._shared_objs = [
            self.config, self.scheme, self.genesis, self.genesis_qc,
            self.req_a, self.twins["x"], self.twins["y"],
            self.twin_votes["x"], self.twin_votes["y"],
        ]
        self._shared_ids = {id(o): i for i, o in enumerate(self._shared_objs)}

    def dumps(self, obj) -> bytes:
        buf = io.BytesIO()
        _Freezer(buf, self._shared_ids).dump(obj)
        return buf.getvalue()

    def loads(self, blob: bytes):
        return _Thawer(io.BytesIO(blob), self._shared_objs).load()

    def fresh_replicas(self) -> dict[int, Replica]:
        out = {}
        for i in HONEST:
            replica = Replica(
                i,
                self.config,
                self.keyring.secret(i),
                self.scheme,
                self.genesis,
                self.genesis_qc,
            )
            # Seed the mempool directly so the watchdog is armed; the
            # forwarding this produces goes to the equivocator and is dropped.
            replica.on_client_request(self.req_a, 0)
            replica.drain_notes()
            out[i] = replica
        return out

    def byz_view_change(self, byz_u: str | None) -> ViewChangeMsg:
        u = None
        if byz_u is not None:
            twin = self.twins[byz_u]
            u = UHeader(header=twin.header, proposer_sig=twin.proposer_sig)
        return make_view_change(
            2, self.genesis_qc, u, None, BYZ, self.keyring.secret(BYZ)
        )


class _Freezer(pickle.Pickler):
    def __init__(self, buf, shared_ids):
        super().__init__(buf, protocol=4)
        self._shared_ids = shared_ids

    def persistent_id(self, obj):
        return self._shared_ids.get(id(obj))


class _Thawer(pickle.Unpickler):
    def __init__(self, buf, shared_objs):
        super().__init__(buf)
        self._shared_objs = shared_objs

    def persistent_load(self, pid):
        return self._shared_objs[pid]


def _recovery_fp(ctx, dumps) -> tuple:
    # The ready, payload and refusal boxes are only ever read while the
    # first proposal (or, without piggybacking, the ready certificate) is
    # still pending; afterwards filings continue but nothing looks, so
    # they stop being part of the state.
    return (
        ctx.view,
        hashlib.sha256(dumps(ctx.aggqc)).digest(),
        (ctx.high.seq, ctx.high.view, ctx.high.block_hash),
        tuple(dumps(u) for u in ctx.relevant),
        ctx.need_payload,
        ctx.ready_cert_seen,
        ctx.cert_broadcast,
        ctx.payload_requested,
        ctx.proposed,
        () if ctx.proposed or ctx.cert_broadcast else tuple(sorted(ctx.readys)),
        () if ctx.proposed else tuple(sorted(ctx.payloads)),
        () if ctx.proposed else tuple(sorted(ctx.negresps)),
    )


def _replica_fp(r: Replica, dumps) -> tuple:
    """State identity of one replica: everything a future can still read.

    Fields are dropped (not just canonicalized) whenever every remaining
    read of them sits behind the horizon: the highest certificate and the
    retained payload header once no in-window view change can carry them,
    vote ledger and tally entries for views whose certificates the
    staleness gate would refuse, demand bookkeeping once every demand the
    node can still issue is out of window, and per-view tables keyed past
    the horizon.  The execution mode is pure labeling and never read at
    all.  Merging states that differ only in such residue is what keeps
    the window enumerable.
    """
    pm = r.pacemaker
    high_dead = _high_dead(r)
    return (
        r.cur_view,
        r.tip_seq,
        r.tip_hash,
        r.fork_vouch,
        tuple(sorted(
            (seq, blk.block_hash(), qc.view) for seq, (blk, qc) in r.chain.items()
        )),
        None if high_dead else
        (r.high_qc.seq, r.high_qc.view, r.high_qc.block_hash),
        None if high_dead or r.voted_u is None else dumps(r.voted_u),
        # only read back when re-voting the same slot in the same view
        tuple(sorted(
            item for item in r.voted.items() if item[0][0] >= r.cur_view
        )),
        tuple(sorted((k, dumps(v)) for k, v in r.seen_headers.items())),
        tuple(sorted(r.block_store)),
        tuple(sorted(
            (k, tuple(sorted(v)))
            for k, v in r.pending_votes.items()
            if k[0] >= r.cur_view or not high_dead
        )),
        tuple(r.mempool),
        tuple(sorted(r.committed_ops.items())),
        tuple(sorted(r.blacklist)),
        tuple(sorted(r.relayed_proofs)),
        # Deadline values, backoff width and the arming epoch never reach the
        # wire and the scheduler treats every armed watchdog as fireable, so
        # only the armed bit and the demand bookkeeping can influence what
        # happens next; none of it matters once every further demand is out
        # of window.
        () if max(r.cur_view, pm.highest_vc_sent) >= HORIZON_VIEW - 1 else
        (pm.deadline is not None, pm.highest_vc_sent,
         tuple(sorted(pm._vc_seen.items()))),
        tuple(sorted(
            (v, tuple(sorted(box)))
            for v, box in r.vc_msgs.items() if v < HORIZON_VIEW
        )),
        tuple(sorted(v for v in r.nv_sent if v < HORIZON_VIEW)),
        tuple(sorted(
            (view, _recovery_fp(ctx, dumps)) for view, ctx in r.recovery.items()
        )),
        tuple(sorted(
            (view, tuple(b.block_hash() for b in blocks))
            for view, blocks in r.pending_first.items() if view < HORIZON_VIEW
        )),
        tuple(sorted(
            (view, qc.block_hash)
            for view, qc in r.pending_ready_certs.items() if view < HORIZON_VIEW
        )),
        tuple(sorted((h, qc.view) for h, qc in r.pending_commits.items())),
        tuple(sorted(r.fetching)),
        tuple(sorted(s for s in r.proposed_slots if s[0] < HORIZON_VIEW)),
    )


class _Node(NamedTuple):
    """One honest replica, frozen: its snapshot, identity, and the handful
    of scalars the scheduler and the dead-traffic rules read per state.

    Only the replica a move touches is ever thawed; the other two ride
    along by reference, which is what makes a transition cheap.  Nothing
    here is mutated after construction.
    """

    blob: bytes
    fp: tuple
    fp_hash: bytes
    chain: dict
    cur_view: int
    armed: bool
    hvs: int
    vc_seen: dict
    nv_sent: frozenset
    blacklist: frozenset
    recovery_keys: frozenset
    fork_vouch: int
    committed_keys: frozenset
    mempool_keys: frozenset
    relayed: frozenset
    store: frozenset
    voted_keys: frozenset
    recovery_proposed: frozenset
    byz_bl: bool


class _World:
    __slots__ = ("nodes", "queue", "byz_vc_sent", "revoked")

    def __init__(self, nodes, queue, byz_vc_sent, revoked):
        self.nodes: dict[int, _Node] = nodes
        self.queue: dict[tuple[int, bytes], object] = queue
        self.byz_vc_sent: bool = byz_vc_sent
        self.revoked: bool = revoked


class _Explorer:
    def __init__(self, inst: _Instance, assignment: dict[int, str],
                 byz_u: str | None, max_states: int):
        self.inst = inst
        self.assignment = assignment
        self.byz_u = byz_u
        self.max_states = max_states
        self.result = ConfigResult(
            assignment=assignment, byz_u=byz_u, states=0, capped=False
        )
        self._dead_memo: dict[tuple, bool] = {}

    # -- snapshots ---------------------------------------------------------

    def _project(self, r: Replica, blob: bytes) -> _Node:
        fp = _replica_fp(r, self.inst.dumps)
        pm = r.pacemaker
        return _Node(
            blob=blob,
            fp=fp,
            fp_hash=hashlib.sha256(pickle.dumps(fp, protocol=4)).digest(),
            chain={
                seq: blk.block_hash()
                for seq, (blk, _qc) in r.chain.items() if seq > 0
            },
            cur_view=r.cur_view,
            armed=pm.deadline is not None,
            hvs=pm.highest_vc_sent,
            vc_seen=dict(pm._vc_seen),
            nv_sent=frozenset(r.nv_sent),
            blacklist=frozenset(r.blacklist),
            recovery_keys=frozenset(r.recovery),
            fork_vouch=r.fork_vouch,
            committed_keys=frozenset(r.committed_ops),
            mempool_keys=frozenset(r.mempool),
            relayed=frozenset(r.relayed_proofs),
            store=frozenset(r.block_store),
            voted_keys=frozenset(r.voted),
            recovery_proposed=frozenset(
                view for view, ctx in r.recovery.items() if ctx.proposed
            ),
            byz_bl=BYZ in r.blacklist,
        )

    def _fingerprint(self, world: _World) -> bytes:
        h = hashlib.sha256()
        for i in HONEST:
            h.update(world.nodes[i].fp_hash)
        for target, mbytes in sorted(world.queue):
            h.update(target.to_bytes(1, "big"))
            h.update(len(mbytes).to_bytes(4, "big"))
            h.update(mbytes)
        h.update(b"\x01" if world.byz_vc_sent else b"\x00")
        h.update(b"\x01" if world.revoked else b"\x00")
        return h.digest()

    # -- adversary ---------------------------------------------------------

    def _enqueue(self, world: _World, target: int, msg) -> None:
        world.queue[(target, self.inst.dumps(msg))] = msg

    # -- dead traffic ------------------------------------------------------
    #
    # A queue entry is dead when delivering it can never again change its
    # target or produce traffic.  Deadness needs two parts: delivery must be
    # a no-op against the target's current state, and the branch the handler
    # takes must be guarded by something monotone (views only rise, the
    # blacklist, the header log, the block store and the relayed-proof set
    # only grow, a recovery slot is never rebuilt for a passed view), so
    # that the same no-op branch is taken in every reachable future.  Dead
    # entries are removed outright: runs that differ only in how much dead
    # traffic they never bothered to deliver collapse into one state.
    # Block-transfer replies stay live always: a rollback can reopen the
    # slot they talk about, so no monotone guard covers them.

    def _static_dead(self, v: _Node, node_id: int, msg) -> bool:
        cv = v.cur_view
        if isinstance(msg, Block):
            # A re-delivery of a block already held and already voted on
            # (or past its view) has nothing left to do: pruning the vote
            # ledger only happens at a commit that also moves the view
            # past the block's, so the refusal never re-opens.
            return (
                msg.view < cv
                or msg.header.proposer in v.blacklist
                or (
                    msg.block_hash() in v.store
                    and (msg.view, msg.seq) in v.voted_keys
                )
            )
        if isinstance(msg, RecoveryProposal):
            blk = msg.block
            return blk.view < cv or (
                blk.block_hash() in v.store
                and (blk.view, blk.seq) in v.voted_keys
            )
        if isinstance(msg, Vote):
            # A stale or already-decided vote can at most finish a tally
            # whose certificate the staleness gate refuses to act on; the
            # high-certificate bump that leaves behind is unreadable once
            # the node's view changes are out of window.  A filled slot
            # only re-opens through a fork switch, which also raises the
            # view past the vote's.
            return (msg.view < cv or msg.seq in v.chain) and _high_dead_fields(
                cv, node_id, v.nv_sent, self.inst.config
            )
        if isinstance(msg, ViewChangeMsg):
            if msg.proof is not None or msg.qc_latest.seq > 0:
                # qc_latest can heal a fork at any point and a proof acts
                # on delivery, so neither kind can die.
                return False
            filing_dead = (
                primary_of(msg.next_view, self.inst.config) != node_id
                or msg.next_view in v.nv_sent
                or msg.next_view < cv
                or msg.next_view >= HORIZON_VIEW
            )
            observing_dead = (
                msg.next_view <= cv
                or max(cv, v.hvs) >= HORIZON_VIEW - 1
                or msg.next_view <= v.vc_seen.get(msg.sender, 0)
            )
            return filing_dead and observing_dead
        if isinstance(msg, NewViewMsg):
            return (
                msg.sender != primary_of(msg.view, self.inst.config)
                or msg.view < cv
                or msg.view in v.recovery_keys
            )
        if isinstance(msg, ReadyMsg):
            return primary_of(msg.view, self.inst.config) != node_id or (
                msg.view < cv and msg.view not in v.recovery_keys
            )
        if isinstance(msg, QC):
            # stale for an open slot, and too old to overrule a filled one
            return msg.view < cv and msg.view <= v.fork_vouch
        if isinstance(msg, ClientRequest):
            key = (msg.client, msg.timestamp)
            return key in v.committed_keys or (
                key in v.mempool_keys and v.armed
            )
        if isinstance(msg, PayloadRequest):
            return msg.view < cv
        if isinstance(msg, (PayloadData, NegativeResponse)):
            return (
                msg.view < cv
                or primary_of(msg.view, self.inst.config) != node_id
            )
        if isinstance(msg, EquivocationProof):
            return msg.proof_id() in v.relayed
        return False

    def _noop_delivery(self, v: _Node, msg) -> bool:
        probe: Replica = self.inst.loads(v.blob)
        actions = probe.on_deliver(msg, 0)
        probe.drain_notes()
        for action in actions:
            if isinstance(action, Broadcast):
                return False
            if isinstance(action, Send) and action.to in HONEST:
                return False
        return _replica_fp(probe, self.inst.dumps) == v.fp

    def _sweep(self, world: _World) -> None:
        dead = []
        for key, msg in world.queue.items():
            target = key[0]
            v = world.nodes[target]
            if not self._static_dead(v, target, msg):
                continue
            memo_key = (target, v.fp_hash, key[1])
            verdict = self._dead_memo.get(memo_key)
            if verdict is None:
                verdict = self._noop_delivery(v, msg)
                self._dead_memo[memo_key] = verdict
            if verdict:
                dead.append(key)
        for key in dead:
            del world.queue[key]

    def _byz_react(self, world: _World, msg) -> None:
        if isinstance(msg, ViewChangeMsg) and msg.next_view == 2:
            if not world.byz_vc_sent:
                world.byz_vc_sent = True
                self._enqueue(
                    world, primary_of(2, self.inst.config),
                    self.inst.byz_view_change(self.byz_u),
                )
        elif isinstance(msg, NewViewMsg) and msg.view == 2:
            self._enqueue(
                world, primary_of(2, self.inst.config),
                make_ready(2, BYZ, self.inst.keyring.secret(BYZ)),
            )
        elif isinstance(msg, RecoveryProposal) and msg.block.view == 2:
            vote = make_vote(
                2, msg.block.seq, msg.block.block_hash(), BYZ,
                self.inst.keyring.secret(BYZ),
            )
            for target in HONEST:
                self._enqueue(world, target, vote)

    # -- transition --------------------------------------------------------

    def _deliver_local(self, world: _World, node: int, replica: Replica,
                       msg) -> None:
        self._dispatch(world, node, replica, replica.on_deliver(msg, 0))

    def _dispatch(self, world: _World, node: int, replica: Replica,
                  actions) -> None:
        for action in actions:
            if isinstance(action, Broadcast):
                view = _msg_view(action.msg)
                if view is not None and view >= HORIZON_VIEW:
                    continue  # out of window, nobody acts on it in time
                self._byz_react(world, action.msg)
                for target in HONEST:
                    if target != node:
                        self._enqueue(world, target, action.msg)
                # A node's copy of its own broadcast arrives before anything
                # the network can do, so fold it into the same transition.
                self._deliver_local(world, node, replica, action.msg)
            elif isinstance(action, Send):
                view = _msg_view(action.msg)
                if view is not None and view >= HORIZON_VIEW:
                    continue
                if action.to == node:
                    self._deliver_local(world, node, replica, action.msg)
                elif action.to in HONEST:
                    self._enqueue(world, action.to, action.msg)
                # traffic to the adversary goes unanswered
            elif isinstance(action, (Commit, ReplyTo, StartTimer, ScheduleBlacklist)):
                continue  # state already carries the effect
            else:
                raise AssertionError(f"unknown action {action!r}")
        replica.drain_notes()

    def _moves(self, world: _World) -> list[tuple]:
        if all(world.nodes[i].cur_view >= HORIZON_VIEW for i in HONEST):
            return []
        moves: list[tuple] = [("deliver", key) for key in world.queue]
        for i in HONEST:
            v = world.nodes[i]
            # A firing demands view max(cur, already-demanded)+1; once that
            # is out of window its other effects are a fetch retry, covered
            # by fetch requests staying deliverable, and a re-offer of a
            # request every mempool already holds.
            if v.armed and max(v.cur_view, v.hvs) + 1 < HORIZON_VIEW:
                moves.append(("timer", i))
        return moves

    def _child(self, parent: _World, move: tuple) -> tuple[_World, int]:
        """One transition: thaw the move's target, run it, refreeze it.

        The other replicas are untouched by construction (the network
        model turns all cross-node effects into queue entries), so the
        child shares their snapshots with the parent.
        """
        kind, arg = move
        child = _World(
            dict(parent.nodes), dict(parent.queue),
            parent.byz_vc_sent, parent.revoked,
        )
        if kind == "deliver":
            target = arg[0]
            msg = child.queue[arg]
            if not isinstance(msg, BlockFetch):
                # Fetch requests stay in the queue: the requester retries
                # them on its watchdog, so a later delivery to the same
                # peer, after that peer has learned the block, is a real
                # schedule.  Everything else is delivered once per send.
                del child.queue[arg]
            replica: Replica = self.inst.loads(parent.nodes[target].blob)
            self._dispatch(child, target, replica, replica.on_deliver(msg, 0))
        else:
            target = arg
            replica = self.inst.loads(parent.nodes[target].blob)
            pm = replica.pacemaker
            self._dispatch(
                child, target, replica,
                replica.on_timer_fired(pm.epoch, pm.deadline),
            )
        blob = self.inst.dumps(replica)
        if blob == parent.nodes[target].blob:
            child.nodes[target] = parent.nodes[target]
        else:
            child.nodes[target] = self._project(replica, blob)
        return child, target

    # -- per-transition checks ---------------------------------------------

    def _check(self, parent: _World, child: _World, target: int) -> None:
        post_t = child.nodes[target].chain
        pre_t = parent.nodes[target].chain
        if post_t == pre_t:
            return  # only the target's chain can have moved
        twins = set(self.inst.twin_hashes.values())
        pre = {i: parent.nodes[i].chain for i in HONEST}
        seqs = {s for c in pre.values() for s in c}
        for seq in seqs:
            holders: dict[bytes, list[int]] = {}
            for node, chain in pre.items():
                h = chain.get(seq)
                if h is not None:
                    holders.setdefault(h, []).append(node)
            for h, nodes in holders.items():
                if len(nodes) >= self.inst.config.f + 1:
                    for node in HONEST:
                        now = (post_t if node == target else pre[node]).get(seq)
                        bad = (now != h) if node in nodes else (
                            now is not None and now != h
                        )
                        if bad:
                            self.result.violations.append(
                                f"assignment={self.assignment} byz_u={self.byz_u}: "
                                f"height {seq} held by {len(nodes)} honest nodes as "
                                f"{h.hex()[:12]} but node {node} now has "
                                f"{now.hex()[:12] if now else 'nothing'}"
                            )
                elif h in twins and len(nodes) == 1 and nodes[0] == target:
                    now = post_t.get(seq)
                    if now is not None and now != h:
                        child.revoked = True

    # -- search ------------------------------------------------------------

    def run(self) -> ConfigResult:
        inst = self.inst
        replicas = inst.fresh_replicas()
        world = _World({}, {}, False, False)
        for i in HONEST:
            world.nodes[i] = self._project(replicas[i], inst.dumps(replicas[i]))
        for node, side in self.assignment.items():
            self._enqueue(world, node, inst.twins[side])
            self._enqueue(world, node, inst.twin_votes[side])
        self._sweep(world)
        stack = [world]
        seen = {self._fingerprint(world)}
        while stack:
            parent = stack.pop()
            moves = self._moves(parent)
            if not moves:
                continue
            parent_keys = set(parent.queue)
            for move in moves:
                child, target = self._child(parent, move)
                self._check(parent, child, target)
                if child.revoked and all(
                    child.nodes[i].byz_bl for i in HONEST
                ):
                    self.result.revoked_and_blacklisted = True
                self._sweep(child)
                if (
                    child.nodes[target].fp_hash == parent.nodes[target].fp_hash
                    and child.byz_vc_sent == parent.byz_vc_sent
                    and child.revoked == parent.revoked
                    and parent_keys.issuperset(child.queue)
                ):
                    # The move only consumed traffic nobody reacted to.  The
                    # child's queue is a subset of the parent's and every
                    # replica is unchanged, so each continuation from here is
                    # also a continuation of the parent; exploring it twice
                    # would revisit the same transitions.
                    continue
                fp = self._fingerprint(child)
                if fp in seen:
                    continue
                seen.add(fp)
                self.result.states += 1
                if self.result.states >= self.max_states:
                    self.result.capped = True
                    return self.result
                stack.append(child)
        return self.result


def all_assignments() -> list[dict[int, str]]:
    out = []
    for a in "xy":
        for b in "xy":
            for c in "xy":
                out.append({HONEST[0]: a, HONEST[1]: b, HONEST[2]: c})
    return out


def _explore_one(job: tuple[dict[int, str], str | None, int]) -> ConfigResult:
    assignment, byz_u, max_states = job
    return _Explorer(_Instance(), assignment, byz_u, max_states).run()


def run_exploration(
    max_states_per_config: int = 400_000,
    assignments: list[dict[int, str]] | None = None,
    byz_u_choices: tuple[str | None, ...] = ("x", "y", None),
    parallel: int = 1,
) -> ExploreResult:
    jobs = [
        (assignment, byz_u, max_states_per_config)
        for assignment in (assignments or all_assignments())
        for byz_u in byz_u_choices
    ]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(parallel, len(jobs))) as pool:
            return ExploreResult(configs=list(pool.map(_explore_one, jobs)))
    return ExploreResult(configs=[_explore_one(job) for job in jobs])
