"""Discrete-event network simulator for whole-protocol runs.

One priority queue drives everything: message deliveries, watchdog timers,
client request emissions, and adversary ticks.  Before stabilization the
network is hostile (seeded random delays and losses); from ``gst`` onward
every message between distinct nodes takes exactly ``delta_post`` and a
node hears itself immediately.  That split makes the timing claims exact:
in a quiet network a proposal broadcast at T commits everywhere at
T + 2 * delta_post.

Every envelope carries a hop counter, the length of the causal message
chain behind it.  A commit reached at hop h after a proposal sent at hop p
took h - p + 1 protocol steps; the trace records keep both ends so runs
can be compared step-for-step.

Traces are line-oriented JSON with sorted keys, so two runs of the same
scenario can be compared byte for byte.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field

from . import adversaries
from .crypto import Keyring
from .messages import (
    Block,
    Config,
    NewViewMsg,
    RecoveryProposal,
    ViewChangeMsg,
    make_genesis,
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

EVENT_CAP = 2_000_000


@dataclass(frozen=True)
class Scenario:
    name: str
    n: int = 4
    seed: int = 0
    duration: int = 60_000
    delta_post: int = 50
    gst: int = 0
    timeout_base: int = 400
    requests: int = 20
    request_interval: int = 500
    request_start: int = 0
    clients: int = 1
    byzantine: dict[int, str] = field(default_factory=dict)
    pre_delay_max: int = 400
    drop_rate: float = 0.3
    piggyback: bool = True
    verify_mode: str = "linear"

    def config(self) -> Config:
        return Config(n=self.n, timeout_base_ms=self.timeout_base)


class EventSim:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.config = scenario.config()
        ids = list(range(scenario.n + scenario.clients))
        self.keyring = Keyring(scenario.seed, ids)
        self.scheme = self.keyring.scheme()
        block, qc = make_genesis(self.config, self.keyring, self.scheme)
        self.genesis_qc = qc
        self.replicas = {
            i: Replica(
                i,
                self.config,
                self.keyring.secret(i),
                self.scheme,
                block,
                qc,
                piggyback=scenario.piggyback,
                verify_mode=scenario.verify_mode,
            )
            for i in range(scenario.n)
        }
        self.behaviors = {
            node: adversaries.build(name) for node, name in scenario.byzantine.items()
        }
        self.rng = random.Random(scenario.seed)
        self.heap: list = []
        self.eid = 0
        self.now = 0
        self.events = 0
        self.records: list[dict] = []
        self.replies: list[tuple[int, int, int]] = []  # (node, client, timestamp)

    # -- scheduling --------------------------------------------------------

    def _push(self, t: int, prio: int, item) -> None:
        self.eid += 1
        heapq.heappush(self.heap, (t, prio, self.eid, item))

    def _delay(self, sender: int, target: int) -> int | None:
        """None means the network ate the message."""
        if sender == target:
            return 0
        if self.now >= self.scenario.gst:
            return self.scenario.delta_post
        if self.rng.random() < self.scenario.drop_rate:
            return None
        return self.rng.randint(self.scenario.delta_post, self.scenario.pre_delay_max)

    def _send(self, sender: int, target: int, msg, hop: int, extra: int = 0) -> None:
        delay = self._delay(sender, target)
        if delay is None:
            return
        self._push(self.now + delay + extra, 0, ("deliver", target, msg, hop))

    # -- trace -------------------------------------------------------------

    def _record(self, kind: str, node: int, **fields) -> None:
        self.records.append({"kind": kind, "t": self.now, "node": node, **fields})

    def _record_outgoing(self, node: int, msg, hop: int) -> None:
        if isinstance(msg, Block):
            self._record(
                "propose",
                node,
                view=msg.view,
                seq=msg.seq,
                hash=msg.block_hash().hex()[:16],
                hop=hop,
            )
        elif isinstance(msg, RecoveryProposal):
            self._record(
                "propose",
                node,
                view=msg.block.view,
                seq=msg.block.seq,
                hash=msg.block.block_hash().hex()[:16],
                hop=hop,
            )
        elif isinstance(msg, ViewChangeMsg):
            self._record("view_change", node, view=msg.next_view, hop=hop)
        elif isinstance(msg, NewViewMsg):
            self._record("new_view", node, view=msg.view, hop=hop)

    # -- action fan-out ----------------------------------------------------

    def _dispatch(self, node: int, actions, trigger_hop: int) -> None:
        behavior = self.behaviors.get(node)
        hop = trigger_hop + 1
        for action in actions:
            if isinstance(action, Broadcast):
                self._record_outgoing(node, action.msg, hop)
                outs = [(t, action.msg) for t in range(self.scenario.n)]
            elif isinstance(action, Send):
                outs = [(action.to, action.msg)]
            elif isinstance(action, ReplyTo):
                self.replies.append((node, action.client, action.msg.timestamp))
                continue
            elif isinstance(action, Commit):
                self._record(
                    "commit",
                    node,
                    view=action.block.view,
                    seq=action.block.seq,
                    hash=action.block.block_hash().hex()[:16],
                    proposer=action.block.header.proposer,
                    hop=trigger_hop,
                )
                continue
            elif isinstance(action, StartTimer):
                self._push(action.deadline, 1, ("timer", node, action.epoch))
                continue
            elif isinstance(action, ScheduleBlacklist):
                self._record("blacklist", node, accused=action.node)
                continue
            else:
                raise AssertionError(f"unknown action {action!r}")
            for target, msg in outs:
                if behavior is None:
                    routed = [(target, msg, 0)]
                else:
                    routed = behavior.outbound(self, node, target, msg, self.now)
                for rtarget, rmsg, rextra in routed:
                    self._send(node, rtarget, rmsg, hop, extra=rextra)
        for note in self.replicas[node].drain_notes():
            self.records.append({"t": self.now, "node": node, **note})

    # -- run ---------------------------------------------------------------

    def _seed_schedule(self) -> None:
        sc = self.scenario
        for i in range(sc.requests):
            client = sc.n + (i % sc.clients)
            ts = 1 + i // sc.clients
            req = signed_request(
                client, ts, b"op-%06d" % i, self.keyring.secret(client)
            )
            self._push(sc.request_start + i * sc.request_interval, 0, ("request", req))
        for node, behavior in self.behaviors.items():
            if behavior.tick_interval is not None:
                self._push(behavior.tick_interval, 1, ("tick", node))

    def run(self) -> "EventSim":
        self._seed_schedule()
        sc = self.scenario
        while self.heap:
            t, _prio, _eid, item = heapq.heappop(self.heap)
            if t > sc.duration:
                break
            self.events += 1
            if self.events > EVENT_CAP:
                raise RuntimeError(f"scenario {sc.name!r} exceeded the event cap")
            self.now = t
            kind = item[0]
            if kind == "deliver":
                _, target, msg, hop = item
                self._dispatch(target, self.replicas[target].on_deliver(msg, t), hop)
            elif kind == "timer":
                _, node, epoch = item
                self._dispatch(node, self.replicas[node].on_timer_fired(epoch, t), 0)
            elif kind == "request":
                _, req = item
                self._record("request", req.client, ts=req.timestamp)
                for i in range(sc.n):
                    self._send(req.client, i, req, hop=0)
            elif kind == "tick":
                _, node = item
                behavior = self.behaviors[node]
                for target, msg in behavior.tick(self, node, t):
                    self._send(node, target, msg, hop=1)
                self._push(t + behavior.tick_interval, 1, ("tick", node))
        return self


def run_scenario(scenario: Scenario) -> EventSim:
    return EventSim(scenario).run()


def trace_bytes(records: list[dict]) -> bytes:
    out = []
    for r in records:
        out.append(json.dumps(r, sort_keys=True, separators=(",", ":")).encode())
    return b"\n".join(out) + b"\n" if out else b""


def write_trace(records: list[dict], path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(trace_bytes(records))
