"""Byzantine node strategies for simulation runs.

A strategy wraps an ordinary replica: the node runs the honest state machine,
but everything it emits passes through ``outbound`` which may suppress,
redirect, or replace messages, and ``tick`` may inject fresh traffic on a
schedule.  This keeps the strategies honest about what a real attacker can
do: they control their own keys and their own network edge, nothing else.
"""

from __future__ import annotations

from .messages import Block, Config, create_prepare_msg, make_view_change, primary_of


class Honest:
    """Pass-through; also the base class every strategy extends."""

    tick_interval: int | None = None

    def outbound(self, sim, me: int, target: int, msg, now: int):
        return [(target, msg, 0)]

    def tick(self, sim, me: int, now: int):
        return []


class Silent(Honest):
    """Crashed from the start: receives everything, says nothing."""

    def outbound(self, sim, me, target, msg, now):
        return []


class CrashMidway(Honest):
    """Participates honestly, then goes dark a third of the way in."""

    def outbound(self, sim, me, target, msg, now):
        if now >= sim.scenario.duration // 3:
            return []
        return [(target, msg, 0)]


class Sluggish(Honest):
    """Never lies, but everything it sends crawls.  As primary this stalls
    the view until the timeout rotates past it."""

    def outbound(self, sim, me, target, msg, now):
        return [(target, msg, 4 * sim.scenario.delta_post + sim.scenario.timeout_base)]


class Equivocator(Honest):
    """Sends one half of the network a conflicting twin of each proposal.

    The twin drops the batch, which changes the payload hash but keeps the
    header votable, so no second key is needed.
    """

    def outbound(self, sim, me, target, msg, now):
        if isinstance(msg, Block) and msg.header.proposer == me and msg.commands:
            if target % 2 == 0:
                return [(target, msg, 0)]
            twin = create_prepare_msg(
                msg.view,
                msg.seq,
                msg.header.parent_hash,
                (),
                msg.qc_parent,
                msg.qc_nr,
                me,
                sim.keyring.secret(me),
            )
            return [(target, twin, 0)]
        return [(target, msg, 0)]


class ViewChangeSpammer(Honest):
    """Keeps demanding far-future views.  One voice is below the join
    threshold, so honest nodes must shrug this off."""

    tick_interval = 600

    def tick(self, sim, me, now):
        replica = sim.replicas[me]
        demand = make_view_change(
            replica.cur_view + 7,
            sim.genesis_qc,
            None,
            None,
            me,
            sim.keyring.secret(me),
        )
        return [(t, demand) for t in range(sim.scenario.n)]


class CrashAfterPropose(Honest):
    """Proposes once, hides the proposal from the next primary, then dies.

    The canonical setup for payload recovery: votes exist, the certificate
    does not, and the incoming primary has never seen the batch.
    """

    def __init__(self) -> None:
        self.block_hash: bytes | None = None
        self.dead = False

    def outbound(self, sim, me, target, msg, now):
        if isinstance(msg, Block) and msg.header.proposer == me and not self.dead:
            if self.block_hash is None:
                self.block_hash = msg.block_hash()
            if msg.block_hash() == self.block_hash:
                if target == primary_of(msg.view + 1, sim.config):
                    return []
                return [(target, msg, 0)]
        if self.block_hash is not None:
            self.dead = True
        return [] if self.dead else [(target, msg, 0)]


STRATEGIES = {
    "mute": Silent,
    "crash": CrashMidway,
    "delay": Sluggish,
    "equivocate": Equivocator,
    "vc_spam": ViewChangeSpammer,
    "crash_after_propose": CrashAfterPropose,
}


def build(name: str):
    try:
        return STRATEGIES[name]()
    except KeyError:
        raise ValueError(f"unknown byzantine strategy {name!r}") from None
