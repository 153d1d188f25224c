"""Timeout and view-synchronisation bookkeeping for one replica.

The pacemaker never sends anything itself; it answers two questions for its
replica: has the current epoch timer expired (exactly once per armed epoch),
and have enough peers demanded a higher view that we should join them.

The join rule is deliberately conservative: a single Byzantine node, or any
group of at most f, can broadcast view-change messages forever without
moving an honest node, because joining requires f+1 distinct senders asking
for views above ours.  When that threshold is met we adopt the smallest of
their views, so the group converges instead of leapfrogging.
"""

from __future__ import annotations

from .messages import Config


class Pacemaker:
    def __init__(self, config: Config):
        self.config = config
        self.timeout_ms = config.timeout_base_ms
        self.epoch = 0
        self.deadline: int | None = None
        self._vc_seen: dict[int, int] = {}  # sender -> highest next_view demanded
        self.highest_vc_sent = 0

    # -- timer ------------------------------------------------------------

    def arm(self, now: int) -> tuple[int, int]:
        """Start a fresh epoch timer; returns (epoch, absolute deadline)."""
        self.epoch += 1
        self.deadline = now + self.timeout_ms
        return self.epoch, self.deadline

    def ensure_armed(self, now: int) -> tuple[int, int] | None:
        """Arm only if no timer is live; None means one already was."""
        if self.deadline is not None:
            return None
        return self.arm(now)

    def disarm(self) -> None:
        """Stop watching; an idle node has nothing to time out on."""
        self.deadline = None

    def on_commit(self, now: int) -> tuple[int, int]:
        self.timeout_ms = self.config.timeout_base_ms
        return self.arm(now)

    def on_failure(self, now: int) -> tuple[int, int]:
        """Entering a view change: back off exponentially and re-arm.

        The doubling is capped so a node that fell far behind keeps probing
        at a bounded interval instead of scheduling its next attempt past
        any horizon anyone cares about.
        """
        self.timeout_ms = min(self.timeout_ms * 2, 16 * self.config.timeout_base_ms)
        return self.arm(now)

    def on_timer(self, epoch: int, now: int) -> bool:
        """True exactly once per armed epoch, and only for the live epoch."""
        if epoch != self.epoch or self.deadline is None:
            return False
        if now < self.deadline:
            return False
        self.deadline = None
        return True

    # -- view-change amplification ----------------------------------------

    def on_vc_observed(self, sender: int, next_view: int, cur_view: int) -> int | None:
        """Record a peer's demand; return a view to join, or None.

        Joining needs f+1 distinct senders demanding views above both
        cur_view and anything we already demanded ourselves; the target is
        the smallest such view.  Floors at our own last demand, not just
        cur_view, so a node that joined one round late can still follow the
        rest of the network upward without waiting out its own timer.
        """
        prev = self._vc_seen.get(sender, 0)
        # Demands at or below the current view can never clear any future
        # floor, so recording them would only hold memory.
        if next_view > prev and next_view > cur_view:
            self._vc_seen[sender] = next_view
        floor = max(cur_view, self.highest_vc_sent)
        ahead = [v for v in self._vc_seen.values() if v > floor]
        if len(ahead) < self.config.f + 1:
            return None
        return min(ahead)

    def mark_vc_sent(self, view: int) -> None:
        if view > self.highest_vc_sent:
            self.highest_vc_sent = view

    def prune(self, cur_view: int) -> None:
        """Forget demands at or below the view we have already reached."""
        self._vc_seen = {s: v for s, v in self._vc_seen.items() if v > cur_view}
