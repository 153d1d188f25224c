"""Safety, liveness, and quality checks over finished simulation runs.

Checks work on two sources: replica state at the end of a run (chains,
queues) and the trace records collected while it ran.  Trace-based checks
catch transient misbehavior that final state would hide, such as a commit
that was later rolled back when it should have been durable.

Byzantine nodes run the honest state machine behind a hostile network
filter, but every guarantee here is stated over the honest nodes only.
"""

from __future__ import annotations

from .simnet import EventSim


def faults(n: int) -> int:
    return (n - 1) // 3


def honest_ids(sim: EventSim) -> list[int]:
    return [i for i in sim.replicas if i not in sim.scenario.byzantine]


def final_chain(sim: EventSim, node: int) -> dict[int, str]:
    replica = sim.replicas[node]
    return {
        seq: blk.block_hash().hex()[:16]
        for seq, (blk, _qc) in replica.chain.items()
        if seq > 0
    }


def check_agreement(sim: EventSim) -> list[str]:
    """No two honest nodes end with different blocks at the same height."""
    out = []
    chains = {i: final_chain(sim, i) for i in honest_ids(sim)}
    by_seq: dict[int, dict[str, list[int]]] = {}
    for node, chain in chains.items():
        for seq, h in chain.items():
            by_seq.setdefault(seq, {}).setdefault(h, []).append(node)
    for seq, versions in sorted(by_seq.items()):
        if len(versions) > 1:
            out.append(f"agreement: height {seq} ends as {versions}")
    return out


def check_no_double_execution(sim: EventSim) -> list[str]:
    """Each honest node applies a command at most once.

    Replayed chain copies of a command are expected when a proposer cannot
    see the payload of a certified ancestor; applying one twice is not.
    A re-application is legal only after the height that applied it first
    was rolled back.
    """
    out = []
    honest = set(honest_ids(sim))
    applied: dict[tuple[int, tuple[int, int]], int] = {}
    for rec in sim.records:
        if rec.get("node") not in honest:
            continue
        if rec["kind"] == "exec":
            slot = (rec["node"], (rec["client"], rec["ts"]))
            if slot in applied:
                out.append(
                    f"double execution: node {rec['node']} ran "
                    f"({rec['client']}, {rec['ts']}) at heights "
                    f"{applied[slot]} and {rec['seq']}"
                )
            applied[slot] = rec["seq"]
        elif rec["kind"] == "rollback":
            gone = set(rec["seqs"])
            for slot in [
                s for s, seq in applied.items()
                if s[0] == rec["node"] and seq in gone
            ]:
                del applied[slot]
    return out


def check_r_safety(sim: EventSim) -> list[str]:
    """Once f+1 honest nodes hold a block committed at a height, no honest
    node may ever commit anything else there or drop its copy."""
    out = []
    f = faults(sim.scenario.n)
    honest = set(honest_ids(sim))
    current: dict[tuple[int, int], str] = {}  # (node, seq) -> hash
    locked: dict[int, str] = {}
    for rec in sim.records:
        if rec.get("node") not in honest:
            continue
        if rec["kind"] == "commit":
            seq, h = rec["seq"], rec["hash"]
            if seq in locked and h != locked[seq]:
                out.append(
                    f"durable commit revoked: height {seq} was locked to "
                    f"{locked[seq]} but node {rec['node']} committed {h} at t={rec['t']}"
                )
            current[(rec["node"], seq)] = h
            holders = sum(
                1 for (node, s), cur in current.items() if s == seq and cur == h
            )
            if holders >= f + 1:
                locked.setdefault(seq, h)
        elif rec["kind"] == "rollback":
            for seq in rec["seqs"]:
                held = current.pop((rec["node"], seq), None)
                if held is not None and locked.get(seq) == held:
                    out.append(
                        f"durable commit revoked: height {seq} was locked to "
                        f"{held} but node {rec['node']} rolled it back at t={rec['t']}"
                    )
    return out


def check_s_safety(sim: EventSim) -> list[str]:
    """With honest primaries there is no divergence at all, not even a
    transient one: every honest commit at a height names the same block."""
    out = []
    honest = set(honest_ids(sim))
    first: dict[int, str] = {}
    for rec in sim.records:
        if rec["kind"] != "commit" or rec["node"] not in honest:
            continue
        seq, h = rec["seq"], rec["hash"]
        if seq in first and h != first[seq]:
            out.append(
                f"divergence: height {seq} committed as both {first[seq]} and {h}"
            )
        first.setdefault(seq, h)
    return out


def check_liveness(sim: EventSim) -> list[str]:
    """After stabilization the rotation is tight: between consecutive
    commits there are at most f+1 view-change rounds.

    A round is a view demanded by at least f+1 honest nodes inside the
    window.  Anything below that threshold can neither produce a new-view
    nor drag the network past the view, so lone stragglers still draining
    their pre-stabilization backoff do not count.
    """
    out = []
    sc = sim.scenario
    f = faults(sc.n)
    honest = set(honest_ids(sim))
    commits = [r["t"] for r in sim.records if r["kind"] == "commit" and r["t"] >= sc.gst]
    demands = [
        (r["t"], r["view"], r["node"])
        for r in sim.records
        if r["kind"] == "view_change" and r["node"] in honest and r["t"] >= sc.gst
    ]
    edges = [sc.gst] + sorted(set(commits))
    for lo, hi in zip(edges, edges[1:]):
        backing: dict[int, set[int]] = {}
        for t, v, node in demands:
            if lo < t <= hi:
                backing.setdefault(v, set()).add(node)
        rounds = [v for v, nodes in backing.items() if len(nodes) >= f + 1]
        if len(rounds) > f + 1:
            out.append(
                f"liveness: {len(rounds)} view-change rounds between commits "
                f"at t={lo}..{hi} (bound {f + 1})"
            )
    return out


def check_starvation(sim: EventSim, slack: int = 5000) -> list[str]:
    """A request an honest node still holds at the end of a long quiet
    tail never got committed; that is a stall, not a safety issue."""
    out = []
    sc = sim.scenario
    last_request = max(
        (r["t"] for r in sim.records if r["kind"] == "request"), default=0
    )
    if sc.duration - max(last_request, sc.gst) < slack:
        return out
    for node in honest_ids(sim):
        backlog = sim.replicas[node].mempool
        if backlog:
            out.append(f"starvation: node {node} still holds {len(backlog)} requests")
    return out


# ---------------------------------------------------------------------------
# measurements


def commit_latencies(sim: EventSim) -> list[dict]:
    """One entry per honest commit whose proposal shows up in the trace:
    wall latency and causal step count from proposal to that commit."""
    honest = set(honest_ids(sim))
    proposed: dict[str, tuple[int, int]] = {}
    out = []
    for rec in sim.records:
        if rec["kind"] == "propose":
            proposed.setdefault(rec["hash"], (rec["t"], rec["hop"]))
        elif rec["kind"] == "commit" and rec["node"] in honest:
            origin = proposed.get(rec["hash"])
            if origin is None:
                continue
            t0, hop0 = origin
            out.append(
                {
                    "node": rec["node"],
                    "seq": rec["seq"],
                    "hash": rec["hash"],
                    "latency": rec["t"] - t0,
                    "steps": rec["hop"] - hop0 + 1,
                    "commit_hop": rec["hop"],
                    "t": rec["t"],
                }
            )
    return out


def count_revocations(sim: EventSim) -> int:
    honest = set(honest_ids(sim))
    last: dict[tuple[int, int], str] = {}
    n = 0
    for rec in sim.records:
        if rec["kind"] != "commit" or rec["node"] not in honest:
            continue
        key = (rec["node"], rec["seq"])
        if key in last and last[key] != rec["hash"]:
            n += 1
        last[key] = rec["hash"]
    return n


def measure(sim: EventSim) -> dict:
    honest = honest_ids(sim)
    byz = set(sim.scenario.byzantine)
    chains = [final_chain(sim, i) for i in honest]
    height = max((max(c, default=0) for c in chains), default=0)
    best = max(chains, key=lambda c: len(c), default={})
    quality_blocks = [
        sim.replicas[honest[0]].chain[s][0].header.proposer
        for s in sorted(best)
        if s in sim.replicas[honest[0]].chain
    ]
    lat = commit_latencies(sim)
    verifies = [
        r["aggregate_verifies"]
        for r in sim.records
        if r.get("kind") == "new_view_verify" and r.get("ok") and r["node"] in honest
    ]
    vcs = sum(
        1
        for r in sim.records
        if r["kind"] == "view_change" and r["node"] not in byz
    )
    return {
        "commits": height,
        "mean_latency_ms": (
            round(sum(e["latency"] for e in lat) / len(lat), 3) if lat else 0.0
        ),
        "steps_per_commit": (
            round(sum(e["steps"] for e in lat) / len(lat), 3) if lat else 0.0
        ),
        "agg_verifies_per_nv": (
            round(sum(verifies) / len(verifies), 3) if verifies else 0.0
        ),
        "revocations": count_revocations(sim),
        "chain_quality": (
            round(sum(1 for p in quality_blocks if p not in byz) / len(quality_blocks), 3)
            if quality_blocks
            else 1.0
        ),
        "vcs": vcs,
        "replies": sum(1 for node, _c, _t in sim.replies if node not in byz),
        "events": sim.events,
    }


def check_all(
    sim: EventSim, *, s_safety: bool = False, starvation_slack: int = 5000
) -> tuple[list[str], dict]:
    violations = []
    violations += check_agreement(sim)
    violations += check_no_double_execution(sim)
    violations += check_r_safety(sim)
    if s_safety:
        violations += check_s_safety(sim)
    violations += check_liveness(sim)
    violations += check_starvation(sim, slack=starvation_slack)
    metrics = measure(sim)
    metrics["violations"] = len(violations)
    return violations, metrics
