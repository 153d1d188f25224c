"""Scenario files, validation, and the built-in scenario library.

A scenario file is flat ``key = value`` text: one assignment per line,
``#`` starts a comment, keys are the Scenario field names.  Two fields
need syntax beyond a bare literal: ``byzantine`` is a comma-separated
list of ``node:strategy`` pairs, and booleans accept on/off, yes/no,
true/false, or 1/0.  A suite file uses the same shape with exactly two
keys, ``scenarios`` (comma-separated built-in names or file paths) and
``seeds`` (a single seed, a comma list, or an inclusive ``lo-hi`` range).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace

from .adversaries import STRATEGIES
from .errors import ConfigError
from .simnet import Scenario

_BOOL = {
    "on": True, "true": True, "yes": True, "1": True,
    "off": False, "false": False, "no": False, "0": False,
}

_VERIFY_MODES = ("linear", "quadratic")


def _parse_pairs(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"line {ln}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _parse_byzantine(value: str) -> dict[int, str]:
    out: dict[int, str] = {}
    if not value:
        return out
    for part in value.split(","):
        part = part.strip()
        if ":" not in part:
            raise ConfigError(f"byzantine entry {part!r} is not 'node:strategy'")
        node_text, strategy = part.split(":", 1)
        try:
            node = int(node_text)
        except ValueError:
            raise ConfigError(f"byzantine node id {node_text!r} is not an integer")
        if node in out:
            raise ConfigError(f"byzantine node {node} listed twice")
        out[node] = strategy.strip()
    return out


def parse_scenario_text(text: str, fallback_name: str = "scenario") -> Scenario:
    pairs = _parse_pairs(text)
    known = {f.name: f for f in fields(Scenario)}
    kwargs: dict = {"name": pairs.pop("name", fallback_name)}
    for key, value in pairs.items():
        field = known.get(key)
        if field is None:
            raise ConfigError(f"unknown scenario key {key!r}")
        if key == "byzantine":
            kwargs[key] = _parse_byzantine(value)
        elif field.type == "bool":
            try:
                kwargs[key] = _BOOL[value.lower()]
            except KeyError:
                raise ConfigError(f"{key}: {value!r} is not a boolean")
        elif field.type == "float":
            kwargs[key] = float(value)
        elif field.type == "int":
            try:
                kwargs[key] = int(value)
            except ValueError:
                raise ConfigError(f"{key}: {value!r} is not an integer")
        else:
            kwargs[key] = value
    return validate(Scenario(**kwargs))


def validate(sc: Scenario) -> Scenario:
    if sc.n < 4 or sc.n % 3 != 1:
        raise ConfigError(f"n={sc.n}: group size must be 3f+1 for some f >= 1")
    f = (sc.n - 1) // 3
    if len(sc.byzantine) > f:
        raise ConfigError(
            f"{len(sc.byzantine)} byzantine nodes exceeds the fault bound f={f}"
        )
    for node, strategy in sc.byzantine.items():
        if not 0 <= node < sc.n:
            raise ConfigError(f"byzantine node {node} outside 0..{sc.n - 1}")
        if strategy not in STRATEGIES:
            raise ConfigError(
                f"unknown strategy {strategy!r}; have {sorted(STRATEGIES)}"
            )
    if sc.duration <= 0:
        raise ConfigError("duration must be positive")
    if sc.delta_post <= 0:
        raise ConfigError("delta_post must be positive")
    if not 0 <= sc.gst <= sc.duration:
        raise ConfigError("gst must lie inside the run")
    if sc.timeout_base <= 0:
        raise ConfigError("timeout_base must be positive")
    if sc.requests < 0 or sc.request_interval < 0 or sc.request_start < 0:
        raise ConfigError("request schedule fields must be non-negative")
    if sc.clients < 1:
        raise ConfigError("need at least one client")
    if not 0.0 <= sc.drop_rate < 1.0:
        raise ConfigError("drop_rate must be in [0, 1)")
    if sc.pre_delay_max < sc.delta_post:
        raise ConfigError("pre_delay_max must be at least delta_post")
    if sc.verify_mode not in _VERIFY_MODES:
        raise ConfigError(f"verify_mode must be one of {_VERIFY_MODES}")
    return sc


def format_scenario(sc: Scenario) -> str:
    """Render back to file syntax; parse(format(sc)) == sc."""
    lines = []
    for field in fields(Scenario):
        value = getattr(sc, field.name)
        if field.name == "byzantine":
            value = ", ".join(f"{n}:{s}" for n, s in sorted(value.items()))
            if not value:
                continue
        elif field.type == "bool":
            value = "on" if value else "off"
        lines.append(f"{field.name} = {value}")
    return "\n".join(lines) + "\n"


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path!r}: {exc}")
    stem = os.path.splitext(os.path.basename(path))[0]
    return parse_scenario_text(text, fallback_name=stem)


def resolve(ref: str) -> Scenario:
    """A scenario reference is a built-in name or a file path."""
    builtin = BUILTIN.get(ref)
    if builtin is not None:
        return builtin
    if os.path.exists(ref):
        return load_scenario(ref)
    raise ConfigError(
        f"{ref!r} is neither a built-in scenario nor a file; "
        f"built-ins: {', '.join(sorted(BUILTIN))}"
    )


# ---------------------------------------------------------------------------
# suites


@dataclass(frozen=True)
class SuiteSpec:
    scenarios: list[Scenario]
    seeds: list[int]


def parse_seeds(value: str) -> list[int]:
    seeds: list[int] = []
    for part in value.split(","):
        part = part.strip()
        if "-" in part:
            lo_text, hi_text = part.split("-", 1)
            try:
                lo, hi = int(lo_text), int(hi_text)
            except ValueError:
                raise ConfigError(f"bad seed range {part!r}")
            if hi < lo:
                raise ConfigError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            try:
                seeds.append(int(part))
            except ValueError:
                raise ConfigError(f"bad seed {part!r}")
    if not seeds:
        raise ConfigError("no seeds given")
    return seeds


def parse_suite_text(text: str) -> SuiteSpec:
    pairs = _parse_pairs(text)
    unknown = set(pairs) - {"scenarios", "seeds"}
    if unknown:
        raise ConfigError(f"unknown suite keys {sorted(unknown)}")
    if "scenarios" not in pairs:
        raise ConfigError("suite needs a 'scenarios' line")
    refs = [r.strip() for r in pairs["scenarios"].split(",") if r.strip()]
    if not refs:
        raise ConfigError("suite lists no scenarios")
    scenarios = [resolve(r) for r in refs]
    seeds = parse_seeds(pairs.get("seeds", "0"))
    return SuiteSpec(scenarios=scenarios, seeds=seeds)


def load_suite(path: str) -> SuiteSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read suite {path!r}: {exc}")
    return parse_suite_text(text)


# ---------------------------------------------------------------------------
# built-in library


def _quiet(n: int) -> Scenario:
    # Synchronous from the start: every commit must land exactly two
    # message delays after its proposal.
    return Scenario(
        name=f"quiet-n{n}",
        n=n,
        duration=4_000,
        delta_post=10,
        gst=0,
        timeout_base=400,
        requests=50,
        request_interval=50,
    )


def _chaos(strategy: str, n: int) -> Scenario:
    # A hostile pre-stabilization window long enough to force repeated
    # view changes, then a clean tail in which everything must settle.
    return Scenario(
        name=f"chaos-{strategy}-n{n}",
        n=n,
        duration=24_000,
        delta_post=50,
        gst=3_200,
        timeout_base=100,
        requests=8,
        request_interval=1_200,
        request_start=200,
        drop_rate=0.45,
        pre_delay_max=700,
        byzantine={1: strategy},
    )


def _steady(n: int) -> Scenario:
    # Same hostile network, no byzantine nodes: every primary is honest,
    # so even transient disagreement between commits is forbidden.
    return Scenario(
        name=f"steady-n{n}",
        n=n,
        duration=24_000,
        delta_post=50,
        gst=3_200,
        timeout_base=100,
        requests=8,
        request_interval=1_200,
        request_start=200,
        drop_rate=0.45,
        pre_delay_max=700,
    )


def _figure(mode: str, n: int) -> Scenario:
    # A permanently silent first primary forces a view change per lap of
    # the rotation, so aggregate-verification counts accumulate.
    return Scenario(
        name=f"figure-{mode}-n{n}",
        n=n,
        duration=20_000,
        delta_post=10,
        gst=0,
        timeout_base=200,
        requests=6,
        request_interval=600,
        byzantine={1: "mute"},
        verify_mode=mode,
    )


def _handoff(piggyback: bool) -> Scenario:
    # The primary proposes, hides the proposal from its successor, and
    # dies; recovery must re-propose the payload it left behind.
    return Scenario(
        name="handoff-piggyback" if piggyback else "handoff-base",
        n=4,
        seed=9,
        duration=30_000,
        delta_post=50,
        gst=0,
        timeout_base=400,
        requests=3,
        request_interval=4_000,
        byzantine={1: "crash_after_propose"},
        piggyback=piggyback,
    )


BUILTIN: dict[str, Scenario] = {
    sc.name: validate(sc)
    for sc in (
        [_quiet(n) for n in (4, 7, 10)]
        + [_chaos(s, n) for s in sorted(STRATEGIES) if s != "crash_after_propose"
           for n in (4, 7)]
        + [_steady(n) for n in (4, 7)]
        + [_figure(m, n) for m in _VERIFY_MODES for n in (4, 7, 10, 13, 16)]
        + [_handoff(True), _handoff(False)]
    )
}


def with_seed(sc: Scenario, seed: int) -> Scenario:
    return sc if sc.seed == seed else replace(sc, seed=seed)
