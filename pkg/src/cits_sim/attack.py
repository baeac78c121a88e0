"""Vulnerability catalog, attack-step semantics and attack-path search.

A catalog entry is a rule: if every precondition atom holds against the
topology and the attacker's current capabilities, the step grants new
capabilities and applies world effects to the served state. Entries are
written against named parameters (``$central``, ``$rsu``, ...) that a
scenario step binds to concrete nodes; ``$attacker`` is always bound to the
scenario's attacker.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

from .capability import CAPABILITY_KINDS, Capability
from .engine import AttackStepDue, Engine, SimConfig
from .errors import DuplicateCve, ParseError, UnknownCve, UnknownNode
from .fixtures import fixture_path
from .messages import MsgType
from .pdu import Preferred
from .services import signal_credential
from .simulation import SIGNAL_ORDER, RunResult, Simulation
from .topology import NodeKind, ProtocolKind, Topology, protocol_on_path, software_matches
from .versions import VersionRange

SUCCEEDED = "Succeeded"
PRECONDITION_FAILED = "PreconditionFailed"
NOT_REACHED = "NotReached"

EFFECT_TYPES = ("db_tamper", "register_rogue_emergency", "inject_signal_command")

Bindings = Mapping[str, object]


def _subst(value, bindings: Bindings):
    if isinstance(value, str) and value.startswith("$"):
        name = value[1:]
        if name not in bindings:
            raise KeyError(f"unbound parameter ${name}")
        return bindings[name]
    return value


# ---------------------------------------------------------------------------
# Precondition atoms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProtocolPath:
    src: str
    dst: str
    protocol: ProtocolKind

    def ground(self, b: Bindings) -> "ProtocolPath":
        return ProtocolPath(_subst(self.src, b), _subst(self.dst, b), self.protocol)

    def holds(self, t: Topology, caps: Set[Capability]) -> bool:
        if not (t.has_node(self.src) and t.has_node(self.dst)):
            return False
        return protocol_on_path(t, self.src, self.dst, self.protocol)

    def __str__(self) -> str:
        return f"ProtocolPath({self.src}, {self.dst}, {self.protocol.value})"


@dataclass(frozen=True)
class Software:
    node: str
    name: str
    range: VersionRange

    def ground(self, b: Bindings) -> "Software":
        return Software(_subst(self.node, b), self.name, self.range)

    def holds(self, t: Topology, caps: Set[Capability]) -> bool:
        return t.has_node(self.node) and software_matches(t, self.node, self.name, self.range)

    def __str__(self) -> str:
        return f"Software({self.node}, {self.name}, {self.range})"


@dataclass(frozen=True)
class Has:
    capability: Capability

    def ground(self, b: Bindings) -> "Has":
        return Has(Capability(self.capability.kind, _subst(self.capability.target, b)))

    def holds(self, t: Topology, caps: Set[Capability]) -> bool:
        return self.capability in caps

    def __str__(self) -> str:
        return f"Has({self.capability})"


Atom = Union[ProtocolPath, Software, Has]
Precondition = Tuple[Atom, ...]


def eval_precondition(p: Sequence[Atom], t: Topology, caps: Iterable[Capability]) -> Optional[Atom]:
    """First atom (in declaration order) that does not hold, or ``None`` when
    the whole conjunction is satisfied. Never mutates its inputs."""
    caps = set(caps)
    for atom in p:
        if not atom.holds(t, caps):
            return atom
    return None


# ---------------------------------------------------------------------------
# Catalog
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Effect:
    type: str
    # Arguments may hold lists, so they stay out of hashing and equality.
    args: Mapping[str, object] = field(default_factory=dict, compare=False, hash=False)

    def ground(self, b: Bindings) -> "Effect":
        return Effect(self.type, {k: _subst(v, b) for k, v in self.args.items()})


@dataclass(frozen=True)
class VulnEntry:
    cve: str
    params: Mapping[str, NodeKind]
    precondition: Precondition
    grants: Tuple[Capability, ...]
    effects: Tuple[Effect, ...] = ()
    description: str = ""


class Catalog:
    def __init__(self, entries: Iterable[VulnEntry] = ()):
        self._entries: Dict[str, VulnEntry] = {}
        for e in entries:
            if e.cve in self._entries:
                raise DuplicateCve(e.cve)
            self._entries[e.cve] = e

    def get(self, cve: str) -> VulnEntry:
        try:
            return self._entries[cve]
        except KeyError:
            raise UnknownCve(cve) from None

    def __contains__(self, cve: str) -> bool:
        return cve in self._entries

    def __iter__(self):
        return iter(self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)

    def ids(self) -> List[str]:
        return sorted(self._entries)


def _atom_from_dict(d: Mapping, where: str) -> Atom:
    kind = d.get("type")
    try:
        if kind == "protocol_path":
            return ProtocolPath(d["from"], d["to"], ProtocolKind(d["protocol"]))
        if kind == "software":
            return Software(d["node"], d["name"], VersionRange.from_json(d["range"]))
        if kind == "has":
            c = d["capability"]
            return Has(Capability(c["kind"], c["target"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}: bad {kind} atom ({exc})") from None
    raise ParseError(f"{where}: unknown atom type {kind!r}")


def _capability_from_dict(d, where: str) -> Capability:
    try:
        return Capability(d["kind"], d["target"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}: bad capability ({exc})") from None


def vuln_entry_from_dict(d: Mapping) -> VulnEntry:
    if not isinstance(d, Mapping) or not isinstance(d.get("cve"), str):
        raise ParseError("catalog entry needs a string 'cve'")
    where = d["cve"]
    try:
        params = {name: NodeKind(kind) for name, kind in d.get("params", {}).items()}
    except (ValueError, AttributeError) as exc:
        raise ParseError(f"{where}: bad params ({exc})") from None
    pre = d.get("precondition", {})
    atoms = tuple(_atom_from_dict(a, where) for a in (pre.get("atoms", []) if isinstance(pre, Mapping) else []))
    grants = tuple(_capability_from_dict(g, where) for g in d.get("grants", []))
    effects = []
    for e in d.get("effects", []):
        if not isinstance(e, Mapping) or e.get("type") not in EFFECT_TYPES:
            raise ParseError(f"{where}: unknown effect {e!r}")
        effects.append(Effect(e["type"], {k: v for k, v in e.items() if k != "type"}))
    return VulnEntry(where, params, atoms, grants, tuple(effects), d.get("description", ""))


def catalog_from_json(doc) -> Catalog:
    if not isinstance(doc, list):
        raise ParseError("catalog must be a JSON array")
    return Catalog(vuln_entry_from_dict(d) for d in doc)


def load_vuln_catalog(path=None) -> Catalog:
    """Load a catalog file; with no path, the shipped catalog."""
    path = fixture_path("cves.json") if path is None else Path(path)
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return catalog_from_json(doc)


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioStep:
    cve: str
    bindings: Mapping[str, object]
    at_ms: int


@dataclass(frozen=True)
class Scenario:
    id: str
    attacker: str
    steps: Tuple[ScenarioStep, ...]

    def __post_init__(self):
        times = [s.at_ms for s in self.steps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("scenario steps must be strictly increasing in at_ms")

    def step_id(self, index: int) -> str:
        return f"{self.id}.{index + 1}"


def scenario_from_dict(doc: Mapping) -> Scenario:
    body = doc.get("scenario", doc) if isinstance(doc, Mapping) else None
    if not isinstance(body, Mapping):
        raise ParseError("scenario document must be an object")
    try:
        steps = tuple(ScenarioStep(s["cve"], dict(s.get("bindings", {})), int(s["at_ms"])) for s in body["steps"])
        return Scenario(str(body["id"]), str(body["attacker"]), steps)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad scenario: {exc}") from None


def load_scenario(path) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return scenario_from_dict(doc)


# ---------------------------------------------------------------------------
# Grounded steps and outcomes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroundStep:
    cve: str
    bindings: Tuple[Tuple[str, object], ...]
    precondition: Precondition
    grants: Tuple[Capability, ...]
    effects: Tuple[Effect, ...]

    @property
    def effect_types(self) -> frozenset:
        return frozenset(e.type for e in self.effects)

    def sort_key(self):
        return self.cve, tuple((k, str(v)) for k, v in self.bindings)


def ground_step(entry: VulnEntry, bindings: Bindings, attacker: str, with_effects: bool = True) -> GroundStep:
    b = dict(bindings)
    b["attacker"] = attacker
    node_bindings = tuple(sorted((k, b[k]) for k in entry.params if k in b))
    missing = [k for k in entry.params if k not in b]
    if missing:
        raise KeyError(f"{entry.cve}: unbound parameter(s) {', '.join('$' + m for m in missing)}")
    return GroundStep(
        cve=entry.cve,
        bindings=node_bindings,
        precondition=tuple(a.ground(b) for a in entry.precondition),
        grants=tuple(Has(g).ground(b).capability for g in entry.grants),
        effects=tuple(e.ground(b) for e in entry.effects) if with_effects else
        tuple(Effect(e.type) for e in entry.effects),
    )


@dataclass(frozen=True)
class StepVerdict:
    step: str
    cve: str
    at_ms: int
    verdict: str
    failed_atom: Optional[str] = None

    def to_dict(self) -> dict:
        return {"step": self.step, "cve": self.cve, "at_ms": self.at_ms,
                "verdict": self.verdict, "failed_atom": self.failed_atom}


@dataclass(frozen=True)
class CapabilityGrant:
    time: int
    step: str
    capability: Capability

    def to_dict(self) -> dict:
        return {"time": self.time, "step": self.step, "capability": str(self.capability)}


@dataclass(frozen=True)
class AppliedEffect:
    time: int
    step: str
    effect: Effect


def apply_attack_step(sim: Simulation, step: GroundStep, step_id: str, at_ms: int) -> Tuple[
        StepVerdict, List[CapabilityGrant], List[AppliedEffect]]:
    """Evaluate ``step`` against the live run and, if its gate opens, apply it.

    A failed precondition leaves every piece of state untouched.
    """
    eng = sim.engine
    attacker = sim.attacker
    failed = eval_precondition(step.precondition, sim.topology, sim.attacker_caps)
    if failed is not None:
        eng.record(attacker, "internal", "ATTACK", f"{step_id} {step.cve} precondition failed: {failed}")
        return StepVerdict(step_id, step.cve, at_ms, PRECONDITION_FAILED, str(failed)), [], []

    grants = []
    for cap in step.grants:
        if cap not in sim.attacker_caps:
            sim.attacker_caps.add(cap)
            grants.append(CapabilityGrant(eng.now, step_id, cap))
    names = ", ".join(str(g.capability) for g in grants) or "nothing new"
    eng.record(attacker, "internal", "ATTACK", f"{step_id} {step.cve} succeeded; granted {names}")

    applied = []
    for effect in step.effects:
        _apply_effect(sim, effect, step_id)
        applied.append(AppliedEffect(eng.now, step_id, effect))
    return StepVerdict(step_id, step.cve, at_ms, SUCCEEDED), grants, applied


def _apply_effect(sim: Simulation, effect: Effect, step_id: str) -> None:
    eng = sim.engine
    svc = sim.services
    args = effect.args
    if effect.type == "db_tamper":
        table, key = args["table"], args["key"]
        svc.tamper(table, key, args["value"], args.get("field"), cause=step_id)
        eng.record(sim.central, "internal", "EFFECT",
                   f"{step_id} db_tamper {table}/{key} {args.get('field') or ''}={args['value']}".replace(" =", "="))
    elif effect.type == "register_rogue_emergency":
        reg = svc.ps03_register_emergency(sim.attacker, None, sim.attacker_caps)
        svc.registration_cause[reg.credential] = step_id
        eng.record(sim.central, "internal", "EFFECT",
                   f"{step_id} register_rogue_emergency {reg.device} credential {reg.credential}")
    elif effect.type == "inject_signal_command":
        rsu, x = args["rsu"], args["intersection"]
        command_id = f"cmd:{step_id}"
        svc.command_cause[command_id] = step_id
        if Capability("SignalControl", rsu) in sim.attacker_caps:
            credential = signal_credential(x)
        else:
            credential = "forged"
        eng.record(sim.central, "internal", "EFFECT",
                   f"{step_id} inject_signal_command {args.get('mode')} at {x} via {rsu}")
        sim.send(sim.central, rsu, MsgType.SIGNAL_OVERRIDE_COMMAND, {
            "command_id": command_id,
            "intersection": x,
            "mode": args.get("mode", "dual-green"),
            "phases": list(args.get("phases", [])),
            "duration_ticks": int(args.get("duration_ticks", 1)),
            "credential": credential,
        }, Preferred(SIGNAL_ORDER))
    else:  # pragma: no cover - rejected at load time
        raise ValueError(effect.type)


class AttackDriver:
    """Schedules a scenario's steps on a :class:`Simulation` and records verdicts."""

    def __init__(self, sim: Simulation, scenario: Scenario, catalog: Catalog):
        self.sim = sim
        self.scenario = scenario
        t = sim.topology
        if not t.has_node(scenario.attacker):
            raise UnknownNode(scenario.attacker)
        self.grounded: List[GroundStep] = []
        for s in scenario.steps:
            entry = catalog.get(s.cve)
            for name in entry.params:
                node = s.bindings.get(name)
                if node is not None and not t.has_node(node):
                    raise UnknownNode(f"{s.cve}: ${name} bound to unknown node {node!r}")
            try:
                self.grounded.append(ground_step(entry, s.bindings, scenario.attacker))
            except KeyError as exc:
                raise ParseError(str(exc.args[0])) from None
        self.verdicts: List[Optional[StepVerdict]] = [None] * len(scenario.steps)
        self.timeline: List[CapabilityGrant] = []
        self.applied: List[AppliedEffect] = []
        self._failed = False
        sim.attacker = scenario.attacker
        sim.engine.on_attack_step(self._on_step)
        for i, s in enumerate(scenario.steps):
            if s.at_ms <= sim.config.horizon_ms:
                sim.engine.schedule(s.at_ms, AttackStepDue(i))

    def _on_step(self, eng: Engine, index: int) -> None:
        s = self.scenario.steps[index]
        step_id = self.scenario.step_id(index)
        if self._failed:
            self.verdicts[index] = StepVerdict(step_id, s.cve, s.at_ms, NOT_REACHED)
            eng.record(self.scenario.attacker, "internal", "ATTACK", f"{step_id} {s.cve} not reached")
            return
        verdict, grants, applied = apply_attack_step(self.sim, self.grounded[index], step_id, s.at_ms)
        self.verdicts[index] = verdict
        self.timeline.extend(grants)
        self.applied.extend(applied)
        self._failed = verdict.verdict != SUCCEEDED

    def verdict_list(self) -> List[StepVerdict]:
        out = []
        for i, s in enumerate(self.scenario.steps):
            v = self.verdicts[i]
            # Steps scheduled past the horizon never fire.
            out.append(v or StepVerdict(self.scenario.step_id(i), s.cve, s.at_ms, NOT_REACHED))
        return out


def run_scenario(scenario: Optional[Scenario], topology: Topology, config: Optional[SimConfig] = None,
                 catalog: Optional[Catalog] = None) -> RunResult:
    """Run the topology's workload with ``scenario``'s steps interleaved by time."""
    sim = Simulation(topology, config)
    if scenario is None:
        return sim.run()
    driver = AttackDriver(sim, scenario, catalog if catalog is not None else load_vuln_catalog())
    result = sim.run()
    result.scenario_id = scenario.id
    result.steps = driver.verdict_list()
    result.capability_timeline = list(driver.timeline)
    result.effects_applied = list(driver.applied)
    return result


# ---------------------------------------------------------------------------
# Attack-path search
# ---------------------------------------------------------------------------

GOAL_NAMES = {
    "network-adjacent": "NetworkAdjacent",
    "db-write": "DbWrite",
    "emergency-registered": "EmergencyRegistered",
    "privileged-service": "PrivilegedService",
    "signal-control": "SignalControl",
    "credential-theft": "CredentialTheft",
    "db-tamper": "db_tamper",
    "register-rogue-emergency": "register_rogue_emergency",
    "inject-signal-command": "inject_signal_command",
}


@dataclass(frozen=True)
class Goal:
    """A capability kind (optionally pinned to a target) or a world-effect type."""

    kind: str
    target: Optional[str] = None

    @property
    def is_effect(self) -> bool:
        return self.kind in EFFECT_TYPES

    def met(self, caps: Set[Capability], effects: Iterable[str]) -> bool:
        if self.is_effect:
            return self.kind in effects
        return any(c.kind == self.kind and (self.target is None or c.target == self.target) for c in caps)


def parse_goal(text: str) -> Goal:
    """``signal-control``, ``SignalControl``, ``signal-control:RSU-1`` or an effect name."""
    name, _, target = text.partition(":")
    kind = GOAL_NAMES.get(name.lower(), name)
    if kind not in CAPABILITY_KINDS and kind not in EFFECT_TYPES:
        raise ValueError(f"unknown goal {text!r}")
    return Goal(kind, target or None)


@dataclass(frozen=True)
class AttackPath:
    steps: Tuple[GroundStep, ...]

    @property
    def cves(self) -> Tuple[str, ...]:
        return tuple(s.cve for s in self.steps)

    def __str__(self) -> str:
        return " → ".join(self.cves)

    def __len__(self) -> int:
        return len(self.steps)


def ground_catalog(topology: Topology, catalog: Catalog, attacker: str) -> List[GroundStep]:
    """Every instantiation of every entry with node parameters bound to nodes
    of the declared kinds, in deterministic order."""
    out = []
    for entry in catalog:
        names = sorted(entry.params)
        choices = [topology.nodes_of_kind(entry.params[n]) for n in names]
        for combo in itertools.product(*choices):
            out.append(ground_step(entry, dict(zip(names, combo)), attacker, with_effects=False))
    return sorted(set(out), key=GroundStep.sort_key)


def sequence_outcome(topology: Topology, steps: Sequence[GroundStep]) -> Optional[Tuple[Set[Capability], Set[str]]]:
    """Capabilities and effect types after running ``steps`` in order from an
    empty capability set, or ``None`` if some step's gate is closed."""
    caps: Set[Capability] = set()
    effects: Set[str] = set()
    for s in steps:
        if eval_precondition(s.precondition, topology, caps) is not None:
            return None
        caps |= set(s.grants)
        effects |= s.effect_types
    return caps, effects


def _is_minimal(topology: Topology, seq: Sequence[GroundStep], goal: Goal) -> bool:
    n = len(seq)
    for r in range(1, n):
        for keep in itertools.combinations(range(n), r):
            out = sequence_outcome(topology, [seq[i] for i in keep])
            if out is not None and goal.met(*out):
                return False
    return True


def enumerate_attack_paths(topology: Topology, catalog: Catalog, attacker: str,
                           goal: Union[Goal, str], depth: int = 4) -> List[AttackPath]:
    """All minimal feasible step sequences of length <= ``depth`` reaching ``goal``.

    A sequence is minimal when no proper subsequence (order kept) is itself
    feasible and goal-reaching. Results are ordered by length, then by the
    (cve, bindings) keys of their steps.
    """
    if isinstance(goal, str):
        goal = parse_goal(goal)
    if not topology.has_node(attacker) or depth < 1:
        return []
    steps = ground_catalog(topology, catalog, attacker)
    found: List[Tuple[GroundStep, ...]] = []

    def extend(seq: Tuple[GroundStep, ...], caps: frozenset, effects: frozenset) -> None:
        for s in steps:
            if s in seq or eval_precondition(s.precondition, topology, caps) is not None:
                continue
            new_caps = caps | frozenset(s.grants)
            new_effects = effects | s.effect_types
            cand = seq + (s,)
            if goal.met(new_caps, new_effects):
                if _is_minimal(topology, cand, goal):
                    found.append(cand)
                continue
            # A step that grants nothing new can be dropped from any path using it.
            if new_caps == caps or len(cand) >= depth:
                continue
            extend(cand, new_caps, new_effects)

    extend((), frozenset(), frozenset())
    found.sort(key=lambda p: (len(p), [s.sort_key() for s in p]))
    return [AttackPath(p) for p in found]
