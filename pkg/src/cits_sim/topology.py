"""C-ITS environment model: nodes, links, road network and service fixtures.

A :class:`Topology` is loaded once from JSON and never mutated afterwards.
The ``without_*``/``with_*`` helpers return modified copies, which is how the
ablation tests derive variants of the shipped fixtures.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import json
import re
from collections import deque
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

from .errors import ParseError, UnknownNode, ValidationError
from .versions import VersionRange, is_valid_version

SCHEMA_VERSION = 1


class NodeKind(str, enum.Enum):
    VEHICLE = "Vehicle"
    ROADSIDE_UNIT = "RoadsideUnit"
    RSU_CLOUD = "RsuCloud"
    CENTRAL_CLOUD = "CentralCloud"
    MOBILE_DEVICE = "MobileDevice"
    EXTERNAL_PROVIDER = "ExternalProvider"
    ATTACKER_DEVICE = "AttackerDevice"


class ProtocolKind(str, enum.Enum):
    MQTT = "Mqtt"
    ITS_G5 = "ItsG5"
    INTERNET_IPV6 = "InternetIpv6"
    SNMPV3 = "Snmpv3"

    @property
    def code(self) -> int:
        return _PROTOCOL_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "ProtocolKind":
        return _PROTOCOLS_BY_CODE[code]


_PROTOCOL_CODES = {
    ProtocolKind.MQTT: 1,
    ProtocolKind.ITS_G5: 2,
    ProtocolKind.INTERNET_IPV6: 3,
    ProtocolKind.SNMPV3: 4,
}
_PROTOCOLS_BY_CODE = {v: k for k, v in _PROTOCOL_CODES.items()}

SERVICE_IDS = frozenset({"pm01", "ps03", "su01", "ti03", "signal-controller", "database"})
MOBILE_CLOUD_SERVICES = ("pm01", "ps03", "su01", "ti03")

K = NodeKind
LEGAL_LINKS: Mapping[ProtocolKind, FrozenSet[FrozenSet[NodeKind]]] = MappingProxyType({
    ProtocolKind.MQTT: frozenset({
        frozenset({K.ROADSIDE_UNIT, K.RSU_CLOUD}),
        frozenset({K.VEHICLE, K.CENTRAL_CLOUD}),
        frozenset({K.ATTACKER_DEVICE, K.CENTRAL_CLOUD}),
    }),
    ProtocolKind.ITS_G5: frozenset({
        frozenset({K.ROADSIDE_UNIT, K.VEHICLE}),
        frozenset({K.ROADSIDE_UNIT, K.MOBILE_DEVICE}),
    }),
    ProtocolKind.INTERNET_IPV6: frozenset({
        frozenset({K.RSU_CLOUD, K.CENTRAL_CLOUD}),
        frozenset({K.EXTERNAL_PROVIDER, K.CENTRAL_CLOUD}),
        frozenset({K.ATTACKER_DEVICE, K.CENTRAL_CLOUD}),
        frozenset({K.MOBILE_DEVICE, K.CENTRAL_CLOUD}),
    }),
    ProtocolKind.SNMPV3: frozenset({
        frozenset({K.CENTRAL_CLOUD, K.ROADSIDE_UNIT}),
        frozenset({K.RSU_CLOUD, K.ROADSIDE_UNIT}),
    }),
})
del K

_SOFTWARE_NAME_RE = re.compile(r"^[a-z][a-z0-9_.+-]*$")


def is_legal_link(protocol: ProtocolKind, a: NodeKind, b: NodeKind) -> bool:
    return frozenset({a, b}) in LEGAL_LINKS[protocol]


# ---------------------------------------------------------------------------
# Model records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SoftwareItem:
    name: str
    version: str


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    software: Tuple[SoftwareItem, ...] = ()
    services: Tuple[str, ...] = ()
    # Mobile Cloud instance count per hosted service (Central Cloud only).
    instances: Mapping[str, int] = field(default_factory=lambda: MappingProxyType({}))


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    protocol: ProtocolKind
    latency_ms: int

    def other(self, node: str) -> str:
        return self.b if node == self.a else self.a

    def touches(self, node: str) -> bool:
        return node == self.a or node == self.b


@dataclass(frozen=True)
class Segment:
    src: str
    dst: str
    cost: float

    @property
    def key(self) -> str:
        return segment_key(self.src, self.dst)


def segment_key(src: str, dst: str) -> str:
    return f"{src}->{dst}"


@dataclass(frozen=True)
class SignalPlan:
    phases: Tuple[str, ...]
    serves: Mapping[str, FrozenSet[str]]
    conflict: Tuple[Tuple[bool, ...], ...]
    dwell_ticks: Tuple[int, ...]
    controller: Optional[str] = None
    approaches: Tuple[str, ...] = ()

    def phase_index(self, phase: str) -> int:
        return self.phases.index(phase)

    def conflicts(self, p: str, q: str) -> bool:
        return self.conflict[self.phase_index(p)][self.phase_index(q)]

    def dwell(self, phase: str) -> int:
        return self.dwell_ticks[self.phase_index(phase)]

    def phase_serving(self, approach: str) -> Optional[str]:
        for phase in self.phases:
            if approach in self.serves.get(phase, ()):
                return phase
        return None

    def all_approaches(self) -> Tuple[str, ...]:
        if self.approaches:
            return self.approaches
        return tuple(sorted({a for s in self.serves.values() for a in s}))


@dataclass(frozen=True)
class RoadGraph:
    intersections: Tuple[str, ...] = ()
    segments: Tuple[Segment, ...] = ()
    signals: Mapping[str, SignalPlan] = field(default_factory=lambda: MappingProxyType({}))

    def segment(self, src: str, dst: str) -> Optional[Segment]:
        for seg in self.segments:
            if seg.src == src and seg.dst == dst:
                return seg
        return None


@dataclass(frozen=True)
class ParkingLot:
    id: str
    capacity: int
    occupied: int
    price: float
    provider: Optional[str] = None


@dataclass(frozen=True)
class EmergencyDevice:
    device: str
    proof: str


# -- workload: the legitimate periodic traffic a run generates --------------

@dataclass(frozen=True)
class VehicleProfile:
    vehicle: str
    position: str
    speed: float
    # Shifts this vehicle's status schedule; spacing vehicles by more than the
    # jitter bound keeps their reports in a seed-independent order.
    status_offset_ms: int = 0


@dataclass(frozen=True)
class ParkingQueryPlan:
    requester: str
    lot: str
    period_ms: int
    offset_ms: int = 0


@dataclass(frozen=True)
class RouteRequestPlan:
    requester: str
    src: str
    dst: str
    period_ms: int
    offset_ms: int = 0


@dataclass(frozen=True)
class IncidentPlan:
    provider: str
    src: str
    dst: str
    penalty: float
    at_ms: int


@dataclass(frozen=True)
class OccupancyChange:
    lot: str
    occupied: int
    at_ms: int


@dataclass(frozen=True)
class RegistrationPlan:
    device: str
    at_ms: int


@dataclass(frozen=True)
class PreemptionPlan:
    device: str
    intersection: str
    approach: str
    period_ms: int
    offset_ms: int = 0


@dataclass(frozen=True)
class Workload:
    status_period_ms: int = 2000
    jitter_ms: int = 0
    parking_report_period_ms: int = 10000
    vehicles: Tuple[VehicleProfile, ...] = ()
    parking_queries: Tuple[ParkingQueryPlan, ...] = ()
    route_requests: Tuple[RouteRequestPlan, ...] = ()
    incidents: Tuple[IncidentPlan, ...] = ()
    occupancy_changes: Tuple[OccupancyChange, ...] = ()
    registrations: Tuple[RegistrationPlan, ...] = ()
    preemptions: Tuple[PreemptionPlan, ...] = ()


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Topology:
    name: str = ""
    nodes: Tuple[Node, ...] = ()
    links: Tuple[Link, ...] = ()
    road_graph: RoadGraph = field(default_factory=RoadGraph)
    parking_lots: Tuple[ParkingLot, ...] = ()
    emergency_devices: Tuple[EmergencyDevice, ...] = ()
    workload: Workload = field(default_factory=Workload)
    schema: int = SCHEMA_VERSION

    # -- lookups -----------------------------------------------------------

    @functools.cached_property
    def _node_index(self) -> Dict[str, Node]:
        index: Dict[str, Node] = {}
        for node in self.nodes:
            index.setdefault(node.id, node)
        return index

    @functools.cached_property
    def _adjacency(self) -> Dict[str, List[Link]]:
        adj: Dict[str, List[Link]] = {n.id: [] for n in self.nodes}
        for link in self.links:
            if link.a in adj and link.b in adj:
                adj[link.a].append(link)
                adj[link.b].append(link)
        return adj

    def has_node(self, node_id: str) -> bool:
        return node_id in self._node_index

    def node(self, node_id: str) -> Node:
        try:
            return self._node_index[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    @property
    def node_ids(self) -> Tuple[str, ...]:
        return tuple(sorted(self._node_index))

    def nodes_of_kind(self, kind: NodeKind) -> Tuple[str, ...]:
        return tuple(sorted(n.id for n in self._node_index.values() if n.kind == kind))

    def central_cloud(self) -> Optional[str]:
        clouds = self.nodes_of_kind(NodeKind.CENTRAL_CLOUD)
        return clouds[0] if clouds else None

    def links_of(self, node_id: str) -> List[Link]:
        self.node(node_id)
        return list(self._adjacency[node_id])

    def links_between(self, a: str, b: str) -> List[Link]:
        return sorted(
            (l for l in self._adjacency.get(a, ()) if l.other(a) == b),
            key=lambda l: l.protocol.code,
        )

    def lot(self, lot_id: str) -> Optional[ParkingLot]:
        for lot in self.parking_lots:
            if lot.id == lot_id:
                return lot
        return None

    def signal_controller_of(self, intersection: str) -> Optional[str]:
        plan = self.road_graph.signals.get(intersection)
        return plan.controller if plan else None

    # -- routing -----------------------------------------------------------

    @functools.cached_property
    def _hop_distances(self) -> Dict[str, Dict[str, int]]:
        dist: Dict[str, Dict[str, int]] = {}
        for target in self._node_index:
            seen = {target: 0}
            queue = deque([target])
            while queue:
                cur = queue.popleft()
                for link in self._adjacency[cur]:
                    nxt = link.other(cur)
                    if nxt not in seen:
                        seen[nxt] = seen[cur] + 1
                        queue.append(nxt)
            dist[target] = seen
        return dist

    def next_hop(self, src: str, dst: str) -> Optional[str]:
        """Next node on a shortest-hop path; ties go to the smallest node id."""
        self.node(src)
        self.node(dst)
        if src == dst:
            return None
        dist = self._hop_distances[dst]
        if src not in dist:
            return None
        want = dist[src] - 1
        candidates = {l.other(src) for l in self._adjacency[src]}
        best = [n for n in candidates if dist.get(n) == want]
        return min(best) if best else None

    def route(self, src: str, dst: str) -> Optional[List[str]]:
        if src == dst:
            return [src]
        path = [src]
        cur = src
        while cur != dst:
            cur = self.next_hop(cur, dst)
            if cur is None:
                return None
            path.append(cur)
        return path

    # -- derived copies ----------------------------------------------------

    def without_link(self, a: str, b: str, protocol: Optional[ProtocolKind] = None) -> "Topology":
        kept = tuple(
            l for l in self.links
            if not ({l.a, l.b} == {a, b} and (protocol is None or l.protocol == protocol))
        )
        return dataclasses.replace(self, links=kept)

    def with_link(self, link: Link) -> "Topology":
        return dataclasses.replace(self, links=self.links + (link,))

    def without_node(self, node_id: str) -> "Topology":
        return dataclasses.replace(
            self,
            nodes=tuple(n for n in self.nodes if n.id != node_id),
            links=tuple(l for l in self.links if not l.touches(node_id)),
        )

    def with_software(self, node_id: str, name: str, version: str) -> "Topology":
        def patch(node: Node) -> Node:
            items = [s for s in node.software if s.name != name]
            items.append(SoftwareItem(name, version))
            return dataclasses.replace(node, software=tuple(items))
        return self._patch_node(node_id, patch)

    def without_software(self, node_id: str, name: str) -> "Topology":
        def patch(node: Node) -> Node:
            return dataclasses.replace(
                node, software=tuple(s for s in node.software if s.name != name))
        return self._patch_node(node_id, patch)

    def _patch_node(self, node_id: str, fn) -> "Topology":
        self.node(node_id)
        return dataclasses.replace(
            self, nodes=tuple(fn(n) if n.id == node_id else n for n in self.nodes))


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------

def neighbors(t: Topology, node: str) -> List[Tuple[str, ProtocolKind, int]]:
    """Adjacent nodes as ``(peer, protocol, latency_ms)``, sorted by peer then
    protocol wire code. Parallel links to the same peer are kept."""
    return sorted(
        ((l.other(node), l.protocol, l.latency_ms) for l in t.links_of(node)),
        key=lambda e: (e[0], e[1].code, e[2]),
    )


def protocol_on_path(t: Topology, src: str, dst: str, protocol: ProtocolKind) -> bool:
    """True iff a simple path ``src -> ... -> dst`` exists whose final hop into
    ``dst`` is a ``protocol`` link."""
    t.node(src)
    t.node(dst)
    if src == dst:
        return False
    entry_points = {l.other(dst) for l in t.links_of(dst) if l.protocol == protocol}
    if not entry_points:
        return False
    # A simple path must not visit dst before its final hop.
    seen = {src}
    queue = deque([src])
    while queue:
        cur = queue.popleft()
        if cur in entry_points:
            return True
        for link in t.links_of(cur):
            nxt = link.other(cur)
            if nxt != dst and nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return False


def software_matches(t: Topology, node: str, name: str, vrange: VersionRange) -> bool:
    return any(s.name == name and vrange.contains(s.version) for s in t.node(node).software)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_topology(t: Topology) -> List[str]:
    """Every invariant breach as a human-readable line naming the culprit."""
    errors: List[str] = []
    kinds: Dict[str, NodeKind] = {}
    for node in t.nodes:
        if node.id in kinds:
            errors.append(f"node {node.id!r}: duplicate node id")
            continue
        kinds[node.id] = node.kind
        for item in node.software:
            if not _SOFTWARE_NAME_RE.match(item.name):
                errors.append(f"node {node.id!r}: software name {item.name!r} is not a lowercase identifier")
            if not is_valid_version(item.version):
                errors.append(f"node {node.id!r}: software {item.name!r} has invalid version {item.version!r}")
        for svc in node.services:
            if svc not in SERVICE_IDS:
                errors.append(f"node {node.id!r}: unknown service {svc!r}")
        if "database" in node.services and node.kind not in (NodeKind.RSU_CLOUD, NodeKind.CENTRAL_CLOUD):
            errors.append(f"node {node.id!r}: database may only be hosted by RsuCloud or CentralCloud")
        if "signal-controller" in node.services and node.kind != NodeKind.ROADSIDE_UNIT:
            errors.append(f"node {node.id!r}: signal-controller may only be hosted by a RoadsideUnit")
        for svc, count in node.instances.items():
            if svc not in node.services:
                errors.append(f"node {node.id!r}: instances declared for unhosted service {svc!r}")
            if not isinstance(count, int) or count < 0:
                errors.append(f"node {node.id!r}: instance count for {svc!r} must be a non-negative integer")

    seen_links = set()
    for link in t.links:
        label = f"link {link.a}-{link.b}/{link.protocol.value}"
        for end in (link.a, link.b):
            if end not in kinds:
                errors.append(f"{label}: references unknown node {end!r}")
        if link.a == link.b:
            errors.append(f"{label}: endpoints must differ")
        key = (frozenset({link.a, link.b}), link.protocol)
        if key in seen_links:
            errors.append(f"{label}: duplicate link")
        seen_links.add(key)
        if not isinstance(link.latency_ms, int) or link.latency_ms < 1:
            errors.append(f"{label}: latency_ms must be an integer >= 1")
        if link.a in kinds and link.b in kinds and link.a != link.b:
            if not is_legal_link(link.protocol, kinds[link.a], kinds[link.b]):
                errors.append(
                    f"{label}: protocol {link.protocol.value} not allowed between "
                    f"{kinds[link.a].value} and {kinds[link.b].value} (legality table)")

    errors.extend(_validate_road_graph(t, kinds))

    lot_ids = set()
    for lot in t.parking_lots:
        if lot.id in lot_ids:
            errors.append(f"parking lot {lot.id!r}: duplicate id")
        lot_ids.add(lot.id)
        if lot.capacity < 1:
            errors.append(f"parking lot {lot.id!r}: capacity must be positive")
        if not 0 <= lot.occupied <= lot.capacity:
            errors.append(f"parking lot {lot.id!r}: occupied {lot.occupied} outside [0, {lot.capacity}]")
        if lot.price < 0:
            errors.append(f"parking lot {lot.id!r}: negative price")
        if lot.provider is not None:
            errors.extend(_check_role(kinds, lot.provider, f"parking lot {lot.id!r} provider",
                                      (NodeKind.EXTERNAL_PROVIDER,)))

    for dev in t.emergency_devices:
        errors.extend(_check_role(kinds, dev.device, "emergency device", (NodeKind.VEHICLE,)))

    errors.extend(_validate_workload(t, kinds, lot_ids))
    return errors


def _check_role(kinds, node_id, role, allowed) -> List[str]:
    if node_id not in kinds:
        return [f"{role}: references unknown node {node_id!r}"]
    if kinds[node_id] not in allowed:
        return [f"{role}: node {node_id!r} is {kinds[node_id].value}, expected "
                + "/".join(k.value for k in allowed)]
    return []


def _validate_road_graph(t: Topology, kinds) -> List[str]:
    errors = []
    rg = t.road_graph
    known = set()
    for x in rg.intersections:
        if x in known:
            errors.append(f"intersection {x!r}: duplicate id")
        known.add(x)
    seen = set()
    for seg in rg.segments:
        label = f"segment {seg.key}"
        for end in (seg.src, seg.dst):
            if end not in known:
                errors.append(f"{label}: references unknown intersection {end!r}")
        if not seg.cost > 0:
            errors.append(f"{label}: cost must be positive")
        if (seg.src, seg.dst) in seen:
            errors.append(f"{label}: duplicate segment")
        seen.add((seg.src, seg.dst))
    for x, plan in rg.signals.items():
        label = f"signal plan {x!r}"
        if x not in known:
            errors.append(f"{label}: references unknown intersection {x!r}")
        n = len(plan.phases)
        if n == 0:
            errors.append(f"{label}: no phases")
        if len(set(plan.phases)) != n:
            errors.append(f"{label}: duplicate phase ids")
        if len(plan.conflict) != n or any(len(row) != n for row in plan.conflict):
            errors.append(f"{label}: conflict matrix must be {n}x{n}")
        else:
            for i in range(n):
                if plan.conflict[i][i]:
                    errors.append(f"{label}: phase {plan.phases[i]!r} conflicts with itself")
                for j in range(i + 1, n):
                    if plan.conflict[i][j] != plan.conflict[j][i]:
                        errors.append(f"{label}: conflict matrix not symmetric at "
                                      f"({plan.phases[i]}, {plan.phases[j]})")
        if len(plan.dwell_ticks) != n or any(not isinstance(d, int) or d < 1 for d in plan.dwell_ticks):
            errors.append(f"{label}: dwell_ticks must be one positive integer per phase")
        for phase in plan.serves:
            if phase not in plan.phases:
                errors.append(f"{label}: serves references unknown phase {phase!r}")
        for approach in plan.all_approaches():
            if plan.phase_serving(approach) is None:
                errors.append(f"{label}: approach {approach!r} served by no phase")
        if plan.controller is not None:
            errors.extend(_check_role(kinds, plan.controller, f"{label} controller",
                                      (NodeKind.ROADSIDE_UNIT,)))
    return errors


def _validate_workload(t: Topology, kinds, lot_ids) -> List[str]:
    errors = []
    w = t.workload
    intersections = set(t.road_graph.intersections)
    senders = (NodeKind.VEHICLE, NodeKind.MOBILE_DEVICE)
    if w.status_period_ms < 1 or w.parking_report_period_ms < 1 or w.jitter_ms < 0:
        errors.append("workload: periods must be >= 1 and jitter_ms >= 0")
    for v in w.vehicles:
        errors.extend(_check_role(kinds, v.vehicle, "workload vehicle", (NodeKind.VEHICLE,)))
        if v.position not in intersections:
            errors.append(f"workload vehicle {v.vehicle!r}: unknown position {v.position!r}")
        if v.speed < 0:
            errors.append(f"workload vehicle {v.vehicle!r}: negative speed")
        if v.status_offset_ms < 0:
            errors.append(f"workload vehicle {v.vehicle!r}: negative status_offset_ms")
    for q in w.parking_queries:
        errors.extend(_check_role(kinds, q.requester, "workload parking query", senders))
        if q.lot not in lot_ids:
            errors.append(f"workload parking query: unknown lot {q.lot!r}")
        if q.period_ms < 1:
            errors.append("workload parking query: period_ms must be >= 1")
    for r in w.route_requests:
        errors.extend(_check_role(kinds, r.requester, "workload route request", senders))
        for x in (r.src, r.dst):
            if x not in intersections:
                errors.append(f"workload route request: unknown intersection {x!r}")
        if r.period_ms < 1:
            errors.append("workload route request: period_ms must be >= 1")
    for inc in w.incidents:
        errors.extend(_check_role(kinds, inc.provider, "workload incident",
                                  (NodeKind.EXTERNAL_PROVIDER, NodeKind.RSU_CLOUD)))
        if t.road_graph.segment(inc.src, inc.dst) is None:
            errors.append(f"workload incident: unknown segment {segment_key(inc.src, inc.dst)!r}")
        if inc.penalty < 0:
            errors.append("workload incident: negative penalty")
    for ch in w.occupancy_changes:
        lot = t.lot(ch.lot)
        if lot is None:
            errors.append(f"workload occupancy change: unknown lot {ch.lot!r}")
        elif not 0 <= ch.occupied <= lot.capacity:
            errors.append(f"workload occupancy change: {ch.occupied} outside lot {ch.lot!r} capacity")
    for reg in w.registrations:
        errors.extend(_check_role(kinds, reg.device, "workload registration", (NodeKind.VEHICLE,)))
    for p in w.preemptions:
        errors.extend(_check_role(kinds, p.device, "workload preemption", (NodeKind.VEHICLE,)))
        plan = t.road_graph.signals.get(p.intersection)
        if plan is None:
            errors.append(f"workload preemption: intersection {p.intersection!r} has no signal plan")
        elif plan.phase_serving(p.approach) is None:
            errors.append(f"workload preemption: approach {p.approach!r} not served at {p.intersection!r}")
        if p.period_ms < 1:
            errors.append("workload preemption: period_ms must be >= 1")
    return errors


# ---------------------------------------------------------------------------
# JSON (de)serialisation
# ---------------------------------------------------------------------------

def _req(doc: Mapping, key: str, typ, where: str):
    if not isinstance(doc, Mapping) or key not in doc:
        raise ParseError(f"{where}: missing field {key!r}")
    value = doc[key]
    if typ is float:
        typ = (int, float)
    if not isinstance(value, typ) or (isinstance(value, bool) and typ is not bool):
        raise ParseError(f"{where}: field {key!r} has wrong type {type(value).__name__}")
    return value


def _opt(doc: Mapping, key: str, typ, default, where: str):
    if key not in doc:
        return default
    return _req(doc, key, typ, where)


def _enum(enum_cls, value, where):
    try:
        return enum_cls(value)
    except ValueError:
        raise ParseError(f"{where}: unknown {enum_cls.__name__} {value!r}") from None


def topology_from_dict(doc: Mapping) -> Topology:
    """Build a :class:`Topology` from a decoded JSON document (no validation)."""
    if not isinstance(doc, Mapping):
        raise ParseError("topology document must be a JSON object")
    schema = _req(doc, "schema", int, "topology")
    if schema != SCHEMA_VERSION:
        raise ParseError(f"topology: unsupported schema {schema}")
    name = _opt(doc, "name", str, "", "topology")

    nodes = []
    for i, nd in enumerate(_opt(doc, "nodes", list, [], "topology")):
        where = f"nodes[{i}]"
        software = tuple(
            SoftwareItem(_req(s, "name", str, f"{where}.software"), _req(s, "version", str, f"{where}.software"))
            for s in _opt(nd, "software", list, [], where)
        )
        services = tuple(_opt(nd, "services", list, [], where))
        if not all(isinstance(s, str) for s in services):
            raise ParseError(f"{where}: services must be strings")
        instances = _opt(nd, "instances", dict, {}, where)
        nodes.append(Node(
            id=_req(nd, "id", str, where),
            kind=_enum(NodeKind, _req(nd, "kind", str, where), where),
            software=software,
            services=services,
            instances=MappingProxyType(dict(instances)),
        ))

    links = []
    for i, ld in enumerate(_opt(doc, "links", list, [], "topology")):
        where = f"links[{i}]"
        links.append(Link(
            a=_req(ld, "a", str, where),
            b=_req(ld, "b", str, where),
            protocol=_enum(ProtocolKind, _req(ld, "protocol", str, where), where),
            latency_ms=_req(ld, "latency_ms", int, where),
        ))

    rg_doc = _opt(doc, "road_graph", dict, {}, "topology")
    segments = tuple(
        Segment(_req(s, "from", str, "segment"), _req(s, "to", str, "segment"), _req(s, "cost", float, "segment"))
        for s in _opt(rg_doc, "segments", list, [], "road_graph")
    )
    signals = {}
    for x, sd in _opt(rg_doc, "signals", dict, {}, "road_graph").items():
        where = f"signals[{x}]"
        serves = _req(sd, "serves", dict, where)
        signals[x] = SignalPlan(
            phases=tuple(_req(sd, "phases", list, where)),
            serves=MappingProxyType({p: frozenset(a) for p, a in serves.items()}),
            conflict=tuple(tuple(bool(c) for c in row) for row in _req(sd, "conflict", list, where)),
            dwell_ticks=tuple(_req(sd, "dwell_ticks", list, where)),
            controller=_opt(sd, "controller", str, None, where),
            approaches=tuple(_opt(sd, "approaches", list, [], where)),
        )
    road_graph = RoadGraph(
        intersections=tuple(_opt(rg_doc, "intersections", list, [], "road_graph")),
        segments=segments,
        signals=MappingProxyType(signals),
    )

    lots = tuple(
        ParkingLot(
            id=_req(p, "id", str, "parking_lots"),
            capacity=_req(p, "capacity", int, "parking_lots"),
            occupied=_req(p, "occupied", int, "parking_lots"),
            price=_req(p, "price", float, "parking_lots"),
            provider=_opt(p, "provider", str, None, "parking_lots"),
        )
        for p in _opt(doc, "parking_lots", list, [], "topology")
    )
    devices = tuple(
        EmergencyDevice(_req(e, "device", str, "emergency_devices"), _req(e, "proof", str, "emergency_devices"))
        for e in _opt(doc, "emergency_devices", list, [], "topology")
    )
    workload = _workload_from_dict(_opt(doc, "workload", dict, {}, "topology"))
    return Topology(name=name, nodes=tuple(nodes), links=tuple(links), road_graph=road_graph,
                    parking_lots=lots, emergency_devices=devices, workload=workload, schema=schema)


def _workload_from_dict(w: Mapping) -> Workload:
    where = "workload"

    def items(key):
        return _opt(w, key, list, [], where)

    return Workload(
        status_period_ms=_opt(w, "status_period_ms", int, 2000, where),
        jitter_ms=_opt(w, "jitter_ms", int, 0, where),
        parking_report_period_ms=_opt(w, "parking_report_period_ms", int, 10000, where),
        vehicles=tuple(VehicleProfile(_req(v, "vehicle", str, where), _req(v, "position", str, where),
                                      _req(v, "speed", float, where), _opt(v, "status_offset_ms", int, 0, where))
                       for v in items("vehicles")),
        parking_queries=tuple(ParkingQueryPlan(_req(q, "requester", str, where), _req(q, "lot", str, where),
                                               _req(q, "period_ms", int, where), _opt(q, "offset_ms", int, 0, where))
                              for q in items("parking_queries")),
        route_requests=tuple(RouteRequestPlan(_req(r, "requester", str, where), _req(r, "from", str, where),
                                              _req(r, "to", str, where), _req(r, "period_ms", int, where),
                                              _opt(r, "offset_ms", int, 0, where))
                             for r in items("route_requests")),
        incidents=tuple(IncidentPlan(_req(i, "provider", str, where), _req(i, "from", str, where),
                                     _req(i, "to", str, where), _req(i, "penalty", float, where),
                                     _req(i, "at_ms", int, where)) for i in items("incidents")),
        occupancy_changes=tuple(OccupancyChange(_req(c, "lot", str, where), _req(c, "occupied", int, where),
                                                _req(c, "at_ms", int, where)) for c in items("occupancy_changes")),
        registrations=tuple(RegistrationPlan(_req(r, "device", str, where), _req(r, "at_ms", int, where))
                            for r in items("registrations")),
        preemptions=tuple(PreemptionPlan(_req(p, "device", str, where), _req(p, "intersection", str, where),
                                         _req(p, "approach", str, where), _req(p, "period_ms", int, where),
                                         _opt(p, "offset_ms", int, 0, where)) for p in items("preemptions")),
    )


def topology_to_dict(t: Topology) -> dict:
    rg = t.road_graph
    w = t.workload
    return {
        "schema": t.schema,
        "name": t.name,
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind.value,
                "software": [{"name": s.name, "version": s.version} for s in n.software],
                "services": list(n.services),
                **({"instances": dict(n.instances)} if n.instances else {}),
            }
            for n in t.nodes
        ],
        "links": [
            {"a": l.a, "b": l.b, "protocol": l.protocol.value, "latency_ms": l.latency_ms}
            for l in t.links
        ],
        "road_graph": {
            "intersections": list(rg.intersections),
            "segments": [{"from": s.src, "to": s.dst, "cost": s.cost} for s in rg.segments],
            "signals": {
                x: {
                    "phases": list(p.phases),
                    "serves": {ph: sorted(a) for ph, a in p.serves.items()},
                    "conflict": [list(row) for row in p.conflict],
                    "dwell_ticks": list(p.dwell_ticks),
                    **({"controller": p.controller} if p.controller is not None else {}),
                    **({"approaches": list(p.approaches)} if p.approaches else {}),
                }
                for x, p in rg.signals.items()
            },
        },
        "parking_lots": [
            {"id": p.id, "capacity": p.capacity, "occupied": p.occupied, "price": p.price,
             **({"provider": p.provider} if p.provider is not None else {})}
            for p in t.parking_lots
        ],
        "emergency_devices": [{"device": e.device, "proof": e.proof} for e in t.emergency_devices],
        "workload": {
            "status_period_ms": w.status_period_ms,
            "jitter_ms": w.jitter_ms,
            "parking_report_period_ms": w.parking_report_period_ms,
            "vehicles": [{"vehicle": v.vehicle, "position": v.position, "speed": v.speed,
                          "status_offset_ms": v.status_offset_ms} for v in w.vehicles],
            "parking_queries": [{"requester": q.requester, "lot": q.lot, "period_ms": q.period_ms,
                                 "offset_ms": q.offset_ms} for q in w.parking_queries],
            "route_requests": [{"requester": r.requester, "from": r.src, "to": r.dst, "period_ms": r.period_ms,
                                "offset_ms": r.offset_ms} for r in w.route_requests],
            "incidents": [{"provider": i.provider, "from": i.src, "to": i.dst, "penalty": i.penalty,
                           "at_ms": i.at_ms} for i in w.incidents],
            "occupancy_changes": [{"lot": c.lot, "occupied": c.occupied, "at_ms": c.at_ms}
                                  for c in w.occupancy_changes],
            "registrations": [{"device": r.device, "at_ms": r.at_ms} for r in w.registrations],
            "preemptions": [{"device": p.device, "intersection": p.intersection, "approach": p.approach,
                             "period_ms": p.period_ms, "offset_ms": p.offset_ms} for p in w.preemptions],
        },
    }


def serialize_topology(t: Topology) -> str:
    return json.dumps(topology_to_dict(t), indent=2) + "\n"


def parse_topology(text: str, validate: bool = True) -> Topology:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    t = topology_from_dict(doc)
    if validate:
        violations = validate_topology(t)
        if violations:
            raise ValidationError(violations)
    return t


def load_topology(path, validate: bool = True) -> Topology:
    """Read, parse and (by default) validate a topology JSON file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8") from exc
    return parse_topology(text, validate=validate)


def dump_topology(t: Topology, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_topology(t))
