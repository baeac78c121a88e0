"""Service packages hosted by the Central Cloud, plus the RSU signal controller.

:class:`CitsServices` holds the served state (``db``) and a shadow copy
(``truth``) that only legitimate operations touch. Attack effects go through
:meth:`CitsServices.tamper` and friends, which write ``db`` alone; the
monitors compare the two.
"""

from __future__ import annotations

import copy
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Deque, Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple

from . import kernels
from .capability import Capability
from .engine import SimConfig
from .errors import (
    InvalidProof,
    NegativePenalty,
    NoInstance,
    OccupancyOutOfRange,
    UnknownIntersection,
    UnknownLot,
    UnknownSegment,
    UnknownVehicle,
    UnregisteredDevice,
)
from .topology import (
    MOBILE_CLOUD_SERVICES,
    NodeKind,
    ParkingLot,
    RoadGraph,
    SignalPlan,
    Topology,
    segment_key,
)


@dataclass(frozen=True)
class Ack:
    accepted: bool
    detail: str = ""


@dataclass(frozen=True)
class ParkingInfo:
    lot: str
    available: int
    price: float


@dataclass(frozen=True)
class EmergencyRegistration:
    device: str
    credential: str
    issued_by: str
    # Ground truth for the monitors; service logic never branches on it.
    legitimate: bool


@dataclass(frozen=True)
class VehicleStatus:
    vehicle: str
    position: str
    speed: float
    last_update: int


@dataclass
class CentralDb:
    parking: Dict[str, ParkingLot] = field(default_factory=dict)
    incidents: Dict[str, float] = field(default_factory=dict)
    registrations: List[EmergencyRegistration] = field(default_factory=list)
    statuses: Dict[str, VehicleStatus] = field(default_factory=dict)

    @classmethod
    def from_topology(cls, t: Topology) -> "CentralDb":
        return cls(parking={lot.id: lot for lot in t.parking_lots})

    def copy(self) -> "CentralDb":
        return copy.deepcopy(self)

    def registration(self, credential: str) -> Optional[EmergencyRegistration]:
        for reg in self.registrations:
            if reg.credential == credential:
                return reg
        return None


@dataclass(frozen=True)
class Route:
    path: Tuple[str, ...]
    cost: float

    @property
    def reachable(self) -> bool:
        return bool(self.path)


UNREACHABLE = Route((), math.inf)


def compute_route(graph: RoadGraph, src: str, dst: str,
                  incidents: Optional[Mapping[str, float]] = None) -> Route:
    """Minimum-cost path where each segment costs ``base + incident penalty``.

    Ties between equal-cost paths go to the lexicographically smallest
    sequence of intersection ids.
    """
    known = graph.intersections
    if src not in known:
        raise UnknownIntersection(src)
    if dst not in known:
        raise UnknownIntersection(dst)
    if src == dst:
        return Route((src,), 0)
    incidents = incidents or {}
    order = sorted(set(known))
    index = {x: i for i, x in enumerate(order)}
    adjacency: List[List[Tuple[int, float]]] = [[] for _ in order]
    for seg in graph.segments:
        adjacency[index[seg.src]].append((index[seg.dst], seg.cost + incidents.get(seg.key, 0)))
    cost, path = kernels.shortest_path(adjacency, index[src], index[dst])
    if not path:
        return UNREACHABLE
    return Route(tuple(order[i] for i in path), _tidy(cost))


def path_cost(graph: RoadGraph, path: Iterable[str], incidents: Optional[Mapping[str, float]] = None) -> float:
    incidents = incidents or {}
    path = list(path)
    total = 0
    for a, b in zip(path, path[1:]):
        seg = graph.segment(a, b)
        if seg is None:
            return math.inf
        total += seg.cost + incidents.get(seg.key, 0)
    return _tidy(total)


def _tidy(x: float):
    return int(x) if float(x).is_integer() else x


# ---------------------------------------------------------------------------
# Mobile Cloud dispatch
# ---------------------------------------------------------------------------

class MobileCloud:
    """Round-robin dispatch of requests over per-service instances."""

    def __init__(self, instances: Mapping[str, int]):
        self.instances = dict(instances)
        self._counters: Dict[str, int] = {svc: 0 for svc in self.instances}
        self.handled: Dict[Tuple[str, int], int] = {}

    def dispatch(self, service: str, request=None) -> int:
        n = self.instances.get(service, 0)
        if n <= 0:
            raise NoInstance(f"service {service!r} has no instances")
        count = self._counters[service]
        self._counters[service] = count + 1
        idx = count % n
        self.handled[(service, idx)] = self.handled.get((service, idx), 0) + 1
        return idx


# ---------------------------------------------------------------------------
# Signal controller
# ---------------------------------------------------------------------------

@dataclass
class PreemptionRequest:
    request_id: str
    intersection: str
    phase: str
    requested_at: int
    deadline: int
    served_at: Optional[int] = None
    # Queued behind another preemption, so the latency bound does not apply.
    deferred: bool = False
    # Step id of an attacker override that held this request back.
    blocked_by: Optional[str] = None
    # Ground truth for the monitors: issued against a legitimate registration.
    legitimate: bool = True


@dataclass
class Override:
    command_id: str
    mode: str
    phases: FrozenSet[str]
    remaining: int
    cause: Optional[str] = None


@dataclass(frozen=True)
class PhaseTransition:
    time: int
    intersection: str
    before: FrozenSet[str]
    after: FrozenSet[str]
    reason: str


@dataclass(frozen=True)
class HistoryEntry:
    time: int
    active: FrozenSet[str]
    cause: Optional[str] = None


@dataclass
class SignalHistory:
    intersection: str
    plan: SignalPlan
    entries: List[HistoryEntry] = field(default_factory=list)
    preemptions: List[PreemptionRequest] = field(default_factory=list)


class SignalController:
    """Fixed-cycle controller with preemption and (attack-only) override.

    At each tick boundary exactly one of these happens, in priority order:
    an active override is held; an active preemption is held or released;
    the oldest pending preemption is activated; the normal cycle advances.
    """

    def __init__(self, intersection: str, plan: SignalPlan, start_time: int = 0):
        self.intersection = intersection
        self.plan = plan
        self.index = 0
        self.ticks_in_phase = 0
        self.active: FrozenSet[str] = frozenset({plan.phases[0]})
        self.preempt: Optional[PreemptionRequest] = None
        self.preempt_hold = 0
        self.pending: Deque[PreemptionRequest] = deque()
        self.override: Optional[Override] = None
        self.history = SignalHistory(intersection, plan)
        self.history.entries.append(HistoryEntry(start_time, self.active))

    def request_preemption(self, req: PreemptionRequest, now: int) -> bool:
        """Queue a preemption; returns True if it is served immediately."""
        self.history.preemptions.append(req)
        if self.override is not None:
            req.blocked_by = self.override.cause
            self.pending.append(req)
            return False
        if self.preempt is not None:
            if self.preempt.phase == req.phase:
                req.served_at = now
                return True
            req.deferred = True
            self.pending.append(req)
            return False
        if self.pending:
            req.deferred = True
            self.pending.append(req)
            return False
        if self.active == frozenset({req.phase}):
            self._start_preemption(req, now)
            return True
        self.pending.append(req)
        return False

    def apply_override(self, override: Override, now: int) -> None:
        self.override = override
        for req in self.pending:
            if req.blocked_by is None:
                req.blocked_by = override.cause

    def _start_preemption(self, req: PreemptionRequest, now: int) -> None:
        self.preempt = req
        self.preempt_hold = self.plan.dwell(req.phase)
        self.active = frozenset({req.phase})
        if req.served_at is None:
            req.served_at = now

    def step(self, now: int) -> PhaseTransition:
        before = self.active
        reason = self._advance(now)
        cause = self.override.cause if reason == "override" and self.override else None
        self.history.entries.append(HistoryEntry(now, self.active, cause))
        return PhaseTransition(now, self.intersection, before, self.active, reason)

    def _advance(self, now: int) -> str:
        plan = self.plan
        if self.override is not None:
            if self.override.remaining > 0:
                self.override.remaining -= 1
                self.active = self.override.phases
                return "override"
            self.override = None
            if self.preempt is not None:
                self.active = frozenset({self.preempt.phase})
            else:
                self.active = frozenset({plan.phases[self.index]})
        if self.preempt is not None:
            self.preempt_hold -= 1
            if self.preempt_hold > 0:
                self.active = frozenset({self.preempt.phase})
                return "preempt-hold"
            self.index = plan.phase_index(self.preempt.phase)
            self.preempt = None
            if not self.pending:
                self.index = (self.index + 1) % len(plan.phases)
                self.ticks_in_phase = 0
                self.active = frozenset({plan.phases[self.index]})
                return "preempt-end"
        if self.pending:
            self._start_preemption(self.pending.popleft(), now)
            return "preempt"
        self.ticks_in_phase += 1
        if self.ticks_in_phase >= plan.dwell_ticks[self.index]:
            self.index = (self.index + 1) % len(plan.phases)
            self.ticks_in_phase = 0
            self.active = frozenset({plan.phases[self.index]})
            return "cycle"
        self.active = frozenset({plan.phases[self.index]})
        return "hold"


def signal_credential(intersection: str) -> str:
    """Shared secret between the Central Cloud signal service and an RSU."""
    return f"sigkey:{intersection}"


# ---------------------------------------------------------------------------
# Service packages
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PreemptionDecision:
    request_id: str
    intersection: str
    phase: str
    controller: Optional[str]
    requested_at: int
    deadline: int


@dataclass(frozen=True)
class ServedRoute:
    time: int
    requester: str
    src: str
    dst: str
    route: Route
    cause: Optional[str] = None


class CitsServices:
    """PM01, PS03, SU01 and TI03 over one Central Cloud database."""

    def __init__(self, topology: Topology, config: Optional[SimConfig] = None):
        self.topology = topology
        self.config = config or SimConfig()
        self.central = topology.central_cloud()
        self.db = CentralDb.from_topology(topology)
        self.truth = self.db.copy()
        self.enrolled = {e.device: e.proof for e in topology.emergency_devices}
        instances: Dict[str, int] = {}
        if self.central is not None:
            node = topology.node(self.central)
            for svc in MOBILE_CLOUD_SERVICES:
                instances[svc] = node.instances.get(svc, 1)
        self.mobile_cloud = MobileCloud(instances)
        self.controllers: Dict[str, SignalController] = {
            x: SignalController(x, plan) for x, plan in sorted(topology.road_graph.signals.items())
        }
        self.stale: set = set()
        self.served_routes: List[ServedRoute] = []
        # Provenance of attack-applied changes, keyed for the monitors.
        self.tamper_log: Dict[str, str] = {}
        self.registration_cause: Dict[str, str] = {}
        self.command_cause: Dict[str, str] = {}
        self.preemption_truth: Dict[str, bool] = {}
        self._preemptions = 0

    # -- helpers -----------------------------------------------------------

    def _kind(self, node_id: str) -> Optional[NodeKind]:
        return self.topology.node(node_id).kind if self.topology.has_node(node_id) else None

    def _has_db_write(self, capabilities: Iterable[Capability]) -> bool:
        return any(c.kind == "DbWrite" and c.target == self.central for c in capabilities)

    def _lot(self, lot: str) -> ParkingLot:
        try:
            return self.db.parking[lot]
        except KeyError:
            raise UnknownLot(lot) from None

    # -- PM01 parking space management -------------------------------------

    def pm01_ingest_occupancy(self, provider: str, lot: str, occupied: int,
                              capabilities: Iterable[Capability] = ()) -> Ack:
        record = self._lot(lot)
        if not 0 <= occupied <= record.capacity:
            raise OccupancyOutOfRange(f"{occupied} outside [0, {record.capacity}] for lot {lot}")
        if self._kind(provider) == NodeKind.EXTERNAL_PROVIDER:
            self.db.parking[lot] = replace(record, occupied=occupied)
            self.truth.parking[lot] = replace(self.truth.parking[lot], occupied=occupied)
            self.tamper_log.pop(f"parking/{lot}", None)
            return Ack(True, f"lot {lot} occupied={occupied}")
        if self._has_db_write(capabilities):
            self.db.parking[lot] = replace(record, occupied=occupied)
            return Ack(True, f"lot {lot} occupied={occupied} (unverified writer {provider})")
        return Ack(False, f"denied: {provider} is not a registered data provider")

    def pm01_query(self, requester: str, lot: str) -> ParkingInfo:
        record = self._lot(lot)
        return ParkingInfo(lot, record.capacity - record.occupied, record.price)

    # -- PS03 emergency vehicle preemption ---------------------------------

    def ps03_register_emergency(self, device: str, proof: Optional[str],
                                capabilities: Iterable[Capability] = ()) -> EmergencyRegistration:
        capabilities = set(capabilities)
        legit = proof is not None and self.enrolled.get(device) == proof
        if not legit and Capability("EmergencyRegistered", device) not in capabilities:
            raise InvalidProof(f"device {device!r} presented no valid enrollment proof")
        credential = f"cred:{device}:{len(self.db.registrations) + 1}"
        reg = EmergencyRegistration(device, credential, self.central or "", legit)
        self.db.registrations.append(reg)
        if legit:
            self.truth.registrations.append(reg)
        return reg

    def ps03_request_preemption(self, reg: EmergencyRegistration, at: str, approach: str,
                                now: int = 0) -> PreemptionDecision:
        if self.db.registration(reg.credential) is None:
            raise UnregisteredDevice(f"device {reg.device!r} is not registered")
        plan = self.topology.road_graph.signals.get(at)
        if plan is None:
            raise UnknownIntersection(f"{at!r} has no signal plan")
        phase = plan.phase_serving(approach)
        if phase is None:
            raise UnknownIntersection(f"{at!r} has no approach {approach!r}")
        self._preemptions += 1
        self.preemption_truth[f"pre:{self._preemptions}"] = reg.legitimate
        tick = self.config.tick_ms
        deadline = now + (plan.dwell(phase) + self.config.preemption_latency) * tick
        return PreemptionDecision(
            request_id=f"pre:{self._preemptions}",
            intersection=at,
            phase=phase,
            controller=plan.controller,
            requested_at=now,
            deadline=deadline,
        )

    def signal_preempt(self, decision: PreemptionDecision, credential: str, now: int) -> Ack:
        """Controller-side handling of a preemption command."""
        if credential != signal_credential(decision.intersection):
            return Ack(False, "rejected: bad signal credential")
        ctl = self.controllers[decision.intersection]
        req = PreemptionRequest(decision.request_id, decision.intersection, decision.phase,
                                decision.requested_at, decision.deadline,
                                legitimate=self.preemption_truth.get(decision.request_id, True))
        served = ctl.request_preemption(req, now)
        return Ack(True, "served" if served else "pending")

    def signal_override(self, intersection: str, command_id: str, mode: str, phases: Iterable[str],
                        duration_ticks: int, credential: str, now: int) -> Ack:
        ctl = self.controllers.get(intersection)
        if ctl is None:
            raise UnknownIntersection(intersection)
        if credential != signal_credential(intersection):
            return Ack(False, "rejected: bad signal credential")
        phases = frozenset(p for p in phases if p in ctl.plan.phases)
        if not phases or duration_ticks < 1:
            return Ack(False, "rejected: empty override")
        ctl.apply_override(Override(command_id, mode, phases, duration_ticks,
                                    self.command_cause.get(command_id)), now)
        return Ack(True, f"override {mode} {sorted(phases)} for {duration_ticks} ticks")

    def signal_controller_step(self, intersection: str, now: int = 0) -> PhaseTransition:
        return self.controllers[intersection].step(now)

    # -- SU01 connected vehicle monitoring ---------------------------------

    def su01_ingest_status(self, source: str, status: VehicleStatus) -> Ack:
        if self._kind(status.vehicle) != NodeKind.VEHICLE:
            raise UnknownVehicle(status.vehicle)
        if self._kind(source) not in (NodeKind.VEHICLE, NodeKind.ROADSIDE_UNIT, NodeKind.MOBILE_DEVICE):
            return Ack(False, f"denied: {source} may not report vehicle status")
        self.db.statuses[status.vehicle] = status
        self.truth.statuses[status.vehicle] = status
        self.stale.discard(status.vehicle)
        return Ack(True, f"{status.vehicle} at {status.position}")

    def su01_sweep(self, now: int) -> List[str]:
        """Flag vehicles whose last update is older than the staleness bound."""
        newly = []
        for vehicle, status in sorted(self.db.statuses.items()):
            if now - status.last_update > self.config.staleness_ms and vehicle not in self.stale:
                self.stale.add(vehicle)
                newly.append(vehicle)
        return newly

    # -- TI03 dynamic route guidance ---------------------------------------

    def ti03_ingest_incident(self, provider: str, src: str, dst: str, penalty: float,
                             capabilities: Iterable[Capability] = ()) -> Ack:
        if self.topology.road_graph.segment(src, dst) is None:
            raise UnknownSegment(segment_key(src, dst))
        if penalty < 0:
            raise NegativePenalty(f"penalty {penalty} < 0")
        key = segment_key(src, dst)
        if self._kind(provider) in (NodeKind.EXTERNAL_PROVIDER, NodeKind.RSU_CLOUD):
            self.db.incidents[key] = penalty
            self.truth.incidents[key] = penalty
            self.tamper_log.pop(f"incidents/{key}", None)
            return Ack(True, f"incident {key} penalty={penalty}")
        if self._has_db_write(capabilities):
            self.db.incidents[key] = penalty
            return Ack(True, f"incident {key} penalty={penalty} (unverified writer {provider})")
        return Ack(False, f"denied: {provider} is not a registered data provider")

    def ti03_compute_route(self, src: str, dst: str) -> Route:
        return compute_route(self.topology.road_graph, src, dst, self.db.incidents)

    def serve_route(self, requester: str, src: str, dst: str, now: int) -> Route:
        route = self.ti03_compute_route(src, dst)
        causes = [self.tamper_log[k] for k in sorted(self.tamper_log)
                  if k.startswith("incidents/")
                  and self.db.incidents.get(k[len("incidents/"):]) != self.truth.incidents.get(k[len("incidents/"):])]
        self.served_routes.append(ServedRoute(now, requester, src, dst, route, max(causes) if causes else None))
        return route

    # -- Mobile Cloud ------------------------------------------------------

    def mobile_cloud_dispatch(self, service: str, request=None) -> int:
        return self.mobile_cloud.dispatch(service, request)

    # -- attack-side writes (served state only) -----------------------------

    def tamper(self, table: str, key: str, value, fieldname: Optional[str] = None,
               cause: Optional[str] = None) -> None:
        if table == "parking":
            record = self._lot(key)
            self.db.parking[key] = replace(record, **{fieldname or "occupied": value})
        elif table == "incidents":
            src, _, dst = key.partition("->")
            if self.topology.road_graph.segment(src, dst) is None:
                raise UnknownSegment(key)
            self.db.incidents[key] = value
        elif table == "statuses":
            status = self.db.statuses.get(key)
            if status is None:
                raise UnknownVehicle(key)
            self.db.statuses[key] = replace(status, **{fieldname or "position": value})
        else:
            raise ValueError(f"unknown table {table!r}")
        if cause is not None:
            self.tamper_log[f"{table}/{key}"] = cause
