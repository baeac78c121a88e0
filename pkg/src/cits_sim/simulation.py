"""Wires services, workload and monitors onto an :class:`~cits_sim.engine.Engine`.

Node roles:

* Central Cloud: terminates every service request, dispatches it to a
  Mobile Cloud instance and answers over the network.
* RSU: hosts the signal controllers and accepts signal commands.
* Vehicles / mobile devices: originate periodic workload traffic.
* External providers: push parking occupancy and incident reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set

from .capability import Capability
from .engine import Engine, RunSummary, SimConfig, Timer, TraceRecord
from .errors import CitsError
from .messages import MsgType, decode_payload, encode_payload, msg_name, service_of
from .monitor import Alarm, Monitor, emit_report
from .pdu import All, Pdu, Preferred
from .services import (
    CitsServices,
    PreemptionDecision,
    VehicleStatus,
    signal_credential,
)
from .topology import Link, NodeKind, ProtocolKind, Topology

SIGNAL_ORDER = (ProtocolKind.SNMPV3, ProtocolKind.MQTT, ProtocolKind.INTERNET_IPV6, ProtocolKind.ITS_G5)
BACKEND_ORDER = (ProtocolKind.ITS_G5, ProtocolKind.MQTT, ProtocolKind.INTERNET_IPV6, ProtocolKind.SNMPV3)


@dataclass
class RunResult:
    scenario_id: Optional[str]
    topology_name: str
    seed: int
    horizon_ms: int
    summary: RunSummary
    trace: List[TraceRecord]
    alarms: List[Alarm]
    steps: list = field(default_factory=list)
    capability_timeline: list = field(default_factory=list)
    effects_applied: list = field(default_factory=list)
    services: Optional[CitsServices] = None

    def trace_jsonl(self) -> str:
        return "".join(rec.to_json() + "\n" for rec in self.trace)

    def report(self) -> dict:
        return emit_report(self)

    def alarms_of(self, kind: str) -> List[Alarm]:
        return [a for a in self.alarms if a.kind == kind]


class Simulation:
    def __init__(self, topology: Topology, config: Optional[SimConfig] = None):
        self.topology = topology
        self.config = config or SimConfig()
        self.engine = Engine(topology, self.config)
        self.services = CitsServices(topology, self.config)
        self.monitor = Monitor(self.services, self.engine)
        self.central = topology.central_cloud()
        self.attacker: Optional[str] = None
        self.attacker_caps: Set[Capability] = set()
        self.credentials: Dict[str, str] = {}
        self.positions = {v.vehicle: v.position for v in topology.workload.vehicles}
        self._provider_view = {lot.id: lot.occupied for lot in topology.parking_lots}
        self._install()

    # -- public ---------------------------------------------------------------

    def capabilities_of(self, node: str) -> Set[Capability]:
        return self.attacker_caps if node == self.attacker else set()

    def send(self, src: str, dst: str, msg_type: MsgType, body: dict, policy=None) -> bool:
        try:
            self.engine.send(src, dst, Pdu(int(msg_type), src, dst, encode_payload(body)), policy)
        except CitsError as exc:
            self.engine.record(src, "internal", "ERROR", f"{msg_type.name}: {exc}")
            return False
        return True

    def run(self, until: Optional[int] = None) -> RunResult:
        summary = self.engine.run(until)
        return RunResult(
            scenario_id=None,
            topology_name=self.topology.name,
            seed=self.config.seed,
            horizon_ms=self.config.horizon_ms,
            summary=summary,
            trace=self.engine.trace,
            alarms=self.monitor.alarms,
            services=self.services,
        )

    # -- setup ----------------------------------------------------------------

    def _install(self) -> None:
        eng = self.engine
        t = self.topology
        for node in t.nodes:
            if node.kind == NodeKind.CENTRAL_CLOUD and node.id == self.central:
                eng.on_receive(node.id, self._on_central)
            elif node.kind == NodeKind.ROADSIDE_UNIT:
                eng.on_receive(node.id, self._on_rsu)
            elif node.kind in (NodeKind.VEHICLE, NodeKind.MOBILE_DEVICE):
                eng.on_receive(node.id, self._on_vehicle)

        eng.on_timer("tick", self._on_tick)
        eng.on_timer("status", self._on_status)
        eng.on_timer("parking-report", self._on_parking_report)
        eng.on_timer("occupancy-change", self._on_occupancy_change)
        eng.on_timer("parking-query", self._on_parking_query)
        eng.on_timer("route-request", self._on_route_request)
        eng.on_timer("incident", self._on_incident)
        eng.on_timer("register", self._on_register)
        eng.on_timer("preemption", self._on_preemption)

        horizon = self.config.horizon_ms
        w = t.workload
        if self.central is None:
            eng.schedule(self.config.tick_ms, Timer("", "tick"))
            return
        eng.schedule(self.config.tick_ms, Timer("", "tick"))
        for v in w.vehicles:
            self._schedule_periodic(v.vehicle, "status", w.status_period_ms + v.status_offset_ms,
                                    w.status_period_ms, 1, jitter=w.jitter_ms)
        providers = sorted({lot.provider for lot in t.parking_lots if lot.provider})
        for p in providers:
            self._schedule_periodic(p, "parking-report", w.parking_report_period_ms, w.parking_report_period_ms, 1)
        for i, ch in enumerate(w.occupancy_changes):
            if ch.at_ms <= horizon:
                eng.schedule(ch.at_ms, Timer("", "occupancy-change", i))
        for i, q in enumerate(w.parking_queries):
            self._schedule_periodic(q.requester, "parking-query", q.offset_ms, q.period_ms, i)
        for i, r in enumerate(w.route_requests):
            self._schedule_periodic(r.requester, "route-request", r.offset_ms, r.period_ms, i)
        for i, inc in enumerate(w.incidents):
            if inc.at_ms <= horizon:
                eng.schedule(inc.at_ms, Timer(inc.provider, "incident", i))
        for i, reg in enumerate(w.registrations):
            if reg.at_ms <= horizon:
                eng.schedule(reg.at_ms, Timer(reg.device, "register", i))
        for i, p in enumerate(w.preemptions):
            self._schedule_periodic(p.device, "preemption", p.offset_ms, p.period_ms, i)

    def _schedule_periodic(self, node: str, tag: str, first: int, period: int, ref, jitter: int = 0) -> None:
        # data = (plan ref, nominal time, period, jitter); jitter shifts only the firing time.
        at = first + self.engine.jitter(jitter)
        if at <= self.config.horizon_ms:
            self.engine.schedule(at, Timer(node, tag, (ref, first, period, jitter)))

    def _reschedule(self, timer: Timer) -> None:
        ref, nominal, period, jitter = timer.data
        self._schedule_periodic(timer.node, timer.tag, nominal + period, period, ref, jitter)

    # -- timers ---------------------------------------------------------------

    def _on_tick(self, eng: Engine, timer: Timer) -> None:
        now = eng.now
        for x in sorted(self.services.controllers):
            tr = self.services.signal_controller_step(x, now)
            if tr.before != tr.after:
                node = self.topology.signal_controller_of(x) or "signal"
                eng.record(node, "internal", "SIGNAL",
                           f"{x} {'+'.join(sorted(tr.before))} -> {'+'.join(sorted(tr.after))} ({tr.reason})")
        for vehicle in self.services.su01_sweep(now):
            eng.record(self.central or "", "internal", "SU01", f"{vehicle} status stale")
        self.monitor.tick(now)
        nxt = now + self.config.tick_ms
        if nxt <= self.config.horizon_ms:
            eng.schedule(nxt, Timer("", "tick"))

    def _on_status(self, eng: Engine, timer: Timer) -> None:
        vehicle = timer.node
        profile = next(v for v in self.topology.workload.vehicles if v.vehicle == vehicle)
        self.send(vehicle, self.central, MsgType.VEHICLE_STATUS,
                  {"vehicle": vehicle, "position": profile.position, "speed": profile.speed},
                  Preferred(BACKEND_ORDER))
        self._reschedule(timer)

    def _on_parking_report(self, eng: Engine, timer: Timer) -> None:
        for lot in self.topology.parking_lots:
            if lot.provider == timer.node:
                self.send(timer.node, self.central, MsgType.PARKING_OCCUPANCY_UPDATE,
                          {"lot": lot.id, "occupied": self._provider_view[lot.id]})
        self._reschedule(timer)

    def _on_occupancy_change(self, eng: Engine, timer: Timer) -> None:
        ch = self.topology.workload.occupancy_changes[timer.data]
        self._provider_view[ch.lot] = ch.occupied
        provider = self.topology.lot(ch.lot).provider
        if provider:
            self.send(provider, self.central, MsgType.PARKING_OCCUPANCY_UPDATE,
                      {"lot": ch.lot, "occupied": ch.occupied})

    def _on_parking_query(self, eng: Engine, timer: Timer) -> None:
        q = self.topology.workload.parking_queries[timer.data[0]]
        self.send(q.requester, self.central, MsgType.PARKING_QUERY, {"lot": q.lot}, Preferred(BACKEND_ORDER))
        self._reschedule(timer)

    def _on_route_request(self, eng: Engine, timer: Timer) -> None:
        r = self.topology.workload.route_requests[timer.data[0]]
        self.send(r.requester, self.central, MsgType.ROUTE_REQUEST, {"from": r.src, "to": r.dst},
                  Preferred(BACKEND_ORDER))
        self._reschedule(timer)

    def _on_incident(self, eng: Engine, timer: Timer) -> None:
        inc = self.topology.workload.incidents[timer.data]
        self.send(inc.provider, self.central, MsgType.INCIDENT_REPORT,
                  {"from": inc.src, "to": inc.dst, "penalty": inc.penalty})

    def _on_register(self, eng: Engine, timer: Timer) -> None:
        device = timer.node
        proof = next((e.proof for e in self.topology.emergency_devices if e.device == device), None)
        self.send(device, self.central, MsgType.EMERGENCY_REGISTER, {"proof": proof}, All())

    def _on_preemption(self, eng: Engine, timer: Timer) -> None:
        p = self.topology.workload.preemptions[timer.data[0]]
        credential = self.credentials.get(p.device)
        if credential is None:
            eng.record(p.device, "internal", "PS03", "no emergency credential; preemption not requested")
        else:
            self.send(p.device, self.central, MsgType.PREEMPTION_REQUEST,
                      {"credential": credential, "intersection": p.intersection, "approach": p.approach},
                      All())
        self._reschedule(timer)

    # -- receive handlers -----------------------------------------------------

    def _on_central(self, eng: Engine, pdu: Pdu, link: Link) -> None:
        try:
            body = decode_payload(pdu.payload)
        except ValueError:
            eng.record(self.central, "internal", "ERROR", f"unparseable payload from {pdu.source}")
            return
        service = service_of(pdu.msg_type)
        try:
            instance = self.services.mobile_cloud_dispatch(service, pdu)
        except CitsError as exc:
            eng.record(self.central, "internal", "ERROR", f"{msg_name(pdu.msg_type)}: {exc}")
            return
        tag = f"{service}#{instance}"
        try:
            self._handle_central(eng, pdu, body, tag)
        except CitsError as exc:
            eng.record(self.central, "internal", service.upper(), f"{tag} error {type(exc).__name__}: {exc}")

    def _handle_central(self, eng: Engine, pdu: Pdu, body: dict, tag: str) -> None:
        svc = self.services
        src = pdu.source
        cc = self.central
        mt = pdu.msg_type
        now = eng.now
        caps = self.capabilities_of(src)

        if mt == MsgType.PARKING_OCCUPANCY_UPDATE:
            ack = svc.pm01_ingest_occupancy(src, body["lot"], body["occupied"], caps)
            eng.record(cc, "internal", "PM01", f"{tag} {ack.detail}")
        elif mt == MsgType.PARKING_QUERY:
            info = svc.pm01_query(src, body["lot"])
            eng.record(cc, "internal", "PM01", f"{tag} {src} lot {info.lot} available={info.available}")
            self.send(cc, src, MsgType.PARKING_RESPONSE,
                      {"lot": info.lot, "available": info.available, "price": info.price})
        elif mt == MsgType.EMERGENCY_REGISTER:
            reg = svc.ps03_register_emergency(src, body.get("proof"), caps)
            eng.record(cc, "internal", "PS03", f"{tag} registered {src}")
            self.send(cc, src, MsgType.EMERGENCY_REGISTER_ACK, {"credential": reg.credential})
        elif mt == MsgType.PREEMPTION_REQUEST:
            reg = svc.db.registration(body.get("credential", ""))
            if reg is None or reg.device != src:
                eng.record(cc, "internal", "PS03", f"{tag} preemption from unregistered {src} refused")
                self.send(cc, src, MsgType.PREEMPTION_RESPONSE, {"accepted": False})
                return
            decision = svc.ps03_request_preemption(reg, body["intersection"], body["approach"], now)
            eng.record(cc, "internal", "PS03",
                       f"{tag} preempt {decision.intersection} phase {decision.phase} for {src}")
            if decision.controller:
                self.send(cc, decision.controller, MsgType.SIGNAL_PREEMPT_COMMAND, {
                    "request_id": decision.request_id,
                    "intersection": decision.intersection,
                    "phase": decision.phase,
                    "requested_at": decision.requested_at,
                    "deadline": decision.deadline,
                    "credential": signal_credential(decision.intersection),
                }, Preferred(SIGNAL_ORDER))
            response = {"accepted": True, "request_id": decision.request_id}
            position = self.positions.get(src)
            if position is not None:
                route = svc.ti03_compute_route(position, decision.intersection)
                response["route"] = list(route.path)
            self.send(cc, src, MsgType.PREEMPTION_RESPONSE, response)
        elif mt == MsgType.VEHICLE_STATUS:
            status = VehicleStatus(body["vehicle"], body["position"], body["speed"], now)
            ack = svc.su01_ingest_status(src, status)
            eng.record(cc, "internal", "SU01", f"{tag} {ack.detail}")
        elif mt == MsgType.INCIDENT_REPORT:
            ack = svc.ti03_ingest_incident(src, body["from"], body["to"], body["penalty"], caps)
            eng.record(cc, "internal", "TI03", f"{tag} {ack.detail}")
        elif mt == MsgType.ROUTE_REQUEST:
            route = svc.serve_route(src, body["from"], body["to"], now)
            path = "-".join(route.path) if route.reachable else "unreachable"
            eng.record(cc, "internal", "TI03", f"{tag} route {body['from']}->{body['to']} for {src}: {path}")
            self.send(cc, src, MsgType.ROUTE_RESPONSE,
                      {"path": list(route.path), "cost": route.cost if route.reachable else None})
        else:
            eng.record(cc, "internal", "ERROR", f"unexpected {msg_name(mt)} from {src}")

    def _on_rsu(self, eng: Engine, pdu: Pdu, link: Link) -> None:
        rsu = pdu.dest
        try:
            body = decode_payload(pdu.payload)
        except ValueError:
            return
        x = body.get("intersection")
        if self.topology.signal_controller_of(x) != rsu:
            eng.record(rsu, "internal", "SIGNAL", f"command for {x} not controlled here; ignored")
            return
        if pdu.msg_type == MsgType.SIGNAL_PREEMPT_COMMAND:
            decision = PreemptionDecision(body["request_id"], x, body["phase"], rsu,
                                          body["requested_at"], body["deadline"])
            ack = self.services.signal_preempt(decision, body.get("credential", ""), eng.now)
            eng.record(rsu, "internal", "SIGNAL", f"{x} preempt {body['phase']}: {ack.detail}")
        elif pdu.msg_type == MsgType.SIGNAL_OVERRIDE_COMMAND:
            ack = self.services.signal_override(x, body.get("command_id", ""), body.get("mode", ""),
                                                body.get("phases", []), int(body.get("duration_ticks", 0)),
                                                body.get("credential", ""), eng.now)
            eng.record(rsu, "internal", "SIGNAL", f"{x} override command: {ack.detail}")

    def _on_vehicle(self, eng: Engine, pdu: Pdu, link: Link) -> None:
        if pdu.msg_type == MsgType.EMERGENCY_REGISTER_ACK:
            body = decode_payload(pdu.payload)
            if "credential" in body:
                self.credentials[pdu.dest] = body["credential"]


def run_simulation(topology: Topology, config: Optional[SimConfig] = None) -> RunResult:
    """Un-attacked run of the workload declared in ``topology``."""
    return Simulation(topology, config).run()
