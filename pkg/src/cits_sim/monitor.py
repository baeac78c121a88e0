"""Ground-truth-aware detectors and run reports.

Each ``check_*`` function is pure: give it served state plus the shadow
ground truth and it returns the alarms that state justifies. :class:`Monitor`
calls them inline at every engine tick and deduplicates, so an alarm is
raised once per divergence episode rather than once per tick.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

from .services import (
    CentralDb,
    EmergencyRegistration,
    ServedRoute,
    SignalHistory,
    compute_route,
    path_cost,
)
from .topology import RoadGraph

ALARM_KINDS = ("IntegrityViolation", "ConflictingGreen", "PreemptionDenial", "RogueEmergency", "RouteSuboptimal")


@dataclass(frozen=True)
class Alarm:
    time: int
    kind: str
    subject: str
    details: str
    cause: Optional[str] = None
    id: str = ""

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "time": self.time,
            "kind": self.kind,
            "subject": self.subject,
            "details": self.details,
            "cause": self.cause,
        }


# ---------------------------------------------------------------------------
# Pure checkers
# ---------------------------------------------------------------------------

def check_db_integrity(stored: CentralDb, ground_truth: CentralDb, now: int = 0,
                       provenance: Optional[Dict[str, str]] = None) -> List[Alarm]:
    """One IntegrityViolation per divergent record, keyed ``table/id``.

    Registrations are left to :func:`check_emergency_auth`.
    """
    provenance = provenance or {}
    alarms = []

    def diverged(subject, details):
        alarms.append(Alarm(now, "IntegrityViolation", subject, details, provenance.get(subject)))

    for lot in sorted(set(stored.parking) | set(ground_truth.parking)):
        s, g = stored.parking.get(lot), ground_truth.parking.get(lot)
        if s != g:
            diverged(f"parking/{lot}", f"stored {_lot_repr(s)} vs truth {_lot_repr(g)}")
    for seg in sorted(set(stored.incidents) | set(ground_truth.incidents)):
        s, g = stored.incidents.get(seg, 0), ground_truth.incidents.get(seg, 0)
        if s != g:
            diverged(f"incidents/{seg}", f"stored penalty {s} vs truth {g}")
    for veh in sorted(set(stored.statuses) | set(ground_truth.statuses)):
        s, g = stored.statuses.get(veh), ground_truth.statuses.get(veh)
        if s != g:
            diverged(f"statuses/{veh}", "vehicle status differs from last legitimate report")
    return alarms


def _lot_repr(lot) -> str:
    if lot is None:
        return "missing"
    return f"occupied={lot.occupied}/{lot.capacity} price={lot.price}"


def check_signal_safety(history: SignalHistory, now: Optional[int] = None, start: int = 0) -> List[Alarm]:
    """ConflictingGreen per maximal run of ticks with two conflicting phases
    active; PreemptionDenial per legitimate, non-deferred preemption that was
    not served by its deadline (as of ``now``)."""
    plan = history.plan
    alarms = []
    entries = history.entries
    prev_conflict = start > 0 and _conflicting_pair(plan, entries[start - 1].active) is not None
    for entry in entries[start:]:
        pair = _conflicting_pair(plan, entry.active)
        if pair is not None and not prev_conflict:
            alarms.append(Alarm(entry.time, "ConflictingGreen", f"signal/{history.intersection}",
                                f"phases {pair[0]} and {pair[1]} green together", entry.cause))
        prev_conflict = pair is not None
    if now is None:
        now = entries[-1].time if entries else 0
    for req in history.preemptions:
        if req.deferred or not req.legitimate:
            continue
        late = req.served_at is not None and req.served_at > req.deadline
        missing = req.served_at is None and now > req.deadline
        if late or missing:
            alarms.append(Alarm(
                now if missing else req.served_at, "PreemptionDenial", f"preemption/{req.request_id}",
                f"phase {req.phase} at {req.intersection} not served by {req.deadline}",
                req.blocked_by))
    return alarms


def _conflicting_pair(plan, active):
    phases = sorted(active)
    for i, p in enumerate(phases):
        for q in phases[i + 1:]:
            if plan.conflicts(p, q):
                return p, q
    return None


def check_emergency_auth(registrations: Iterable[EmergencyRegistration], now: int = 0,
                         provenance: Optional[Dict[str, str]] = None) -> List[Alarm]:
    provenance = provenance or {}
    return [
        Alarm(now, "RogueEmergency", f"emergency/{reg.device}",
              f"registration {reg.credential} was not issued through enrollment",
              provenance.get(reg.credential))
        for reg in registrations if not reg.legitimate
    ]


def check_route_optimality(served: Iterable[ServedRoute], graph: RoadGraph,
                           truth_incidents: Optional[Dict[str, float]] = None) -> List[Alarm]:
    """RouteSuboptimal when a served route costs more, on ground-truth costs,
    than the true optimum. Path identity is not compared."""
    alarms = []
    for rec in served:
        best = compute_route(graph, rec.src, rec.dst, truth_incidents)
        actual = path_cost(graph, rec.route.path, truth_incidents) if rec.route.reachable else float("inf")
        if actual > best.cost:
            alarms.append(Alarm(rec.time, "RouteSuboptimal", f"route/{rec.requester}/{rec.src}->{rec.dst}",
                                f"served {'-'.join(rec.route.path) or 'unreachable'} cost {actual} "
                                f"vs optimum {best.cost}", rec.cause))
    return alarms


# ---------------------------------------------------------------------------
# Inline monitor
# ---------------------------------------------------------------------------

class Monitor:
    """Runs the checkers at engine ticks and records each new alarm in the trace."""

    def __init__(self, services, engine):
        self.services = services
        self.engine = engine
        self.alarms: List[Alarm] = []
        self._active_integrity: set = set()
        self._active_routes: set = set()
        self._seen_keys: set = set()
        self._reg_seen = 0
        self._route_seen = 0
        self._signal_seen: Dict[str, int] = {}

    def _raise(self, alarm: Alarm) -> Alarm:
        alarm = Alarm(self.engine.now, alarm.kind, alarm.subject, alarm.details, alarm.cause,
                      id=f"A{len(self.alarms) + 1}")
        self.alarms.append(alarm)
        self.engine.record("monitor", "internal", "ALARM",
                           f"{alarm.kind} {alarm.subject}: {alarm.details}", alarm=alarm.id)
        return alarm

    def tick(self, now: int) -> List[Alarm]:
        svc = self.services
        new: List[Alarm] = []

        current = {a.subject: a for a in check_db_integrity(svc.db, svc.truth, now, svc.tamper_log)}
        for subject in sorted(current):
            if subject not in self._active_integrity:
                new.append(self._raise(current[subject]))
        self._active_integrity = set(current)

        regs = svc.db.registrations
        for alarm in check_emergency_auth(regs[self._reg_seen:], now, svc.registration_cause):
            new.append(self._raise(alarm))
        self._reg_seen = len(regs)

        routes = svc.served_routes[self._route_seen:]
        self._route_seen = len(svc.served_routes)
        graph = svc.topology.road_graph
        for rec in routes:
            found = check_route_optimality([rec], graph, svc.truth.incidents)
            subject = f"route/{rec.requester}/{rec.src}->{rec.dst}"
            if found:
                if subject not in self._active_routes:
                    new.append(self._raise(found[0]))
                self._active_routes.add(subject)
            else:
                self._active_routes.discard(subject)

        for x, ctl in sorted(svc.controllers.items()):
            start = self._signal_seen.get(x, 0)
            for alarm in check_signal_safety(ctl.history, now, start):
                key = (alarm.kind, alarm.subject, alarm.time if alarm.kind == "ConflictingGreen" else 0)
                if key not in self._seen_keys:
                    self._seen_keys.add(key)
                    new.append(self._raise(alarm))
            self._signal_seen[x] = len(ctl.history.entries)
        return new


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def emit_report(run) -> dict:
    """Machine-readable report for a :class:`~cits_sim.simulation.RunResult`
    (or ``None`` for an empty run)."""
    steps = list(getattr(run, "steps", []) or [])
    alarms = list(getattr(run, "alarms", []) or [])
    caps = list(getattr(run, "capability_timeline", []) or [])
    summary = getattr(run, "summary", None)
    verdicts = Counter(s.verdict for s in steps)
    return {
        "scenario": getattr(run, "scenario_id", None),
        "topology": getattr(run, "topology_name", None),
        "seed": getattr(run, "seed", None),
        "horizon_ms": getattr(run, "horizon_ms", None),
        "steps": [s.to_dict() for s in steps],
        "capabilities": [c.to_dict() for c in caps],
        "alarms": [a.to_dict() for a in alarms],
        "counts": {
            "steps": len(steps),
            "succeeded": verdicts.get("Succeeded", 0),
            "precondition_failed": verdicts.get("PreconditionFailed", 0),
            "not_reached": verdicts.get("NotReached", 0),
            "alarms": len(alarms),
            "alarms_by_kind": {k: sum(1 for a in alarms if a.kind == k) for k in ALARM_KINDS},
        },
        "engine": summary.to_dict() if summary is not None else {
            "events_processed": 0, "final_clock": 0, "frames_sent": 0, "frames_delivered": 0,
            "frames_duplicate": 0, "frames_dropped": 0, "frames_in_flight": 0,
        },
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


def report_text(report: dict) -> str:
    lines = [f"scenario: {report['scenario'] or '(none)'}  topology: {report['topology'] or '-'}  "
             f"seed: {report['seed']}  horizon: {report['horizon_ms']} ms"]
    for s in report["steps"]:
        extra = f" [{s['failed_atom']}]" if s.get("failed_atom") else ""
        lines.append(f"  step {s['step']} {s['cve']} @{s['at_ms']}ms: {s['verdict']}{extra}")
    counts = report["counts"]
    lines.append(f"alarms: {counts['alarms']}")
    for a in report["alarms"]:
        cause = f" <- {a['cause']}" if a["cause"] else ""
        lines.append(f"  {a['id']} t={a['time']} {a['kind']} {a['subject']}{cause}")
    eng = report["engine"]
    lines.append(f"events: {eng['events_processed']}  frames sent/delivered/dup: "
                 f"{eng['frames_sent']}/{eng['frames_delivered']}/{eng['frames_duplicate']}")
    return "\n".join(lines) + "\n"
