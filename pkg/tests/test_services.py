import itertools
import math

import pytest
from hypothesis import given, settings, strategies as st

from cits_sim.capability import Capability
from cits_sim.engine import SimConfig
from cits_sim.errors import (
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
from cits_sim.services import (
    CitsServices,
    EmergencyRegistration,
    MobileCloud,
    Override,
    PreemptionRequest,
    SignalController,
    VehicleStatus,
    compute_route,
    path_cost,
)
from cits_sim.fixtures import fixture_path
from cits_sim.topology import RoadGraph, Segment, SignalPlan, load_topology

from oracles import brute_route

DBW = Capability("DbWrite", "CC-1")


@pytest.fixture
def svc(scenario2_topology):
    return CitsServices(scenario2_topology)


# -- PM01 ----------------------------------------------------------------------

def test_occupancy_direct_write(svc):
    assert svc.pm01_ingest_occupancy("EXT-1", "P1", 4).accepted
    assert svc.db.parking["P1"].occupied == 4 == svc.truth.parking["P1"].occupied
    assert svc.pm01_query("MOB-1", "P1").available == 6


def test_occupancy_out_of_range(svc):
    with pytest.raises(OccupancyOutOfRange):
        svc.pm01_ingest_occupancy("EXT-1", "P1", 11)
    with pytest.raises(UnknownLot):
        svc.pm01_ingest_occupancy("EXT-1", "P9", 1)
    with pytest.raises(UnknownLot):
        svc.pm01_query("MOB-1", "P9")


def test_attacker_needs_db_write(svc):
    ack = svc.pm01_ingest_occupancy("ATK-1", "P1", 0)
    assert not ack.accepted and "denied" in ack.detail
    assert svc.db.parking["P1"].occupied == 8
    assert svc.pm01_ingest_occupancy("ATK-1", "P1", 0, {DBW}).accepted
    assert svc.db.parking["P1"].occupied == 0
    assert svc.truth.parking["P1"].occupied == 8


def test_tampered_availability(svc):
    svc.pm01_ingest_occupancy("EXT-1", "P1", 10)
    svc.tamper("parking", "P1", 0, "occupied", cause="S1.2")
    assert svc.pm01_query("MOB-1", "P1").available == 10
    assert svc.truth.parking["P1"].occupied == 10


@given(st.integers(0, 10))
def test_availability_is_capacity_minus_stored(occupied):
    svc = CitsServices(load_topology(fixture_path("reference.json")))
    svc.tamper("parking", "P1", occupied)
    lot = svc.db.parking["P1"]
    assert svc.pm01_query("VEH-1", "P1").available == lot.capacity - lot.occupied


# -- PS03 ----------------------------------------------------------------------

def test_enrolled_registration(svc):
    reg = svc.ps03_register_emergency("AMB-1", "enroll:AMB-1")
    assert reg.legitimate and reg.issued_by == "CC-1"
    assert svc.truth.registrations == [reg]


def test_attacker_registration(svc):
    with pytest.raises(InvalidProof):
        svc.ps03_register_emergency("ATK-1", None)
    with pytest.raises(InvalidProof):
        svc.ps03_register_emergency("ATK-1", "enroll:AMB-1")
    reg = svc.ps03_register_emergency("ATK-1", None, {Capability("EmergencyRegistered", "ATK-1")})
    assert not reg.legitimate
    assert reg in svc.db.registrations and reg not in svc.truth.registrations


def test_preemption_decision_and_errors(svc):
    reg = svc.ps03_register_emergency("AMB-1", "enroll:AMB-1")
    d = svc.ps03_request_preemption(reg, "X1", "N", now=1000)
    assert (d.phase, d.controller) == ("NS", "RSU-1")
    assert d.deadline == 1000 + (3 + 2) * 1000
    with pytest.raises(UnknownIntersection):
        svc.ps03_request_preemption(reg, "X2", "N")
    ghost = EmergencyRegistration("VEH-1", "cred:none", "CC-1", True)
    with pytest.raises(UnregisteredDevice):
        svc.ps03_request_preemption(ghost, "X1", "N")


def _plan(dwell=3):
    return SignalPlan(phases=("NS", "EW"), serves={"NS": frozenset("NS"), "EW": frozenset("EW")},
                      conflict=((False, True), (True, False)), dwell_ticks=(dwell, dwell))


def test_cycle_advances_after_dwell():
    ctl = SignalController("X", _plan(3))
    reasons = [ctl.step(t).reason for t in (1, 2, 3)]
    assert reasons == ["hold", "hold", "cycle"]
    assert ctl.active == {"EW"}


def test_pending_preemption_activates_at_next_tick():
    ctl = SignalController("X", _plan(3))
    req = PreemptionRequest("p", "X", "EW", 0, 5)
    assert not ctl.request_preemption(req, 0)
    tr = ctl.step(1)
    assert tr.reason == "preempt" and ctl.active == {"EW"} and req.served_at == 1


def test_preemption_on_active_phase_is_immediate():
    ctl = SignalController("X", _plan(3))
    req = PreemptionRequest("p", "X", "NS", 0, 5)
    assert ctl.request_preemption(req, 0)
    assert req.served_at == 0


def test_simultaneous_conflicting_preemptions_first_wins():
    ctl = SignalController("X", _plan(3))
    a = PreemptionRequest("a", "X", "EW", 0, 5)
    b = PreemptionRequest("b", "X", "NS", 0, 5)
    ctl.request_preemption(a, 0)
    ctl.request_preemption(b, 0)
    ctl.step(1)
    assert a.served_at == 1 and not a.deferred
    assert b.deferred and b.served_at is None
    for t in range(2, 6):
        ctl.step(t)
    assert b.served_at is not None


def test_preemption_latency_bound_in_service(svc):
    # AMB-1 at X1 approach N while E/W is green: NS active within 2 ticks.
    ctl = svc.controllers["X1"]
    for t in (1000, 2000, 3000):
        ctl.step(t)
    assert ctl.active == {"EW"}
    reg = svc.ps03_register_emergency("AMB-1", "enroll:AMB-1")
    d = svc.ps03_request_preemption(reg, "X1", "N", now=3100)
    assert svc.signal_preempt(d, "sigkey:X1", 3100).accepted
    ctl.step(4000)
    assert ctl.active == {"NS"}


def test_signal_commands_need_the_credential(svc):
    assert not svc.signal_override("X1", "c", "dual-green", ["NS", "EW"], 3, "forged", 0).accepted
    assert svc.signal_override("X1", "c", "dual-green", ["NS", "EW"], 3, "sigkey:X1", 0).accepted
    svc.signal_controller_step("X1", 1000)
    assert svc.controllers["X1"].active == {"NS", "EW"}


def test_override_blocks_then_releases():
    ctl = SignalController("X", _plan(3))
    ctl.apply_override(Override("c", "hold", frozenset({"EW"}), 2, "S.3"), 0)
    req = PreemptionRequest("p", "X", "NS", 0, 3)
    ctl.request_preemption(req, 0)
    assert req.blocked_by == "S.3"
    assert [ctl.step(t).reason for t in (1, 2, 3)] == ["override", "override", "preempt"]
    assert req.served_at == 3


@st.composite
def plans(draw):
    n = draw(st.integers(2, 4))
    phases = tuple(f"P{i}" for i in range(n))
    conflict = [[False] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            conflict[i][j] = conflict[j][i] = draw(st.booleans())
    dwell = tuple(draw(st.lists(st.integers(1, 4), min_size=n, max_size=n)))
    return SignalPlan(phases=phases, serves={p: frozenset({p.lower()}) for p in phases},
                      conflict=tuple(map(tuple, conflict)), dwell_ticks=dwell)


@settings(max_examples=150, deadline=None)
@given(plans(), st.lists(st.tuples(st.integers(0, 60), st.integers(0, 3)), max_size=12))
def test_controller_never_activates_conflicting_phases(plan, arrivals):
    ctl = SignalController("X", plan)
    by_tick = {}
    for t, p in arrivals:
        by_tick.setdefault(t, []).append(plan.phases[p % len(plan.phases)])
    n = 0
    for tick in range(1, 80):
        for phase in by_tick.get(tick, []):
            n += 1
            ctl.request_preemption(PreemptionRequest(f"r{n}", "X", phase, tick, tick + plan.dwell(phase) + 2), tick)
        ctl.step(tick)
        active = sorted(ctl.active)
        assert len(active) == 1
        assert not any(plan.conflicts(a, b) for a, b in itertools.combinations(active, 2))
    # Liveness: a request that found no competitor is served within dwell + 2 ticks.
    for req in ctl.history.preemptions:
        if not req.deferred and req.requested_at <= 70:
            assert req.served_at is not None and req.served_at <= req.deadline


# -- SU01 ----------------------------------------------------------------------

def test_status_and_staleness(svc):
    svc.su01_ingest_status("VEH-1", VehicleStatus("VEH-1", "X1", 10.0, 500))
    assert svc.db.statuses["VEH-1"].last_update == 500
    assert svc.su01_sweep(500 + 5000) == []
    assert svc.su01_sweep(500 + 5000 + 1) == ["VEH-1"]
    assert svc.su01_sweep(500 + 5000 + 2) == []
    with pytest.raises(UnknownVehicle):
        svc.su01_ingest_status("VEH-1", VehicleStatus("GHOST", "X1", 1.0, 0))
    assert not svc.su01_ingest_status("EXT-1", VehicleStatus("VEH-1", "X1", 1.0, 0)).accepted


# -- TI03 ----------------------------------------------------------------------

def _graph(edges):
    names = sorted({a for a, _, _ in edges} | {b for _, b, _ in edges})
    return RoadGraph(intersections=tuple(names), segments=tuple(Segment(a, b, c) for a, b, c in edges))


def test_line_graph():
    r = compute_route(_graph([("A", "B", 1), ("B", "C", 1)]), "A", "C")
    assert (list(r.path), r.cost) == (["A", "B", "C"], 2)


def test_incident_detour():
    g = _graph([("A", "B", 1), ("B", "C", 1), ("A", "D", 2), ("D", "C", 3)])
    assert list(compute_route(g, "A", "C").path) == ["A", "B", "C"]
    r = compute_route(g, "A", "C", {"B->C": 100})
    assert list(r.path) == ["A", "D", "C"] and r.cost == 5
    assert (r.cost, list(r.path)) == brute_route([(s.src, s.dst, s.cost) for s in g.segments], "A", "C",
                                                 {"B->C": 100})


def test_unreachable_and_unknown():
    g = _graph([("A", "B", 1), ("C", "D", 1)])
    r = compute_route(g, "A", "D")
    assert not r.reachable and math.isinf(r.cost)
    with pytest.raises(UnknownIntersection):
        compute_route(g, "A", "Z")


def test_fixture_graph_routes_equal_enumeration(reference):
    g = reference.road_graph
    segs = [(s.src, s.dst, s.cost) for s in g.segments]
    for a in g.intersections:
        for b in g.intersections:
            r = compute_route(g, a, b)
            assert (r.cost, list(r.path)) == brute_route(segs, a, b)


def test_incident_ingest(svc):
    assert svc.ti03_ingest_incident("EXT-1", "X2", "X3", 5).accepted
    assert svc.truth.incidents["X2->X3"] == 5
    assert path_cost(svc.topology.road_graph, ["X1", "X2", "X3"], svc.db.incidents) == 7
    with pytest.raises(NegativePenalty):
        svc.ti03_ingest_incident("EXT-1", "X2", "X3", -1)
    with pytest.raises(UnknownSegment):
        svc.ti03_ingest_incident("EXT-1", "X1", "X5", 1)
    assert not svc.ti03_ingest_incident("ATK-1", "X2", "X3", 100).accepted
    assert svc.ti03_ingest_incident("ATK-1", "X2", "X3", 100, {DBW}).accepted
    assert svc.truth.incidents["X2->X3"] == 5


# -- Mobile Cloud ----------------------------------------------------------------

def test_round_robin():
    mc = MobileCloud({"pm01": 2, "ps03": 1, "ti03": 0})
    assert [mc.dispatch("pm01") for _ in range(4)] == [0, 1, 0, 1]
    assert [mc.dispatch("ps03") for _ in range(3)] == [0, 0, 0]
    with pytest.raises(NoInstance):
        mc.dispatch("ti03")
    with pytest.raises(NoInstance):
        mc.dispatch("su01")


@given(st.integers(1, 6), st.integers(0, 20))
def test_dispatch_fairness(n, k):
    mc = MobileCloud({"svc": n})
    for _ in range(k * n):
        mc.dispatch("svc")
    assert all(mc.handled.get(("svc", i), 0) == k for i in range(n))


def test_config_defaults():
    c = SimConfig()
    assert (c.preemption_latency, c.staleness_ms) == (2, 5000)
