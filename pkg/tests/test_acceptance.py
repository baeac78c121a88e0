"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (also repeated in the
pytest terminal summary).
"""

import random
import struct
import time
from contextlib import contextmanager

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from cits_sim.attack import NOT_REACHED, PRECONDITION_FAILED, SUCCEEDED, enumerate_attack_paths, run_scenario
from cits_sim.engine import SimConfig
from cits_sim.errors import DecodeError, UnknownNodeIndex
from cits_sim.pdu import IdTable, Pdu, decode_pdu, encode_pdu
from cits_sim.services import MobileCloud, compute_route
from cits_sim.topology import ProtocolKind

from attack_instances import oracle_paths, random_instance
from conftest import ACCEPTANCE_LINES
from oracles import brute_route, crc32_bitwise

CLEAN_SEEDS = range(100)
CLEAN_TICKS = 1000


@contextmanager
def criterion(number, label):
    started = time.perf_counter()
    try:
        yield
    except BaseException:
        line = f"FAIL criterion {number}: {label}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        raise
    line = f"PASS criterion {number}: {label} ({time.perf_counter() - started:.2f} s)"
    print(line)
    ACCEPTANCE_LINES.append(line)


@pytest.fixture(scope="module")
def clean_runs(reference):
    """100 un-attacked seeded runs of 1000 ticks on the reference topology."""
    return [run_scenario(None, reference, SimConfig(seed=s, horizon_ms=CLEAN_TICKS * 1000)) for s in CLEAN_SEEDS]


def test_criterion_1_s1_reproduction(s1, scenario1_topology):
    with criterion(1, "S1 reproduction on scenario1"):
        started = time.perf_counter()
        run = run_scenario(s1, scenario1_topology, SimConfig(seed=0))
        elapsed = time.perf_counter() - started
        assert [s.verdict for s in run.steps] == [SUCCEEDED, SUCCEEDED]
        assert run.alarms_of("IntegrityViolation") and run.alarms_of("RouteSuboptimal")
        report = run.report()
        step_ids = {s["step"] for s in report["steps"]}
        assert all(a["cause"] in step_ids for a in report["alarms"])
        assert elapsed < 5


def test_criterion_2_s2_reproduction(s2, scenario2_topology):
    with criterion(2, "S2 reproduction on scenario2"):
        started = time.perf_counter()
        run = run_scenario(s2, scenario2_topology, SimConfig(seed=0))
        elapsed = time.perf_counter() - started
        assert [s.verdict for s in run.steps] == [SUCCEEDED] * 3
        assert run.alarms_of("RogueEmergency")
        assert run.alarms_of("ConflictingGreen") or run.alarms_of("PreemptionDenial")
        report = run.report()
        step_ids = {s["step"] for s in report["steps"]}
        assert all(a["cause"] in step_ids for a in report["alarms"])
        assert elapsed < 5


ABLATIONS = {
    "IPv6 path": ("s1", "scenario1_topology", 0,
                  lambda t: t.without_link("ATK-1", "CC-1", ProtocolKind.INTERNET_IPV6)),
    "MySQL item": ("s1", "scenario1_topology", 1, lambda t: t.without_software("CC-1", "mysql")),
    "MQTT link": ("s2", "scenario2_topology", 0, lambda t: t.without_link("ATK-1", "CC-1", ProtocolKind.MQTT)),
    "vulnerable Spring": ("s2", "scenario2_topology", 1,
                          lambda t: t.with_software("CC-1", "spring-framework", "5.3.7")),
    "SNMPv3 link": ("s2", "scenario2_topology", 2, lambda t: t.without_link("RSUC-1", "RSU-1", ProtocolKind.SNMPV3)),
}


def test_criterion_3_requirement_ablation(request):
    with criterion(3, "requirement ablation, 5 single-requirement removals"):
        for name, (scenario_name, topo_name, idx, ablate) in ABLATIONS.items():
            scenario = request.getfixturevalue(scenario_name)
            topology = request.getfixturevalue(topo_name)
            base = run_scenario(scenario, topology, SimConfig(seed=0))
            started = time.perf_counter()
            run = run_scenario(scenario, ablate(topology), SimConfig(seed=0))
            assert time.perf_counter() - started < 5, name
            verdicts = [s.verdict for s in run.steps]
            assert [s.verdict for s in base.steps] == [SUCCEEDED] * len(verdicts), name
            assert verdicts[:idx] == [SUCCEEDED] * idx, name
            assert verdicts[idx] == PRECONDITION_FAILED, name
            assert verdicts[idx + 1:] == [NOT_REACHED] * (len(verdicts) - idx - 1), name
            silenced = {s.step for s in run.steps[idx:]}
            assert not [a for a in run.alarms if a.cause in silenced], name
            assert not [a for a in run.alarms if a.cause is None], name
            kept = {(a.kind, a.subject) for a in base.alarms if a.cause not in silenced}
            assert kept == {(a.kind, a.subject) for a in run.alarms}, name


def test_criterion_4_attack_path_search(scenario2_topology, catalog):
    with criterion(4, "attack-path chain and 200 random instances vs brute-force oracle"):
        paths = enumerate_attack_paths(scenario2_topology, catalog, "ATK-1", "signal-control")
        assert [p.cves for p in paths] == [("CVE-2019-5432", "CVE-2021-22118", "CVE-2022-43870")]
        rng = random.Random(31337)
        mismatches = 0
        lengths = set()
        for _ in range(200):
            topology, cat, goal, depth = random_instance(rng)
            assert len(topology.nodes) <= 6 and len(cat) <= 6 and depth <= 3
            got = [p.steps for p in enumerate_attack_paths(topology, cat, "ATK", goal, depth)]
            want = [tuple(p) for p in oracle_paths(topology, cat, goal, depth)]
            mismatches += got != want
            lengths |= {len(p) for p in want}
        assert mismatches == 0
        assert lengths == {1, 2, 3}


CODEC_NAMES = [f"n{i}" for i in range(8)]
CODEC_IDS = IdTable.from_ids(CODEC_NAMES)
CODEC_INTERFACES = list(ProtocolKind)
_roundtrips = []

pdu_cases = st.tuples(
    st.builds(Pdu, msg_type=st.integers(0, 0xFFFF), source=st.sampled_from(CODEC_NAMES),
              dest=st.sampled_from(CODEC_NAMES), payload=st.binary(max_size=256),
              sequence=st.integers(0, 0xFFFFFFFF)),
    st.sampled_from(CODEC_INTERFACES),
)


@settings(max_examples=10_000, deadline=None, derandomize=True, database=None,
          suppress_health_check=list(HealthCheck))
@given(pdu_cases)
def _roundtrip(case):
    p, interface = case
    assert decode_pdu(encode_pdu(p, interface, CODEC_IDS), CODEC_IDS) == p
    _roundtrips.append(1)


def test_criterion_5_codec():
    with criterion(5, "codec roundtrips, random decodes, CRC oracle"):
        _roundtrip()
        assert len(_roundtrips) >= 10_000
        rng = random.Random(5)
        for _ in range(10_000):
            blob = rng.randbytes(rng.randint(0, 64))
            roll = rng.random()
            if roll < 0.3:
                blob = b"CITS" + blob
            elif roll < 0.6:
                # Valid magic and CRC, so decoding reaches the header fields.
                body = b"CITS" + blob
                blob = body + struct.pack(">I", crc32_bitwise(body))
            try:
                decode_pdu(blob, CODEC_IDS)
            except (DecodeError, UnknownNodeIndex):
                pass
        for _ in range(100):
            p = Pdu(rng.randint(0, 0xFFFF), "n1", "n2", rng.randbytes(rng.randint(0, 200)), rng.randint(0, 2**32 - 1))
            raw = encode_pdu(p, rng.choice(CODEC_INTERFACES), CODEC_IDS).bytes
            assert struct.unpack(">I", raw[-4:])[0] == crc32_bitwise(raw[:-4])


def test_criterion_6_determinism(request, s1, s2, s2_hold):
    with criterion(6, "determinism over 20 seed/scenario combinations"):
        combos = [(None, "reference"), (s1, "scenario1_topology"), (s2, "scenario2_topology"),
                  (s2_hold, "scenario2_topology")]
        checked = 0
        for scenario, topo_name in combos:
            topology = request.getfixturevalue(topo_name)
            for seed in range(5):
                a = run_scenario(scenario, topology, SimConfig(seed=seed))
                b = run_scenario(scenario, topology, SimConfig(seed=seed))
                assert a.trace_jsonl().encode() == b.trace_jsonl().encode()
                assert a.report() == b.report()
                checked += 1
        assert checked == 20


def test_criterion_7_service_correctness(reference, scenario1_topology, scenario2_topology, clean_runs):
    with criterion(7, "routes vs enumeration, signal safety over 100x1000 ticks, round-robin"):
        for topology in (reference, scenario1_topology, scenario2_topology):
            g = topology.road_graph
            assert len(g.intersections) <= 8
            segs = [(s.src, s.dst, s.cost) for s in g.segments]
            penalty_sets = [{}] + [{f"{s.src}->{s.dst}": 5} for s in g.segments]
            for penalties in penalty_sets:
                for a in g.intersections:
                    for b in g.intersections:
                        r = compute_route(g, a, b, penalties)
                        assert (r.cost, list(r.path)) == brute_route(segs, a, b, penalties)
        for run in clean_runs:
            assert not run.alarms_of("ConflictingGreen")
            for ctl in run.services.controllers.values():
                assert len(ctl.history.entries) >= CLEAN_TICKS
                for entry in ctl.history.entries:
                    phases = sorted(entry.active)
                    assert not any(ctl.plan.conflicts(p, q) for i, p in enumerate(phases) for q in phases[i + 1:])
        for n in range(1, 6):
            for k in range(0, 11):
                mc = MobileCloud({"svc": n})
                for _ in range(k * n):
                    mc.dispatch("svc")
                assert [mc.handled.get(("svc", i), 0) for i in range(n)] == [k] * n


def test_criterion_8_no_false_positives(clean_runs):
    with criterion(8, "0 alarms across 100 un-attacked reference runs"):
        assert len(clean_runs) == 100
        assert sum(len(run.alarms) for run in clean_runs) == 0
