"""Deterministic discrete-event simulator of a C-ITS deployment with
attack-scenario injection and ground-truth monitors."""

from .attack import enumerate_attack_paths, load_scenario, load_vuln_catalog, run_scenario
from .engine import SimConfig
from .fixtures import fixture_path
from .monitor import emit_report
from .pdu import Pdu, decode_pdu, encode_pdu, hybrid_multiplex
from .simulation import RunResult, run_simulation
from .topology import load_topology, validate_topology

__version__ = "0.1.0"

__all__ = [
    "Pdu",
    "RunResult",
    "SimConfig",
    "decode_pdu",
    "emit_report",
    "encode_pdu",
    "enumerate_attack_paths",
    "fixture_path",
    "hybrid_multiplex",
    "load_scenario",
    "load_topology",
    "load_vuln_catalog",
    "run_scenario",
    "run_simulation",
    "validate_topology",
]
