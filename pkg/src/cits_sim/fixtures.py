"""Locations of the data files shipped with the package."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

FIXTURES = (
    "reference.json",
    "scenario1.json",
    "scenario2.json",
    "cves.json",
    "attack_s1.json",
    "attack_s2.json",
    "attack_s2_hold.json",
)


def fixture_path(name: str) -> Path:
    path = Path(str(resources.files("cits_sim") / "data" / name))
    if not path.exists():
        raise FileNotFoundError(f"no shipped fixture named {name!r}")
    return path
