"""Attacker capabilities.

Kept separate from :mod:`cits_sim.attack` so the service layer can check
for ``DbWrite`` without importing the attack machinery.
"""

from dataclasses import dataclass

CAPABILITY_KINDS = (
    "NetworkAdjacent",
    "DbWrite",
    "EmergencyRegistered",
    "PrivilegedService",
    "SignalControl",
    "CredentialTheft",
)


@dataclass(frozen=True, order=True)
class Capability:
    kind: str
    target: str

    def __post_init__(self):
        if self.kind not in CAPABILITY_KINDS:
            raise ValueError(f"unknown capability kind {self.kind!r}")

    def __str__(self) -> str:
        return f"{self.kind}({self.target})"

    def to_json(self) -> dict:
        return {"kind": self.kind, "target": self.target}
