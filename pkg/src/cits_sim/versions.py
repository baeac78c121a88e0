"""Dotted numeric versions and half-open version ranges."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

_SEGMENTS = 4
_VERSION_RE = re.compile(r"^\d+(\.\d+){0,3}$")

Version = Tuple[int, int, int, int]


def parse_version(text: str) -> Version:
    """Parse ``"5.2.14"`` into a 4-tuple padded with zeros.

    Padding makes ``"1.2"`` and ``"1.2.0"`` compare equal, so plain tuple
    comparison gives the segment-wise numeric order.
    """
    if not isinstance(text, str) or not _VERSION_RE.match(text):
        raise ValueError(f"invalid version string {text!r}")
    parts = [int(p) for p in text.split(".")]
    return tuple(parts + [0] * (_SEGMENTS - len(parts)))  # type: ignore[return-value]


def is_valid_version(text: str) -> bool:
    return isinstance(text, str) and bool(_VERSION_RE.match(text))


def compare_versions(a: str, b: str) -> int:
    va, vb = parse_version(a), parse_version(b)
    return (va > vb) - (va < vb)


@dataclass(frozen=True)
class VersionRange:
    """Finite union of half-open intervals ``[lo, hi)``.

    ``None`` as a bound means unbounded on that side.
    """

    intervals: Tuple[Tuple[Optional[str], Optional[str]], ...]

    def __post_init__(self):
        for lo, hi in self.intervals:
            if lo is not None:
                parse_version(lo)
            if hi is not None:
                parse_version(hi)

    @classmethod
    def any(cls) -> "VersionRange":
        return cls(((None, None),))

    @classmethod
    def below(cls, hi: str) -> "VersionRange":
        return cls(((None, hi),))

    @classmethod
    def of(cls, *intervals: Sequence[Optional[str]]) -> "VersionRange":
        return cls(tuple((lo, hi) for lo, hi in intervals))

    def contains(self, version: str) -> bool:
        v = parse_version(version)
        for lo, hi in self.intervals:
            if lo is not None and v < parse_version(lo):
                continue
            if hi is not None and v >= parse_version(hi):
                continue
            return True
        return False

    __contains__ = contains

    def to_json(self) -> list:
        return [[lo, hi] for lo, hi in self.intervals]

    @classmethod
    def from_json(cls, doc: Iterable) -> "VersionRange":
        intervals = []
        for item in doc:
            if not isinstance(item, (list, tuple)) or len(item) != 2:
                raise ValueError(f"version interval must be [lo, hi], got {item!r}")
            lo, hi = item
            intervals.append((lo, hi))
        return cls(tuple(intervals))

    def __str__(self) -> str:
        parts = []
        for lo, hi in self.intervals:
            parts.append(f"[{lo or '0'}, {hi or 'inf'})")
        return " U ".join(parts) if parts else "{}"
