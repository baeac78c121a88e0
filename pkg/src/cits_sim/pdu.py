"""PDU wire codec and the hybrid-communication multiplexer.

Frame layout (big-endian)::

    offset  size  field
    0       4     magic "CITS"
    4       1     version (1)
    5       1     interface (Mqtt=1, ItsG5=2, InternetIpv6=3, Snmpv3=4)
    6       2     msg_type
    8       4     source node index
    12      4     dest node index
    16      4     sequence
    20      2     payload_len
    22      n     payload
    22+n    4     CRC-32 (IEEE) over bytes [0, 22+n)

The internal field structure of the PDU is a stand-in of our own; only the
idea of a header + payload unit is given.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Sequence, Union

from .errors import (
    BadMagic,
    BadVersion,
    CrcMismatch,
    NoInterfaceAvailable,
    PayloadTooLarge,
    Truncated,
    UnknownNodeIndex,
)
from .kernels import crc32
from .topology import ProtocolKind

MAGIC = b"CITS"
VERSION = 1
HEADER = struct.Struct(">4sBBHIIIH")
HEADER_LEN = HEADER.size  # 22
CRC = struct.Struct(">I")
CRC_LEN = CRC.size
MAX_PAYLOAD = 0xFFFF


@dataclass(frozen=True)
class Pdu:
    msg_type: int
    source: str
    dest: str
    payload: bytes = b""
    sequence: int = 0
    version: int = VERSION


@dataclass(frozen=True)
class Frame:
    interface: ProtocolKind
    bytes: bytes

    def __len__(self) -> int:
        return len(self.bytes)


class IdTable:
    """Bidirectional node id <-> 32-bit index map."""

    def __init__(self, mapping: Mapping[str, int]):
        self._to_index: Dict[str, int] = dict(mapping)
        self._to_id: Dict[int, str] = {}
        for node_id, index in self._to_index.items():
            if not 0 <= index <= 0xFFFFFFFF:
                raise ValueError(f"index {index} for {node_id!r} does not fit in 32 bits")
            if index in self._to_id:
                raise ValueError(f"index {index} assigned twice")
            self._to_id[index] = node_id

    @classmethod
    def from_ids(cls, ids: Iterable[str]) -> "IdTable":
        """Assign indices 1..n in sorted id order (0 is left unused)."""
        return cls({node_id: i for i, node_id in enumerate(sorted(set(ids)), start=1)})

    def index(self, node_id: str) -> int:
        try:
            return self._to_index[node_id]
        except KeyError:
            raise UnknownNodeIndex(f"node {node_id!r} has no index") from None

    def node(self, index: int) -> str:
        try:
            return self._to_id[index]
        except KeyError:
            raise UnknownNodeIndex(f"index {index} maps to no node") from None

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._to_index

    def __len__(self) -> int:
        return len(self._to_index)


def encode_pdu(p: Pdu, interface: ProtocolKind, id_table: IdTable) -> Frame:
    if len(p.payload) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"payload of {len(p.payload)} bytes exceeds {MAX_PAYLOAD}")
    if p.version != VERSION:
        raise ValueError(f"only PDU version {VERSION} is supported")
    header = HEADER.pack(
        MAGIC,
        p.version,
        interface.code,
        p.msg_type,
        id_table.index(p.source),
        id_table.index(p.dest),
        p.sequence,
        len(p.payload),
    )
    body = header + bytes(p.payload)
    return Frame(interface, body + CRC.pack(crc32(body)))


def decode_pdu(frame: Union[Frame, bytes, bytearray], id_table: IdTable) -> Pdu:
    """Inverse of :func:`encode_pdu`.

    Frame-format problems raise one of :class:`Truncated`, :class:`BadMagic`,
    :class:`BadVersion` or :class:`CrcMismatch`. An unknown interface code in
    an otherwise intact frame is reported as :class:`BadVersion` (the header
    format is not one we speak). A frame that verifies but names a node index
    missing from ``id_table`` raises :class:`UnknownNodeIndex`.
    """
    data = frame.bytes if isinstance(frame, Frame) else bytes(frame)
    if len(data) < 4:
        raise Truncated(f"frame of {len(data)} bytes ends inside magic")
    if data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    if len(data) < 5:
        raise Truncated("frame ends before version byte")
    if data[4] != VERSION:
        raise BadVersion(f"unsupported version {data[4]}")
    if len(data) < HEADER_LEN:
        raise Truncated(f"frame of {len(data)} bytes ends inside the {HEADER_LEN}-byte header")
    _, version, iface, msg_type, src, dst, seq, plen = HEADER.unpack_from(data)
    end = HEADER_LEN + plen
    if len(data) < end + CRC_LEN:
        raise Truncated(f"frame of {len(data)} bytes shorter than declared {end + CRC_LEN}")
    if len(data) > end + CRC_LEN:
        raise CrcMismatch(f"{len(data) - end - CRC_LEN} trailing bytes after CRC")
    (stored,) = CRC.unpack_from(data, end)
    if crc32(data[:end]) != stored:
        raise CrcMismatch(f"CRC mismatch (stored {stored:#010x})")
    if iface not in (1, 2, 3, 4):
        raise BadVersion(f"unknown interface code {iface}")
    return Pdu(
        msg_type=msg_type,
        source=id_table.node(src),
        dest=id_table.node(dst),
        payload=data[HEADER_LEN:end],
        sequence=seq,
        version=version,
    )


def frame_interface(frame: Frame) -> ProtocolKind:
    return ProtocolKind.from_code(frame.bytes[5])


# ---------------------------------------------------------------------------
# Hybrid communication
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class All:
    """Send one copy on every available interface."""

    def choose(self, available: Sequence[ProtocolKind]) -> List[ProtocolKind]:
        return sorted(available, key=lambda p: p.code)


@dataclass(frozen=True)
class Preferred:
    """Send one copy on the first available interface in ``order``."""

    order: tuple

    def __init__(self, order: Iterable[ProtocolKind]):
        object.__setattr__(self, "order", tuple(order))

    def choose(self, available: Sequence[ProtocolKind]) -> List[ProtocolKind]:
        avail = set(available)
        for proto in self.order:
            if proto in avail:
                return [proto]
        return []


DispatchPolicy = Union[All, Preferred]
DEFAULT_ORDER = (ProtocolKind.ITS_G5, ProtocolKind.MQTT, ProtocolKind.INTERNET_IPV6, ProtocolKind.SNMPV3)


def hybrid_multiplex(
    p: Pdu,
    available: Iterable[ProtocolKind],
    policy: DispatchPolicy,
    id_table: IdTable,
) -> List[Frame]:
    """Fan one PDU out over the interfaces selected by ``policy``.

    Every returned frame decodes to the same PDU; only the interface byte
    (and therefore the CRC) differs.
    """
    available = list(dict.fromkeys(available))
    if not available:
        raise NoInterfaceAvailable("no interface available")
    chosen = policy.choose(available)
    if not chosen:
        raise NoInterfaceAvailable(
            f"none of {[p.value for p in policy.order]} available")  # type: ignore[union-attr]
    return [encode_pdu(p, iface, id_table) for iface in chosen]
