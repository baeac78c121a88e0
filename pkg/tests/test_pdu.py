import struct

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from cits_sim.errors import (
    BadMagic,
    BadVersion,
    CrcMismatch,
    DecodeError,
    NoInterfaceAvailable,
    PayloadTooLarge,
    Truncated,
    UnknownNodeIndex,
)
from cits_sim.pdu import (
    All,
    Frame,
    HEADER_LEN,
    IdTable,
    Pdu,
    Preferred,
    decode_pdu,
    encode_pdu,
    frame_interface,
    hybrid_multiplex,
)
from cits_sim.topology import ProtocolKind

from oracles import crc32_bitwise

IDS = IdTable({"a": 1, "b": 2, "c": 3, "d": 4, "e": 5})
MQTT, ITSG5 = ProtocolKind.MQTT, ProtocolKind.ITS_G5

pdus = st.builds(
    Pdu,
    msg_type=st.integers(0, 0xFFFF),
    source=st.sampled_from(["a", "b", "c", "d", "e"]),
    dest=st.sampled_from(["a", "b", "c", "d", "e"]),
    payload=st.binary(max_size=300),
    sequence=st.integers(0, 0xFFFFFFFF),
)


def test_layout_is_bit_exact():
    frame = encode_pdu(Pdu(0x0001, "b", "e", b"hi"), MQTT, IDS)
    raw = frame.bytes
    assert len(raw) == 22 + 2 + 4
    assert raw[:4] == b"CITS"
    assert raw[4] == 1 and raw[5] == 1
    assert struct.unpack(">HIIIH", raw[6:22]) == (1, 2, 5, 0, 2)
    assert raw[22:24] == b"hi"
    assert struct.unpack(">I", raw[24:])[0] == crc32_bitwise(raw[:24])


def test_empty_payload_frame_and_crc():
    raw = encode_pdu(Pdu(0x0101, "a", "c"), ITSG5, IDS).bytes
    assert len(raw) == HEADER_LEN + 4
    assert raw[20:22] == b"\x00\x00"
    assert raw[5] == 2
    assert struct.unpack(">I", raw[22:])[0] == crc32_bitwise(raw[:22])


def test_crc_oracle_known_vector():
    assert crc32_bitwise(b"123456789") == 0xCBF43926


def test_encode_errors():
    with pytest.raises(UnknownNodeIndex):
        encode_pdu(Pdu(1, "a", "zz"), MQTT, IDS)
    with pytest.raises(PayloadTooLarge):
        encode_pdu(Pdu(1, "a", "b", bytes(65536)), MQTT, IDS)
    encode_pdu(Pdu(1, "a", "b", bytes(65535)), MQTT, IDS)


@given(pdus, st.sampled_from(list(ProtocolKind)))
def test_roundtrip(p, iface):
    frame = encode_pdu(p, iface, IDS)
    assert decode_pdu(frame, IDS) == p
    assert frame_interface(frame) == iface
    assert encode_pdu(p, iface, IDS) == frame


def test_flipped_crc_byte():
    raw = bytearray(encode_pdu(Pdu(7, "a", "b", b"x"), MQTT, IDS).bytes)
    raw[-1] ^= 0x01
    with pytest.raises(CrcMismatch):
        decode_pdu(bytes(raw), IDS)


def test_truncated_mid_header():
    raw = encode_pdu(Pdu(7, "a", "b", b"x"), MQTT, IDS).bytes
    with pytest.raises(Truncated):
        decode_pdu(raw[:10], IDS)
    with pytest.raises(Truncated):
        decode_pdu(raw[:-1], IDS)
    with pytest.raises(Truncated):
        decode_pdu(b"CI", IDS)


def test_bad_magic_and_version():
    raw = bytearray(encode_pdu(Pdu(7, "a", "b"), MQTT, IDS).bytes)
    with pytest.raises(BadMagic):
        decode_pdu(b"XITS" + bytes(raw[4:]), IDS)
    raw[4] = 2
    with pytest.raises(BadVersion):
        decode_pdu(bytes(raw), IDS)


def test_trailing_bytes_fail_the_checksum():
    raw = encode_pdu(Pdu(7, "a", "b"), MQTT, IDS).bytes
    with pytest.raises(CrcMismatch):
        decode_pdu(raw + b"\x00", IDS)


def test_unknown_index_after_valid_crc():
    raw = encode_pdu(Pdu(7, "a", "e"), MQTT, IDS).bytes
    with pytest.raises(UnknownNodeIndex):
        decode_pdu(raw, IdTable({"a": 1}))


@settings(max_examples=500, suppress_health_check=[HealthCheck.too_slow])
@given(st.one_of(st.binary(max_size=200), st.binary(max_size=200).map(lambda b: b"CITS\x01" + b)))
def test_decode_never_crashes(data):
    try:
        decode_pdu(data, IDS)
    except (DecodeError, UnknownNodeIndex):
        pass


def test_hybrid_all_sends_one_frame_per_interface():
    p = Pdu(0x0203, "a", "b", b"payload", 9)
    frames = hybrid_multiplex(p, {MQTT, ITSG5}, All(), IDS)
    assert [f.interface for f in frames] == [MQTT, ITSG5]
    assert frames[0].bytes[22:-4] == frames[1].bytes[22:-4]
    assert {decode_pdu(f, IDS) for f in frames} == {p}


def test_hybrid_preferred():
    frames = hybrid_multiplex(Pdu(1, "a", "b"), {ITSG5}, Preferred([MQTT, ITSG5]), IDS)
    assert [f.interface for f in frames] == [ITSG5]
    with pytest.raises(NoInterfaceAvailable):
        hybrid_multiplex(Pdu(1, "a", "b"), {ITSG5}, Preferred([MQTT]), IDS)


@pytest.mark.parametrize("policy", [All(), Preferred([MQTT])])
def test_hybrid_needs_an_interface(policy):
    with pytest.raises(NoInterfaceAvailable):
        hybrid_multiplex(Pdu(1, "a", "b"), set(), policy, IDS)


def test_id_table_assigns_sorted_indices():
    t = IdTable.from_ids(["z", "a", "m"])
    assert [t.index(x) for x in "amz"] == [1, 2, 3]
    assert t.node(2) == "m"
    with pytest.raises(UnknownNodeIndex):
        t.node(0)
    assert isinstance(Frame(MQTT, b""), Frame)
