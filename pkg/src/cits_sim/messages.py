"""Message-type registry and payload encoding.

One block of codes per service package (high byte = package)::

    0x01xx  PM01 parking space management
    0x02xx  PS03 emergency vehicle preemption
    0x03xx  SU01 connected vehicle monitoring
    0x04xx  TI03 dynamic route guidance
"""

import enum
import json


class MsgType(enum.IntEnum):
    PARKING_OCCUPANCY_UPDATE = 0x0101
    PARKING_QUERY = 0x0102
    PARKING_RESPONSE = 0x0103

    EMERGENCY_REGISTER = 0x0201
    EMERGENCY_REGISTER_ACK = 0x0202
    PREEMPTION_REQUEST = 0x0203
    SIGNAL_PREEMPT_COMMAND = 0x0204
    SIGNAL_OVERRIDE_COMMAND = 0x0205
    PREEMPTION_RESPONSE = 0x0206

    VEHICLE_STATUS = 0x0301

    INCIDENT_REPORT = 0x0401
    ROUTE_REQUEST = 0x0402
    ROUTE_RESPONSE = 0x0403


SERVICE_OF = {0x01: "pm01", 0x02: "ps03", 0x03: "su01", 0x04: "ti03"}


def msg_name(code: int) -> str:
    try:
        return MsgType(code).name
    except ValueError:
        return f"0x{code:04x}"


def service_of(code: int) -> str:
    return SERVICE_OF.get(code >> 8, "unknown")


def encode_payload(body: dict) -> bytes:
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_payload(raw: bytes) -> dict:
    return json.loads(raw.decode("utf-8")) if raw else {}
