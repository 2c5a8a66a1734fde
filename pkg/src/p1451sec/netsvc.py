"""Read-TEDS network-service messages and their MQTT topics.

Every message is a 5-octet header ``netSvcType netSvcId msgType msgLength``
followed by the body; all integers are big-endian.
"""
from __future__ import annotations

import enum
import struct
import uuid
from dataclasses import dataclass, field

TOPIC_ROOT = "1451.1.6"
COMMAND_PREFIX = f"{TOPIC_ROOT}/cmd/"
REPLY_PREFIX = f"{TOPIC_ROOT}/reply/"

NETSVC_TYPE_TEDS = 3
NETSVC_ID_READ_TEDS = 2
MSG_COMMAND = 1
MSG_REPLY = 2

_HEADER = struct.Struct(">BBBH")
_COMMAND_BODY = struct.Struct(">16s16s16sHBIII")
_REPLY_PREFIX = struct.Struct(">H16s16s16sHI")
COMMAND_BODY_LENGTH = _COMMAND_BODY.size   # 63
REPLY_FIXED_LENGTH = _REPLY_PREFIX.size    # 56

NIL_UUID = uuid.UUID(int=0)


class NetSvcError(ValueError):
    pass


class ErrorCode(enum.IntEnum):
    SUCCESS = 0
    UNSUPPORTED_SERVICE = 1
    UNKNOWN_TIM_OR_CHANNEL = 2
    TEDS_NOT_FOUND = 3
    INVALID_OFFSET = 4
    INTERNAL_ERROR = 5
    ACCESS_DENIED = 6


@dataclass(frozen=True)
class TimeDuration:
    seconds: int = 0
    nanoseconds: int = 0

    def __post_init__(self):
        if not 0 <= self.seconds <= 0xFFFFFFFF:
            raise ValueError("seconds must fit in UInt32")
        if not 0 <= self.nanoseconds < 1_000_000_000:
            raise ValueError("nanoseconds must be below 1e9")

    @classmethod
    def from_seconds(cls, value: float) -> "TimeDuration":
        return cls(*divmod(round(value * 1_000_000_000), 1_000_000_000))

    def total_seconds(self) -> float:
        return self.seconds + self.nanoseconds / 1e9


@dataclass(frozen=True)
class ReadTedsCommand:
    app_id: uuid.UUID
    ncap_id: uuid.UUID
    tim_id: uuid.UUID = NIL_UUID
    channel_id: int = 0
    teds_access_code: int = 16
    teds_offset: int = 0
    timeout: TimeDuration = field(default=TimeDuration(2, 0))


@dataclass(frozen=True)
class ReadTedsReply:
    error_code: int
    app_id: uuid.UUID
    ncap_id: uuid.UUID
    tim_id: uuid.UUID = NIL_UUID
    channel_id: int = 0
    teds_offset: int = 0
    raw_teds_block: bytes = b""


def _header(msg_type: int, length: int) -> bytes:
    return _HEADER.pack(NETSVC_TYPE_TEDS, NETSVC_ID_READ_TEDS, msg_type, length)


def encode_command(cmd: ReadTedsCommand) -> bytes:
    body = _COMMAND_BODY.pack(
        cmd.app_id.bytes, cmd.ncap_id.bytes, cmd.tim_id.bytes, cmd.channel_id,
        cmd.teds_access_code, cmd.teds_offset,
        cmd.timeout.seconds, cmd.timeout.nanoseconds,
    )
    return _header(MSG_COMMAND, len(body)) + body


def _split(data: bytes, msg_type: int) -> bytes:
    """Validate the header and return the body."""
    data = bytes(data)
    if len(data) < _HEADER.size:
        raise NetSvcError(f"message truncated: {len(data)} octets, header needs 5")
    svc_type, svc_id, got_type, length = _HEADER.unpack_from(data)
    if (svc_type, svc_id) != (NETSVC_TYPE_TEDS, NETSVC_ID_READ_TEDS):
        raise NetSvcError(f"not a read-TEDS message (netSvcType={svc_type}, netSvcId={svc_id})")
    if got_type != msg_type:
        kind = "command" if msg_type == MSG_COMMAND else "reply"
        raise NetSvcError(f"not a {kind}: msgType={got_type}")
    body = data[_HEADER.size:]
    if len(body) < length:
        raise NetSvcError(f"message truncated: header declares {length} body octets, got {len(body)}")
    if len(body) > length:
        raise NetSvcError(f"msgLength {length} does not match body of {len(body)} octets")
    return body


def decode_command(data: bytes) -> ReadTedsCommand:
    body = _split(data, MSG_COMMAND)
    if len(body) != COMMAND_BODY_LENGTH:
        raise NetSvcError(f"command body must be {COMMAND_BODY_LENGTH} octets, got {len(body)}")
    app, ncap, tim, channel, access, offset, secs, nanos = _COMMAND_BODY.unpack(body)
    try:
        timeout = TimeDuration(secs, nanos)
    except ValueError as exc:
        raise NetSvcError(f"bad timeout: {exc}") from None
    return ReadTedsCommand(uuid.UUID(bytes=app), uuid.UUID(bytes=ncap), uuid.UUID(bytes=tim),
                           channel, access, offset, timeout)


def encode_reply(rep: ReadTedsReply) -> bytes:
    body = _REPLY_PREFIX.pack(
        rep.error_code, rep.app_id.bytes, rep.ncap_id.bytes, rep.tim_id.bytes,
        rep.channel_id, rep.teds_offset,
    ) + bytes(rep.raw_teds_block)
    if len(body) > 0xFFFF:
        raise NetSvcError("reply body exceeds the 65535-octet msgLength range")
    return _header(MSG_REPLY, len(body)) + body


def decode_reply(data: bytes) -> ReadTedsReply:
    body = _split(data, MSG_REPLY)
    if len(body) < REPLY_FIXED_LENGTH:
        raise NetSvcError(f"reply body must be at least {REPLY_FIXED_LENGTH} octets, got {len(body)}")
    code, app, ncap, tim, channel, offset = _REPLY_PREFIX.unpack_from(body)
    return ReadTedsReply(code, uuid.UUID(bytes=app), uuid.UUID(bytes=ncap), uuid.UUID(bytes=tim),
                         channel, offset, body[REPLY_FIXED_LENGTH:])


def command_topic(ncap_id: uuid.UUID) -> str:
    return COMMAND_PREFIX + ncap_id.hex


def reply_topic(app_id: uuid.UUID) -> str:
    return REPLY_PREFIX + app_id.hex


def id_from_topic(topic: str) -> uuid.UUID:
    """Recover the id embedded in a command or reply topic."""
    for prefix in (COMMAND_PREFIX, REPLY_PREFIX):
        if topic.startswith(prefix):
            tail = topic[len(prefix):]
            if len(tail) == 32 and tail == tail.lower():
                try:
                    return uuid.UUID(hex=tail)
                except ValueError:
                    break
            break
    raise NetSvcError(f"{topic!r} is not a command or reply topic")


def correlate(cmd: ReadTedsCommand, rep: ReadTedsReply) -> bool:
    return rep.app_id == cmd.app_id and rep.ncap_id == cmd.ncap_id
