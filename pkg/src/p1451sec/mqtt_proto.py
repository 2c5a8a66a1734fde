"""MQTT 3.1.1 control-packet codec (the subset used here) and topic helpers.

Packets are plain frozen dataclasses.  ``encode_packet`` and ``decode_packet``
are pure functions over ``bytes`` and are safe to call from any thread.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Union

MAX_REMAINING_LENGTH = 268_435_455
PROTOCOL_NAME = b"MQTT"
PROTOCOL_LEVEL = 4


class MqttError(Exception):
    """Base class for codec errors."""


class IncompletePacket(MqttError):
    """The buffer does not yet hold a whole packet; retry with more data."""


class MalformedPacket(MqttError):
    pass


class UnknownPacketType(MalformedPacket):
    pass


class UnsupportedQoS(MqttError):
    """QoS 2 showed up on the wire.  Only QoS 0 and 1 are supported."""


class PacketTooLarge(MqttError):
    pass


class InvalidTopic(ValueError):
    pass


class QoS(IntEnum):
    AT_MOST_ONCE = 0
    AT_LEAST_ONCE = 1


class PacketType(IntEnum):
    CONNECT = 1
    CONNACK = 2
    PUBLISH = 3
    PUBACK = 4
    SUBSCRIBE = 8
    SUBACK = 9
    UNSUBSCRIBE = 10
    UNSUBACK = 11
    PINGREQ = 12
    PINGRESP = 13
    DISCONNECT = 14


class ConnackCode(IntEnum):
    ACCEPTED = 0
    BAD_PROTOCOL = 1
    IDENTIFIER_REJECTED = 2
    SERVER_UNAVAILABLE = 3
    BAD_USERNAME_OR_PASSWORD = 4
    NOT_AUTHORIZED = 5


SUBACK_FAILURE = 0x80


@dataclass(frozen=True)
class Connect:
    client_id: str
    username: Optional[str] = None
    password: Optional[bytes] = None
    keep_alive: int = 60
    clean_session: bool = True


@dataclass(frozen=True)
class Connack:
    session_present: bool = False
    return_code: int = 0


@dataclass(frozen=True)
class Publish:
    topic: str
    payload: bytes = b""
    qos: QoS = QoS.AT_MOST_ONCE
    packet_id: Optional[int] = None
    dup: bool = False
    retain: bool = False

    def __post_init__(self):
        if self.qos > 0 and self.packet_id is None:
            raise ValueError("QoS 1 publish needs a packet id")
        if self.qos == 0 and self.packet_id is not None:
            raise ValueError("QoS 0 publish must not carry a packet id")


@dataclass(frozen=True)
class Puback:
    packet_id: int


@dataclass(frozen=True)
class Subscribe:
    packet_id: int
    entries: tuple[tuple[str, QoS], ...]


@dataclass(frozen=True)
class Suback:
    packet_id: int
    return_codes: tuple[int, ...]


@dataclass(frozen=True)
class Unsubscribe:
    packet_id: int
    filters: tuple[str, ...]


@dataclass(frozen=True)
class Unsuback:
    packet_id: int


@dataclass(frozen=True)
class Pingreq:
    pass


@dataclass(frozen=True)
class Pingresp:
    pass


@dataclass(frozen=True)
class Disconnect:
    pass


MqttPacket = Union[
    Connect, Connack, Publish, Puback, Subscribe, Suback,
    Unsubscribe, Unsuback, Pingreq, Pingresp, Disconnect,
]


# -- primitives ---------------------------------------------------------------

def encode_varint(value: int) -> bytes:
    if not 0 <= value <= MAX_REMAINING_LENGTH:
        raise PacketTooLarge(f"remaining length {value} out of range")
    out = bytearray()
    while True:
        digit = value % 128
        value //= 128
        if value:
            digit |= 0x80
        out.append(digit)
        if not value:
            return bytes(out)


def decode_varint(buf: bytes, pos: int = 0) -> tuple[int, int]:
    """Return ``(value, position after the varint)``."""
    value = 0
    multiplier = 1
    for i in range(4):
        if pos + i >= len(buf):
            raise IncompletePacket
        digit = buf[pos + i]
        value += (digit & 0x7F) * multiplier
        if not digit & 0x80:
            return value, pos + i + 1
        multiplier *= 128
    raise MalformedPacket("remaining length varint longer than 4 octets")


def _u16(value: int) -> bytes:
    if not 0 <= value <= 0xFFFF:
        raise ValueError(f"{value} does not fit in 16 bits")
    return value.to_bytes(2, "big")


def _binary(data: bytes) -> bytes:
    return _u16(len(data)) + data


def _string(text: str) -> bytes:
    return _binary(text.encode("utf-8"))


class _Reader:
    def __init__(self, body: bytes):
        self.body = body
        self.pos = 0

    def remaining(self) -> int:
        return len(self.body) - self.pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.body):
            raise MalformedPacket("field runs past end of packet")
        chunk = self.body[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return int.from_bytes(self.take(2), "big")

    def binary(self) -> bytes:
        return self.take(self.u16())

    def string(self) -> str:
        raw = self.binary()
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedPacket(f"invalid UTF-8 string: {exc}") from None
        if "\x00" in text:
            raise MalformedPacket("NUL character in UTF-8 string")
        return text

    def done(self):
        if self.remaining():
            raise MalformedPacket(f"{self.remaining()} unexpected trailing octets")


def _qos(value: int) -> QoS:
    if value == 2:
        raise UnsupportedQoS("QoS 2 is not supported")
    if value not in (0, 1):
        raise MalformedPacket(f"invalid QoS value {value}")
    return QoS(value)


# -- encode -------------------------------------------------------------------

def _frame(first_byte: int, body: bytes) -> bytes:
    return bytes([first_byte]) + encode_varint(len(body)) + body


def encode_packet(packet: MqttPacket) -> bytes:
    if isinstance(packet, Connect):
        flags = 0
        payload = _string(packet.client_id)
        if packet.clean_session:
            flags |= 0x02
        if packet.username is not None:
            flags |= 0x80
            payload += _string(packet.username)
        if packet.password is not None:
            if packet.username is None:
                raise ValueError("password without username")
            flags |= 0x40
            payload += _binary(packet.password)
        body = _string("MQTT") + bytes([PROTOCOL_LEVEL, flags]) + _u16(packet.keep_alive)
        return _frame(PacketType.CONNECT << 4, body + payload)
    if isinstance(packet, Connack):
        return _frame(PacketType.CONNACK << 4, bytes([int(packet.session_present), packet.return_code]))
    if isinstance(packet, Publish):
        first = (PacketType.PUBLISH << 4) | (int(packet.qos) << 1)
        if packet.dup:
            first |= 0x08
        if packet.retain:
            first |= 0x01
        body = _string(packet.topic)
        if packet.qos > 0:
            body += _u16(packet.packet_id)
        return _frame(first, body + packet.payload)
    if isinstance(packet, Puback):
        return _frame(PacketType.PUBACK << 4, _u16(packet.packet_id))
    if isinstance(packet, Subscribe):
        if not packet.entries:
            raise ValueError("SUBSCRIBE needs at least one entry")
        body = _u16(packet.packet_id)
        for topic_filter, qos in packet.entries:
            body += _string(topic_filter) + bytes([int(qos)])
        return _frame((PacketType.SUBSCRIBE << 4) | 0x02, body)
    if isinstance(packet, Suback):
        return _frame(PacketType.SUBACK << 4, _u16(packet.packet_id) + bytes(packet.return_codes))
    if isinstance(packet, Unsubscribe):
        if not packet.filters:
            raise ValueError("UNSUBSCRIBE needs at least one filter")
        body = _u16(packet.packet_id) + b"".join(_string(f) for f in packet.filters)
        return _frame((PacketType.UNSUBSCRIBE << 4) | 0x02, body)
    if isinstance(packet, Unsuback):
        return _frame(PacketType.UNSUBACK << 4, _u16(packet.packet_id))
    if isinstance(packet, Pingreq):
        return _frame(PacketType.PINGREQ << 4, b"")
    if isinstance(packet, Pingresp):
        return _frame(PacketType.PINGRESP << 4, b"")
    if isinstance(packet, Disconnect):
        return _frame(PacketType.DISCONNECT << 4, b"")
    raise TypeError(f"not an MQTT packet: {packet!r}")


# -- decode -------------------------------------------------------------------

_FIXED_FLAGS = {
    PacketType.CONNECT: 0, PacketType.CONNACK: 0, PacketType.PUBACK: 0,
    PacketType.SUBSCRIBE: 2, PacketType.SUBACK: 0, PacketType.UNSUBSCRIBE: 2,
    PacketType.UNSUBACK: 0, PacketType.PINGREQ: 0, PacketType.PINGRESP: 0,
    PacketType.DISCONNECT: 0,
}


def decode_packet(buffer: bytes) -> tuple[MqttPacket, int]:
    """Decode one packet from the front of ``buffer``.

    Returns the packet and the number of octets it occupied.  Raises
    :class:`IncompletePacket` when more data is needed.
    """
    if not buffer:
        raise IncompletePacket
    first = buffer[0]
    length, start = decode_varint(buffer, 1)
    end = start + length
    if len(buffer) < end:
        raise IncompletePacket
    type_code, flags = first >> 4, first & 0x0F
    try:
        ptype = PacketType(type_code)
    except ValueError:
        raise UnknownPacketType(f"unsupported packet type {type_code}") from None
    if ptype is not PacketType.PUBLISH and flags != _FIXED_FLAGS[ptype]:
        raise MalformedPacket(f"bad fixed-header flags {flags:#x} for {ptype.name}")
    r = _Reader(bytes(buffer[start:end]))
    return _DECODERS[ptype](r, flags), end


def _decode_connect(r: _Reader, flags: int) -> Connect:
    if r.string() != "MQTT":
        raise MalformedPacket("bad protocol name")
    level = r.u8()
    if level != PROTOCOL_LEVEL:
        raise MalformedPacket(f"unsupported protocol level {level}")
    cflags = r.u8()
    keep_alive = r.u16()
    if cflags & 0x01:
        raise MalformedPacket("reserved connect flag set")
    if cflags & 0x04:
        raise MalformedPacket("will messages are not supported")
    if cflags & 0x38:
        raise MalformedPacket("will QoS/retain set without will flag")
    has_user, has_pass = bool(cflags & 0x80), bool(cflags & 0x40)
    if has_pass and not has_user:
        raise MalformedPacket("password flag without username flag")
    client_id = r.string()
    username = r.string() if has_user else None
    password = r.binary() if has_pass else None
    r.done()
    return Connect(client_id, username, password, keep_alive, bool(cflags & 0x02))


def _decode_connack(r: _Reader, flags: int) -> Connack:
    ack_flags = r.u8()
    if ack_flags & 0xFE:
        raise MalformedPacket("reserved CONNACK flags set")
    code = r.u8()
    r.done()
    return Connack(bool(ack_flags), code)


def _decode_publish(r: _Reader, flags: int) -> Publish:
    qos = _qos((flags >> 1) & 0x03)
    dup = bool(flags & 0x08)
    if dup and qos == 0:
        raise MalformedPacket("DUP set on QoS 0 publish")
    topic = r.string()
    try:
        validate_topic(topic)
    except InvalidTopic as exc:
        raise MalformedPacket(str(exc)) from None
    packet_id = r.u16() if qos else None
    if packet_id == 0:
        raise MalformedPacket("packet id 0")
    payload = r.take(r.remaining())
    return Publish(topic, payload, qos, packet_id, dup, bool(flags & 0x01))


def _decode_puback(r: _Reader, flags: int) -> Puback:
    packet_id = r.u16()
    r.done()
    return Puback(packet_id)


def _decode_subscribe(r: _Reader, flags: int) -> Subscribe:
    packet_id = r.u16()
    entries = []
    while r.remaining():
        topic_filter = r.string()
        options = r.u8()
        if options & 0xFC:
            raise MalformedPacket("reserved subscription option bits set")
        entries.append((topic_filter, _qos(options)))
    if not entries:
        raise MalformedPacket("SUBSCRIBE without entries")
    return Subscribe(packet_id, tuple(entries))


def _decode_suback(r: _Reader, flags: int) -> Suback:
    packet_id = r.u16()
    codes = tuple(r.take(r.remaining()))
    for code in codes:
        if code == 2:
            raise UnsupportedQoS("SUBACK granted QoS 2")
        if code not in (0, 1, SUBACK_FAILURE):
            raise MalformedPacket(f"invalid SUBACK return code {code:#x}")
    return Suback(packet_id, codes)


def _decode_unsubscribe(r: _Reader, flags: int) -> Unsubscribe:
    packet_id = r.u16()
    filters = []
    while r.remaining():
        filters.append(r.string())
    if not filters:
        raise MalformedPacket("UNSUBSCRIBE without filters")
    return Unsubscribe(packet_id, tuple(filters))


def _decode_unsuback(r: _Reader, flags: int) -> Unsuback:
    packet_id = r.u16()
    r.done()
    return Unsuback(packet_id)


def _empty(cls):
    def decode(r: _Reader, flags: int):
        r.done()
        return cls()
    return decode


_DECODERS = {
    PacketType.CONNECT: _decode_connect,
    PacketType.CONNACK: _decode_connack,
    PacketType.PUBLISH: _decode_publish,
    PacketType.PUBACK: _decode_puback,
    PacketType.SUBSCRIBE: _decode_subscribe,
    PacketType.SUBACK: _decode_suback,
    PacketType.UNSUBSCRIBE: _decode_unsubscribe,
    PacketType.UNSUBACK: _decode_unsuback,
    PacketType.PINGREQ: _empty(Pingreq),
    PacketType.PINGRESP: _empty(Pingresp),
    PacketType.DISCONNECT: _empty(Disconnect),
}


# -- topics -------------------------------------------------------------------

def _check_common(value: str, kind: str):
    if not isinstance(value, str) or not value:
        raise InvalidTopic(f"{kind} must be a non-empty string")
    if "\x00" in value:
        raise InvalidTopic(f"{kind} contains NUL")
    if len(value.encode("utf-8")) > 0xFFFF:
        raise InvalidTopic(f"{kind} longer than 65535 octets")


def validate_topic(value: str) -> str:
    """Return ``value`` if it is a publishable topic name, else raise."""
    _check_common(value, "topic name")
    if "+" in value or "#" in value:
        raise InvalidTopic(f"wildcard in topic name {value!r}")
    return value


def validate_filter(value: str) -> str:
    """Return ``value`` if it is a valid subscription filter, else raise."""
    _check_common(value, "topic filter")
    levels = value.split("/")
    for i, level in enumerate(levels):
        if "#" in level and (level != "#" or i != len(levels) - 1):
            raise InvalidTopic(f"'#' must be the whole last level: {value!r}")
        if "+" in level and level != "+":
            raise InvalidTopic(f"'+' must occupy a whole level: {value!r}")
    return value


def filter_matches(topic_filter: str, topic: str) -> bool:
    f_levels = topic_filter.split("/")
    t_levels = topic.split("/")
    if t_levels[0].startswith("$") and f_levels[0] in ("+", "#"):
        return False
    for i, level in enumerate(f_levels):
        if level == "#":
            return True
        if i >= len(t_levels):
            return False
        if level != "+" and level != t_levels[i]:
            return False
    return len(f_levels) == len(t_levels)
