"""APP-side flows: read a security TEDS from an NCAP, request ACL updates."""
from __future__ import annotations

import logging
import queue
import threading
import time
import uuid
from dataclasses import dataclass
from typing import Optional, Union

from . import netsvc
from .acl import Access
from .acs import (
    CONFIG_TOPIC,
    RESULT_TOPIC,
    AclUpdateRequest,
    AclUpdateResult,
    InvalidRequest,
    Op,
    format_request,
    parse_result,
)
from .client import MqttClient
from .netsvc import ReadTedsCommand, ReadTedsReply, TimeDuration
from .teds import (
    STANDARD_TLS,
    Policy,
    SecurityTeds,
    decode_security_teds,
    level_policies,
    standard_name,
    tls_version_name,
)

log = logging.getLogger(__name__)

ACL_RESULT_TIMEOUT = 5.0


class FlowTimeout(Exception):
    pass


class ReplyError(Exception):
    def __init__(self, reply: ReadTedsReply):
        try:
            label = netsvc.ErrorCode(reply.error_code).name
        except ValueError:
            label = "UNKNOWN"
        super().__init__(f"NCAP replied with errorCode {reply.error_code} ({label})")
        self.reply = reply


class RequestOutstanding(RuntimeError):
    pass


_POLICY_ORDER = (Policy.ENCRYPTION, Policy.AUTHENTICATION, Policy.AUTHORIZATION)


def version_label(standard: int, version: int) -> str:
    if standard == STANDARD_TLS:
        return tls_version_name(version)
    return f"V{version}.0"


def pretty_print(teds: SecurityTeds) -> str:
    policies = level_policies(teds.level)
    names = ", ".join(p.value for p in _POLICY_ORDER if p in policies) or "no security"
    tid = teds.teds_id
    lines = [
        f"TEDS ID: {tid.family_major} {tid.family_minor} {tid.access_code} "
        f"{tid.teds_version} {tid.tuple_length}",
        f"Level: {teds.level.value} ({names})",
        f"Number of standards: {len(teds.entries)}",
    ]
    for entry in teds.entries:
        lines.append(f"{standard_name(entry.standard)} ({entry.standard}) "
                     f"{version_label(entry.standard, entry.version)}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PendingRequest:
    command: ReadTedsCommand
    deadline: float

    @classmethod
    def start(cls, command: ReadTedsCommand) -> "PendingRequest":
        return cls(command, time.monotonic() + command.timeout.total_seconds())

    def remaining(self) -> float:
        return self.deadline - time.monotonic()


class PendingTable:
    """At most one outstanding read per (appId, ncapId) pair."""

    def __init__(self):
        self._lock = threading.Lock()
        self._pending: dict[tuple[uuid.UUID, uuid.UUID], PendingRequest] = {}

    def add(self, command: ReadTedsCommand) -> PendingRequest:
        key = (command.app_id, command.ncap_id)
        with self._lock:
            current = self._pending.get(key)
            if current is not None and current.remaining() > 0:
                raise RequestOutstanding(f"a read for {key[0].hex}/{key[1].hex} is already pending")
            pending = self._pending[key] = PendingRequest.start(command)
            return pending

    def match(self, reply: ReadTedsReply) -> Optional[PendingRequest]:
        """Pop and return the request ``reply`` answers, if any."""
        with self._lock:
            pending = self._pending.get((reply.app_id, reply.ncap_id))
            if pending is None or not netsvc.correlate(pending.command, reply):
                return None
            del self._pending[(reply.app_id, reply.ncap_id)]
            return pending

    def discard(self, command: ReadTedsCommand):
        with self._lock:
            self._pending.pop((command.app_id, command.ncap_id), None)

    def __len__(self):
        return len(self._pending)


@dataclass
class ReadResult:
    reply: ReadTedsReply
    teds: Optional[SecurityTeds]
    elapsed: float


def read_teds_flow(client: MqttClient, command: ReadTedsCommand,
                   table: Optional[PendingTable] = None) -> ReadResult:
    """Publish ``command`` and wait for its reply on an already-connected client.

    Raises FlowTimeout, ReplyError or a TEDS decode error.  Replies that do not
    correlate with the command are ignored.
    """
    table = table if table is not None else PendingTable()
    codes = client.subscribe([netsvc.reply_topic(command.app_id)])
    if codes[0] == 0x80:
        raise PermissionError(f"subscription to {netsvc.reply_topic(command.app_id)} refused")
    pending = table.add(command)
    try:
        client.publish(netsvc.command_topic(command.ncap_id), netsvc.encode_command(command),
                       qos=1, timeout=max(pending.remaining(), 0.01))
        while True:
            remaining = pending.remaining()
            if remaining <= 0:
                raise FlowTimeout(f"no reply within {command.timeout.total_seconds():g}s")
            try:
                message = client.messages.get(timeout=remaining)
            except queue.Empty:
                continue
            try:
                reply = netsvc.decode_reply(message.payload)
            except netsvc.NetSvcError as exc:
                log.warning("ignoring undecodable reply on %s: %s", message.topic, exc)
                continue
            if table.match(reply) is None:
                log.info("ignoring uncorrelated reply app=%s ncap=%s", reply.app_id.hex, reply.ncap_id.hex)
                continue
            break
    finally:
        table.discard(command)
    elapsed = command.timeout.total_seconds() - pending.remaining()
    if reply.error_code != 0:
        raise ReplyError(reply)
    teds = None
    if command.teds_access_code == 16 and command.teds_offset == 0:
        teds = decode_security_teds(reply.raw_teds_block)
    return ReadResult(reply, teds, elapsed)


def make_command(ncap_id: uuid.UUID, app_id: Optional[uuid.UUID] = None, access_code: int = 16,
                 offset: int = 0, timeout: float = 2.0, tim_id: uuid.UUID = netsvc.NIL_UUID,
                 channel_id: int = 0) -> ReadTedsCommand:
    return ReadTedsCommand(app_id or uuid.uuid4(), ncap_id, tim_id, channel_id, access_code,
                           offset, TimeDuration.from_seconds(timeout))


def acl_update_flow(client: MqttClient, token: str, op: Union[Op, str], user: str,
                    access: Union[Access, str], topic_filter: str,
                    timeout: float = ACL_RESULT_TIMEOUT, request_id: Optional[str] = None) -> AclUpdateResult:
    request = AclUpdateRequest(request_id or uuid.uuid4().hex, token, Op(op), user,
                               Access(access), topic_filter)
    deadline = time.monotonic() + timeout
    codes = client.subscribe([RESULT_TOPIC])
    if codes[0] == 0x80:
        raise PermissionError(f"subscription to {RESULT_TOPIC} refused")
    client.publish(CONFIG_TOPIC, format_request(request), qos=1,
                   timeout=max(deadline - time.monotonic(), 0.01))
    while True:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise FlowTimeout(f"no ACL result within {timeout:g}s")
        try:
            message = client.messages.get(timeout=remaining)
        except queue.Empty:
            continue
        try:
            result = parse_result(message.payload)
        except InvalidRequest:
            continue
        if result.request_id == request.request_id:
            return result
