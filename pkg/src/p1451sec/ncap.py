"""NCAP simulator: a TEDS repository answering read-TEDS commands over MQTT."""
from __future__ import annotations

import logging
import threading
import uuid
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Optional

from . import netsvc
from .client import MqttClient, run_service
from .mqtt_proto import Publish
from .netsvc import ErrorCode, ReadTedsCommand, ReadTedsReply
from .teds import SECURITY_TEDS_ACCESS_CODE, SecurityTeds, decode_security_teds, encode_security_teds

log = logging.getLogger(__name__)

TedsKey = tuple[uuid.UUID, int, int]


@dataclass(frozen=True)
class TedsRepository:
    blocks: Mapping[TedsKey, bytes] = field(default_factory=lambda: MappingProxyType({}))

    def lookup(self, tim_id: uuid.UUID, channel_id: int, access_code: int) -> Optional[bytes]:
        return self.blocks.get((tim_id, channel_id, access_code))

    def __len__(self):
        return len(self.blocks)


def register_teds(repo: TedsRepository, tim_id: uuid.UUID, channel_id: int,
                  access_code: int, block: bytes) -> TedsRepository:
    """Return a new repository holding ``block``; replaces any previous entry.

    Security TEDS are decoded first so a corrupt block never gets stored.
    """
    block = bytes(block)
    if access_code == SECURITY_TEDS_ACCESS_CODE:
        decode_security_teds(block)
    blocks = dict(repo.blocks)
    blocks[(tim_id, channel_id, access_code)] = block
    return TedsRepository(MappingProxyType(blocks))


def repository_for(teds: SecurityTeds) -> TedsRepository:
    """Repository with ``teds`` as the NCAP-level security TEDS."""
    return register_teds(TedsRepository(), netsvc.NIL_UUID, 0, SECURITY_TEDS_ACCESS_CODE,
                         encode_security_teds(teds))


def handle_read_teds(cmd: ReadTedsCommand, repo: TedsRepository, ncap_id: uuid.UUID) -> ReadTedsReply:
    def reply(code: ErrorCode, block: bytes = b"") -> ReadTedsReply:
        return ReadTedsReply(int(code), cmd.app_id, cmd.ncap_id, cmd.tim_id, cmd.channel_id,
                             cmd.teds_offset, block)

    if cmd.ncap_id != ncap_id:
        return reply(ErrorCode.UNKNOWN_TIM_OR_CHANNEL)
    block = repo.lookup(cmd.tim_id, cmd.channel_id, cmd.teds_access_code)
    if block is None:
        return reply(ErrorCode.TEDS_NOT_FOUND)
    if cmd.teds_offset >= len(block):
        return reply(ErrorCode.INVALID_OFFSET)
    return reply(ErrorCode.SUCCESS, block[cmd.teds_offset:])


@dataclass
class NcapConfig:
    ncap_id: uuid.UUID
    host: str = "127.0.0.1"
    port: int = 1883
    username: Optional[str] = None
    password: Optional[str] = None
    tls: Optional[object] = None   # ssl.SSLContext
    client_id: Optional[str] = None

    def __post_init__(self):
        if self.ncap_id.int == 0:
            raise ValueError("ncap_id must be non-zero")


class NcapService:
    def __init__(self, config: NcapConfig, repo: TedsRepository):
        self.config = config
        self.repo = repo
        self.stop_event = threading.Event()
        self.ready = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def _make_client(self) -> MqttClient:
        c = self.config
        return MqttClient(c.host, c.port, c.client_id or f"ncap-{c.ncap_id.hex[:12]}",
                          c.username, c.password, tls=c.tls)

    def handle_message(self, client: MqttClient, message: Publish):
        try:
            cmd = netsvc.decode_command(message.payload)
        except netsvc.NetSvcError as exc:
            log.warning("dropping malformed command on %s: %s", message.topic, exc)
            return
        reply = handle_read_teds(cmd, self.repo, self.config.ncap_id)
        log.info("read-teds app=%s access=%d offset=%d -> error_code=%d",
                 cmd.app_id.hex, cmd.teds_access_code, cmd.teds_offset, reply.error_code)
        client.publish(netsvc.reply_topic(cmd.app_id), netsvc.encode_reply(reply), qos=1)

    def run(self):
        run_service(self._make_client, [netsvc.command_topic(self.config.ncap_id)],
                    self.handle_message, self.stop_event, self.ready, name="ncap")

    def start(self) -> "NcapService":
        self._thread = threading.Thread(target=self.run, name="ncap", daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.stop_event.set()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()
