"""A small threaded MQTT 3.1.1 broker that enforces a security level.

Encryption means the listener speaks TLS only; authentication means CONNECT
must carry a valid username/password; authorization means every SUBSCRIBE
and PUBLISH is checked against the current ACL snapshot.
"""
from __future__ import annotations

import itertools
import logging
import os
import socket
import ssl
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import acl as acl_engine
from .mqtt_proto import (
    SUBACK_FAILURE,
    Connack,
    ConnackCode,
    Connect,
    Disconnect,
    IncompletePacket,
    InvalidTopic,
    MqttError,
    Pingreq,
    Pingresp,
    Puback,
    Publish,
    QoS,
    Suback,
    Subscribe,
    Unsuback,
    Unsubscribe,
    decode_packet,
    encode_packet,
    filter_matches,
    validate_filter,
)
from .passwords import Credential, load_password_file
from .teds import Policy, SecurityLevel, level_policies
from .tls import server_context

log = logging.getLogger(__name__)


class BrokerConfigError(ValueError):
    pass


def log_event(event: str, client_id=None, topic=None, decision=None, **extra):
    fields = {"event": event, "client_id": client_id, "topic": topic, "decision": decision, **extra}
    log.info(" ".join(f"{k}={v}" for k, v in fields.items() if v is not None))


@dataclass
class BrokerConfig:
    host: str = "127.0.0.1"
    port: int = 1883
    level: SecurityLevel = SecurityLevel.N
    password_file: Optional[Path] = None
    acl_file: Optional[Path] = None
    tls_cert: Optional[Path] = None
    tls_key: Optional[Path] = None
    acl_poll_interval_ms: int = 500
    retry_interval: float = 5.0
    connect_timeout: float = 10.0

    def validate(self):
        policies = level_policies(self.level)
        if Policy.ENCRYPTION in policies and not (self.tls_cert and self.tls_key):
            raise BrokerConfigError(f"level {self.level.value} needs a TLS certificate and key")
        if Policy.AUTHENTICATION in policies and not self.password_file:
            raise BrokerConfigError(f"level {self.level.value} needs a password file")
        if Policy.AUTHORIZATION in policies and not self.acl_file:
            raise BrokerConfigError(f"level {self.level.value} needs an ACL file")
        if self.acl_poll_interval_ms <= 0:
            raise BrokerConfigError("acl_poll_interval_ms must be positive")
        for name in ("password_file", "acl_file", "tls_cert", "tls_key"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise BrokerConfigError(f"{name} {path} does not exist")


def authenticate(connect: Connect, level: SecurityLevel,
                 credentials: Optional[dict[str, Credential]]) -> int:
    """Return the CONNACK code for ``connect`` under ``level``."""
    required = Policy.AUTHENTICATION in level_policies(level)
    if connect.username is None:
        return ConnackCode.NOT_AUTHORIZED if required else ConnackCode.ACCEPTED
    if credentials is None:
        # no password file at an auth-free level: nothing to check against
        return ConnackCode.ACCEPTED
    cred = credentials.get(connect.username)
    if cred is None or not cred.verify(connect.password or b""):
        return ConnackCode.BAD_USERNAME_OR_PASSWORD
    return ConnackCode.ACCEPTED


def authorize_publish(level: SecurityLevel, doc: Optional[acl_engine.AclDocument],
                      username: Optional[str], topic: str) -> bool:
    if Policy.AUTHORIZATION not in level_policies(level):
        return True
    return acl_engine.check_publish(doc or acl_engine.AclDocument(), username or "", topic)


def authorize_subscribe(level: SecurityLevel, doc: Optional[acl_engine.AclDocument],
                        username: Optional[str], topic_filter: str) -> bool:
    if Policy.AUTHORIZATION not in level_policies(level):
        return True
    return acl_engine.check_subscribe(doc or acl_engine.AclDocument(), username or "", topic_filter)


@dataclass
class ReloadOutcome:
    ok: bool
    error: Optional[str] = None
    revoked: list[tuple[str, str]] = field(default_factory=list)


class _Session:
    def __init__(self, broker: "Broker", sock: socket.socket, peer):
        self.broker = broker
        self.sock = sock
        self.peer = peer
        self.client_id: Optional[str] = None
        self.username: Optional[str] = None
        self.subscriptions: dict[str, QoS] = {}
        self.connected = False
        self.inflight: dict[int, tuple[Publish, float]] = {}
        self._send_lock = threading.Lock()
        self._ids = itertools.cycle(range(1, 0x10000))
        self._closed = threading.Event()

    def send(self, packet) -> bool:
        data = encode_packet(packet)
        with self._send_lock:
            if self._closed.is_set():
                return False
            try:
                self.sock.sendall(data)
                return True
            except OSError:
                self._closed.set()
                return False

    def deliver(self, publish: Publish, qos: QoS):
        if qos == QoS.AT_LEAST_ONCE:
            with self._send_lock:
                packet_id = next(pid for pid in self._ids if pid not in self.inflight)
                out = Publish(publish.topic, publish.payload, qos, packet_id)
                self.inflight[packet_id] = (out, time.monotonic())
        else:
            out = Publish(publish.topic, publish.payload)
        self.send(out)

    def close(self):
        """Wake the serving thread; it alone releases the descriptor."""
        self._closed.set()
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass

    @property
    def closed(self) -> bool:
        return self._closed.is_set()


class Broker:
    """Usage: ``with Broker(config).start() as broker: ...``"""

    def __init__(self, config: BrokerConfig):
        config.validate()
        self.config = config
        self.credentials = load_password_file(config.password_file) if config.password_file else None
        self._acl = acl_engine.parse_acl(Path(config.acl_file).read_text("utf-8")) if config.acl_file else None
        self._tls = server_context(config.tls_cert, config.tls_key) if config.tls_cert else None
        self._lock = threading.RLock()
        self._sessions: dict[str, _Session] = {}
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._listener: Optional[socket.socket] = None
        self._acl_signature = self._stat_acl()

    # -- lifecycle ------------------------------------------------------------

    def start(self) -> "Broker":
        listener = socket.create_server((self.config.host, self.config.port), reuse_port=False)
        listener.settimeout(0.1)
        self._listener = listener
        self._spawn(self._accept_loop, "accept")
        self._spawn(self._retransmit_loop, "retransmit")
        if self.config.acl_file:
            self._spawn(self._poll_acl_loop, "acl-poll")
        log_event("started", level=self.config.level.value,
                  address="%s:%d" % self.address, tls=self._tls is not None)
        return self

    def stop(self):
        self._stop.set()
        if self._listener is not None:
            self._listener.close()
        with self._lock:
            sessions = list(self._sessions.values())
        for session in sessions:
            session.close()
        for thread in self._threads:
            if thread is not threading.current_thread():
                thread.join(timeout=2)
        log_event("stopped")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()

    @property
    def address(self) -> tuple[str, int]:
        return self._listener.getsockname()[:2]

    @property
    def acl(self) -> Optional[acl_engine.AclDocument]:
        return self._acl

    def _spawn(self, target, name, *args):
        thread = threading.Thread(target=target, args=args, name=f"broker-{name}", daemon=True)
        thread.start()
        self._threads.append(thread)
        self._threads = [t for t in self._threads if t.is_alive()]

    # -- ACL reload -----------------------------------------------------------

    def _stat_acl(self):
        if not self.config.acl_file:
            return None
        try:
            st = os.stat(self.config.acl_file)
        except OSError:
            return None
        return (st.st_mtime_ns, st.st_size, st.st_ino)

    def reload_acl(self) -> ReloadOutcome:
        """Re-read the ACL file and swap it in; keeps the old one on error."""
        if not self.config.acl_file:
            return ReloadOutcome(False, "no ACL file configured")
        with self._lock:
            self._acl_signature = self._stat_acl()
            try:
                doc = acl_engine.parse_acl(Path(self.config.acl_file).read_text("utf-8"))
            except (OSError, UnicodeDecodeError, acl_engine.AclParseError) as exc:
                log_event("acl_reload", decision="kept_old", error=repr(str(exc)))
                return ReloadOutcome(False, str(exc))
            self._acl = doc
            revoked = []
            for session in self._sessions.values():
                for topic_filter in list(session.subscriptions):
                    if not authorize_subscribe(self.config.level, doc, session.username, topic_filter):
                        del session.subscriptions[topic_filter]
                        revoked.append((session.client_id, topic_filter))
                        log_event("revoke", session.client_id, topic_filter, "deny")
        log_event("acl_reload", decision="ok", rules=len(doc.rules))
        return ReloadOutcome(True, revoked=revoked)

    def _poll_acl_loop(self):
        interval = self.config.acl_poll_interval_ms / 1000
        while not self._stop.wait(interval):
            signature = self._stat_acl()
            if signature is not None and signature != self._acl_signature:
                self.reload_acl()

    # -- networking -----------------------------------------------------------

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                sock, peer = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            self._spawn(self._serve, f"conn-{peer[1]}", sock, peer)

    def _serve(self, sock: socket.socket, peer):
        sock.settimeout(self.config.connect_timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        if self._tls is not None:
            try:
                sock = self._tls.wrap_socket(sock, server_side=True)
            except (ssl.SSLError, OSError) as exc:
                log_event("tls_rejected", peer=f"{peer[0]}:{peer[1]}", error=type(exc).__name__)
                sock.close()
                return
        session = _Session(self, sock, peer)
        try:
            self._read_loop(session)
        except (OSError, MqttError) as exc:
            log_event("connection_error", session.client_id, error=repr(str(exc)))
        finally:
            self._drop(session)
            session.sock.close()

    def _read_loop(self, session: _Session):
        buf = b""
        while not self._stop.is_set():
            try:
                packet, used = decode_packet(buf)
            except IncompletePacket:
                try:
                    chunk = session.sock.recv(65536)
                except socket.timeout:
                    log_event("keepalive_timeout" if session.connected else "connect_timeout",
                              session.client_id)
                    return
                if not chunk:
                    return
                buf += chunk
                continue
            buf = buf[used:]
            if not session.connected:
                if not isinstance(packet, Connect) or not self._on_connect(session, packet):
                    return
                continue
            if not self._handle(session, packet):
                return

    def _on_connect(self, session: _Session, connect: Connect) -> bool:
        code = authenticate(connect, self.config.level, self.credentials)
        client_id = connect.client_id or f"auto-{uuid.uuid4().hex[:12]}"
        if code == ConnackCode.ACCEPTED and not connect.client_id and not connect.clean_session:
            code = ConnackCode.IDENTIFIER_REJECTED
        log_event("connect", client_id, decision="accept" if code == 0 else "reject",
                  username=connect.username, code=int(code))
        session.send(Connack(False, int(code)))
        if code != ConnackCode.ACCEPTED:
            return False
        session.client_id = client_id
        session.username = connect.username
        session.connected = True
        session.sock.settimeout(connect.keep_alive * 1.5 if connect.keep_alive else None)
        with self._lock:
            previous = self._sessions.get(client_id)
            self._sessions[client_id] = session
        if previous is not None:
            log_event("takeover", client_id)
            previous.close()
        return True

    def _drop(self, session: _Session):
        with self._lock:
            if session.client_id and self._sessions.get(session.client_id) is session:
                del self._sessions[session.client_id]
        if session.connected:
            log_event("disconnect", session.client_id)
        session.close()

    def _handle(self, session: _Session, packet) -> bool:
        if isinstance(packet, Publish):
            self._on_publish(session, packet)
        elif isinstance(packet, Puback):
            with session._send_lock:
                session.inflight.pop(packet.packet_id, None)
        elif isinstance(packet, Subscribe):
            self._on_subscribe(session, packet)
        elif isinstance(packet, Unsubscribe):
            with self._lock:
                for topic_filter in packet.filters:
                    session.subscriptions.pop(topic_filter, None)
            session.send(Unsuback(packet.packet_id))
        elif isinstance(packet, Pingreq):
            session.send(Pingresp())
        elif isinstance(packet, Disconnect):
            return False
        else:
            log_event("protocol_error", session.client_id, packet=type(packet).__name__)
            return False
        return True

    def _on_subscribe(self, session: _Session, packet: Subscribe):
        codes = []
        with self._lock:
            for topic_filter, qos in packet.entries:
                try:
                    validate_filter(topic_filter)
                except InvalidTopic:
                    codes.append(SUBACK_FAILURE)
                    log_event("subscribe", session.client_id, topic_filter, "invalid")
                    continue
                if authorize_subscribe(self.config.level, self._acl, session.username, topic_filter):
                    session.subscriptions[topic_filter] = QoS(min(qos, QoS.AT_LEAST_ONCE))
                    codes.append(int(session.subscriptions[topic_filter]))
                    log_event("subscribe", session.client_id, topic_filter, "allow")
                else:
                    codes.append(SUBACK_FAILURE)
                    log_event("subscribe", session.client_id, topic_filter, "deny")
        session.send(Suback(packet.packet_id, tuple(codes)))

    def _on_publish(self, session: _Session, packet: Publish):
        allowed = authorize_publish(self.config.level, self._acl, session.username, packet.topic)
        log_event("publish", session.client_id, packet.topic, "allow" if allowed else "deny",
                  qos=int(packet.qos))
        if allowed:
            for target, qos in self.route(packet):
                target.deliver(packet, qos)
        if packet.qos == QoS.AT_LEAST_ONCE:
            session.send(Puback(packet.packet_id))

    def route(self, packet: Publish) -> list[tuple[_Session, QoS]]:
        """One delivery per matching subscription entry of each live session."""
        with self._lock:
            return [
                (s, QoS(min(packet.qos, sub_qos)))
                for s in self._sessions.values() if not s.closed
                for topic_filter, sub_qos in s.subscriptions.items()
                if filter_matches(topic_filter, packet.topic)
            ]

    def _retransmit_loop(self):
        interval = self.config.retry_interval
        while not self._stop.wait(min(interval / 2, 0.5)):
            now = time.monotonic()
            with self._lock:
                sessions = list(self._sessions.values())
            for session in sessions:
                with session._send_lock:
                    due = [(pid, pub) for pid, (pub, sent) in session.inflight.items()
                           if now - sent >= interval]
                    for pid, pub in due:
                        session.inflight[pid] = (pub, now)
                for pid, pub in due:
                    session.send(Publish(pub.topic, pub.payload, pub.qos, pid, dup=True))

    # -- introspection for tests ---------------------------------------------

    def subscriptions(self, client_id: str) -> dict[str, QoS]:
        with self._lock:
            session = self._sessions.get(client_id)
            return dict(session.subscriptions) if session else {}

    def client_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._sessions)
