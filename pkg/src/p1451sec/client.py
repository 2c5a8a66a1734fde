"""Blocking MQTT client used by the APP, NCAP and ACS roles."""
from __future__ import annotations

import itertools
import logging
import queue
import socket
import ssl
import threading
import time
from typing import Callable, Iterable, Optional, Union

from .mqtt_proto import (
    Connack,
    ConnackCode,
    Connect,
    Disconnect,
    IncompletePacket,
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
)

log = logging.getLogger(__name__)


class ClientError(Exception):
    pass


class ConnectionRefused(ClientError):
    def __init__(self, return_code: int):
        try:
            label = ConnackCode(return_code).name
        except ValueError:
            label = "UNKNOWN"
        super().__init__(f"broker refused connection: {return_code} ({label})")
        self.return_code = return_code


class ConnectionLost(ClientError):
    pass


def parse_endpoint(text: str, default_port: int = 1883) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text, default_port
    return host.strip("[]") or "127.0.0.1", int(port)


class MqttClient:
    """Minimal synchronous client.

    Incoming PUBLISH packets land on :attr:`messages`; QoS 1 ones are
    acknowledged before being queued.
    """

    def __init__(self, host: str, port: int, client_id: str = "", username: Optional[str] = None,
                 password: Optional[str] = None, keep_alive: int = 30,
                 tls: Optional[ssl.SSLContext] = None, server_hostname: Optional[str] = None):
        self.host, self.port = host, port
        self.client_id = client_id
        self.username = username
        self.password = password
        self.keep_alive = keep_alive
        self.tls = tls
        self.server_hostname = server_hostname or host
        self.messages: "queue.Queue[Publish]" = queue.Queue()
        self.closed = threading.Event()
        self._sock: Optional[socket.socket] = None
        self._send_lock = threading.Lock()
        self._pending: dict[tuple[type, int], tuple[threading.Event, list]] = {}
        self._pending_lock = threading.Lock()
        self._ids = itertools.cycle(range(1, 0x10000))
        self._connack: Optional[Connack] = None
        self._connack_event = threading.Event()
        self._reader_thread: Optional[threading.Thread] = None

    # -- connection ---------------------------------------------------------

    def connect(self, timeout: float = 5.0) -> Connack:
        deadline = time.monotonic() + timeout
        sock = socket.create_connection((self.host, self.port), timeout=timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            if self.tls is not None:
                sock = self.tls.wrap_socket(sock, server_hostname=self.server_hostname)
        except (ssl.SSLError, OSError):
            sock.close()
            raise
        sock.settimeout(None)
        self._sock = sock
        password = self.password.encode("utf-8") if self.password is not None else None
        self._send(Connect(self.client_id, self.username, password, self.keep_alive, True))
        self._reader_thread = threading.Thread(target=self._reader, name=f"mqtt-reader-{self.client_id}",
                                               daemon=True)
        self._reader_thread.start()
        if not self._connack_event.wait(max(0.0, deadline - time.monotonic())):
            self.close()
            raise ClientError("no CONNACK before timeout")
        if self._connack is None:
            raise ConnectionLost("connection closed before CONNACK")
        if self._connack.return_code != ConnackCode.ACCEPTED:
            self.close()
            raise ConnectionRefused(self._connack.return_code)
        if self.keep_alive:
            threading.Thread(target=self._pinger, name="mqtt-ping", daemon=True).start()
        return self._connack

    def disconnect(self):
        if not self.closed.is_set():
            try:
                self._send(Disconnect())
            except (OSError, ClientError):
                pass
        self.close()

    def close(self):
        self.closed.set()
        self._connack_event.set()
        if self._sock is not None:
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            # a live reader closes the socket itself; closing it here could
            # hand its descriptor number to the next connection mid-read
            reader = self._reader_thread
            if reader is None or not reader.is_alive() or reader is threading.current_thread():
                self._sock.close()
        with self._pending_lock:
            for event, _ in self._pending.values():
                event.set()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.disconnect()

    # -- operations ---------------------------------------------------------

    def subscribe(self, filters: Iterable[Union[str, tuple[str, int]]], timeout: float = 5.0) -> tuple[int, ...]:
        entries = tuple((f, QoS.AT_LEAST_ONCE) if isinstance(f, str) else (f[0], QoS(f[1]))
                        for f in filters)
        packet_id = next(self._ids)
        ack = self._request(Subscribe(packet_id, entries), (Suback, packet_id), timeout)
        return ack.return_codes

    def unsubscribe(self, filters: Iterable[str], timeout: float = 5.0):
        packet_id = next(self._ids)
        self._request(Unsubscribe(packet_id, tuple(filters)), (Unsuback, packet_id), timeout)

    def publish(self, topic: str, payload: bytes, qos: int = 0, timeout: float = 5.0):
        if qos == 0:
            self._send(Publish(topic, bytes(payload)))
            return
        packet_id = next(self._ids)
        self._request(Publish(topic, bytes(payload), QoS(qos), packet_id), (Puback, packet_id), timeout)

    def _request(self, packet, key, timeout: float):
        event, slot = threading.Event(), []
        with self._pending_lock:
            self._pending[key] = (event, slot)
        try:
            self._send(packet)
            if not event.wait(timeout):
                raise ClientError(f"no {key[0].__name__} for packet {key[1]} within {timeout}s")
            if not slot:
                raise ConnectionLost("connection closed while waiting for acknowledgement")
            return slot[0]
        finally:
            with self._pending_lock:
                self._pending.pop(key, None)

    def _send(self, packet):
        if self._sock is None or self.closed.is_set():
            raise ConnectionLost("not connected")
        data = encode_packet(packet)
        with self._send_lock:
            try:
                self._sock.sendall(data)
            except OSError as exc:
                self.close()
                raise ConnectionLost(str(exc)) from None

    # -- background threads -------------------------------------------------

    def _reader(self):
        buf = b""
        try:
            while True:
                try:
                    packet, used = decode_packet(buf)
                except IncompletePacket:
                    chunk = self._sock.recv(65536)
                    if not chunk:
                        break
                    buf += chunk
                    continue
                buf = buf[used:]
                self._dispatch(packet)
        except (OSError, MqttError) as exc:
            if not self.closed.is_set():
                log.debug("reader stopped: %s", exc)
        finally:
            self.close()

    def _dispatch(self, packet):
        if isinstance(packet, Connack):
            self._connack = packet
            self._connack_event.set()
        elif isinstance(packet, Publish):
            if packet.qos == QoS.AT_LEAST_ONCE:
                self._send(Puback(packet.packet_id))
            self.messages.put(packet)
        elif isinstance(packet, (Puback, Suback, Unsuback)):
            with self._pending_lock:
                waiter = self._pending.get((type(packet), packet.packet_id))
            if waiter is not None:
                waiter[1].append(packet)
                waiter[0].set()
        elif isinstance(packet, Pingresp):
            pass
        else:
            log.warning("unexpected packet from broker: %r", packet)

    def _pinger(self):
        while not self.closed.wait(self.keep_alive / 2):
            try:
                self._send(Pingreq())
            except ClientError:
                return


def run_service(make_client: Callable[[], MqttClient], filters: list[str],
                handle: Callable[[MqttClient, Publish], None], stop: threading.Event,
                ready: Optional[threading.Event] = None, name: str = "service",
                max_backoff: float = 10.0):
    """Connect, subscribe, and feed messages to ``handle`` one at a time.

    Reconnects with exponential backoff whenever the connection drops.
    """
    backoff = 0.25
    while not stop.is_set():
        client = make_client()
        try:
            client.connect()
            codes = client.subscribe(filters)
            if any(code == 0x80 for code in codes):
                log.error("%s: subscription refused for %s", name, filters)
            log.info("%s: subscribed filters=%s codes=%s", name, ",".join(filters), list(codes))
            if ready is not None:
                ready.set()
            backoff = 0.25
            while not stop.is_set():
                try:
                    message = client.messages.get(timeout=0.1)
                except queue.Empty:
                    if client.closed.is_set():
                        raise ConnectionLost("broker connection closed")
                    continue
                handle(client, message)
        except (OSError, ClientError) as exc:
            log.warning("%s: %s; reconnecting in %.2fs", name, exc, backoff)
            client.close()
            if stop.wait(backoff):
                break
            backoff = min(backoff * 2, max_backoff)
            continue
        finally:
            if stop.is_set():
                client.disconnect()
