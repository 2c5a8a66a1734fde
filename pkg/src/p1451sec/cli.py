"""``p1451sec`` command line: APP flows, service launchers, TEDS tooling.

Exit statuses:

    0  success
    1  other failure (bad input file, ACS persistence error, ...)
    2  usage error
    3  timeout waiting for a reply or result
    4  broker refused the connection (authentication)
    5  protocol or connection error
    6  TEDS decode error (length, checksum, layout)
    7  NCAP replied with a non-zero errorCode
    8  ACL update denied
    9  ACL update invalid
"""
from __future__ import annotations

import argparse
import logging
import signal
import ssl
import sys
import threading
import uuid
from pathlib import Path

from . import netsvc
from .acl import Access
from .acs import AcsProcessor, AcsService, Op, RegistryError, Status, load_registry
from .app import FlowTimeout, ReplyError, acl_update_flow, make_command, pretty_print, read_teds_flow
from .broker import Broker, BrokerConfig, BrokerConfigError
from .client import ClientError, ConnectionRefused, MqttClient, parse_endpoint
from .ncap import NcapConfig, NcapService, repository_for
from .passwords import PasswordFileError
from .teds import (
    DescriptionError,
    TedsError,
    SecurityLevel,
    decode_security_teds,
    encode_security_teds,
    load_description,
)
from .tls import client_context

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_TIMEOUT = 3
EXIT_AUTH = 4
EXIT_PROTOCOL = 5
EXIT_DECODE = 6
EXIT_REPLY_ERROR = 7
EXIT_DENIED = 8
EXIT_INVALID = 9

_STATUS_EXIT = {
    Status.OK: EXIT_OK,
    Status.DENIED: EXIT_DENIED,
    Status.INVALID: EXIT_INVALID,
    Status.ERROR: EXIT_FAILURE,
}

log = logging.getLogger("p1451sec")


def parse_duration(text: str) -> float:
    text = text.strip().lower()
    scale = 1.0
    if text.endswith("ms"):
        text, scale = text[:-2], 0.001
    elif text.endswith("s"):
        text = text[:-1]
    try:
        value = float(text) * scale
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("duration must not be negative")
    return value


def parse_uuid(text: str) -> uuid.UUID:
    try:
        return uuid.UUID(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad UUID {text!r}") from None


def _connection_args(p: argparse.ArgumentParser):
    p.add_argument("--broker", default="127.0.0.1:1883", help="host:port")
    p.add_argument("--username")
    p.add_argument("--password")
    p.add_argument("--client-id", default="")
    p.add_argument("--tls", action="store_true", help="connect over TLS")
    p.add_argument("--ca-cert", type=Path, help="CA bundle used to verify the broker")
    p.add_argument("--insecure", action="store_true", help="skip broker certificate checks")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="p1451sec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("read-teds", help="read a TEDS from an NCAP and print it")
    _connection_args(p)
    p.add_argument("--ncap-id", type=parse_uuid, required=True)
    p.add_argument("--app-id", type=parse_uuid, help="defaults to a random UUID")
    p.add_argument("--tim-id", type=parse_uuid, default=netsvc.NIL_UUID)
    p.add_argument("--channel-id", type=int, default=0)
    p.add_argument("--access-code", type=int, default=16)
    p.add_argument("--offset", type=int, default=0)
    p.add_argument("--timeout", type=parse_duration, default=2.0)

    p = sub.add_parser("encode-teds", help="encode a TEDS description file to a raw block")
    p.add_argument("teds", type=Path)
    p.add_argument("out", type=Path)

    p = sub.add_parser("decode-teds", help="decode and print a raw TEDS block")
    p.add_argument("teds", type=Path)

    p = sub.add_parser("acl-update", help="ask the ACS to add or remove an ACL rule")
    _connection_args(p)
    p.add_argument("--token", required=True)
    p.add_argument("--op", choices=[o.value for o in Op], required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--access", choices=[a.value for a in Access], default="readwrite")
    p.add_argument("--topic", required=True, help="topic filter of the rule")
    p.add_argument("--timeout", type=parse_duration, default=5.0)

    p = sub.add_parser("broker", help="run the MQTT broker")
    p.add_argument("--broker", default="127.0.0.1:1883", help="listen host:port")
    p.add_argument("--level", type=lambda s: SecurityLevel(s.upper()), default=SecurityLevel.N,
                   metavar="{N,A,B,C,D,E}")
    p.add_argument("--passwords", type=Path)
    p.add_argument("--acl", type=Path)
    p.add_argument("--tls-cert", type=Path)
    p.add_argument("--tls-key", type=Path)
    p.add_argument("--acl-poll", type=int, default=500, help="ACL file poll interval in ms")

    p = sub.add_parser("ncap", help="run the NCAP simulator")
    _connection_args(p)
    p.add_argument("--ncap-id", type=parse_uuid, required=True)
    p.add_argument("--teds", type=Path, required=True, help="security TEDS description file")

    p = sub.add_parser("acs", help="run the ACL update service")
    _connection_args(p)
    p.add_argument("--tokens", type=Path, required=True)
    p.add_argument("--acl", type=Path, required=True)
    return parser


def _tls_context(args):
    if not args.tls and not args.ca_cert:
        return None
    return client_context(args.ca_cert, verify=not args.insecure)


def _client(args) -> MqttClient:
    host, port = parse_endpoint(args.broker)
    return MqttClient(host, port, args.client_id, args.username, args.password, tls=_tls_context(args))


def _wait_forever(stop: threading.Event, on_hup=None):
    def _terminate(signum, frame):
        stop.set()

    signal.signal(signal.SIGINT, _terminate)
    signal.signal(signal.SIGTERM, _terminate)
    if on_hup is not None and hasattr(signal, "SIGHUP"):
        signal.signal(signal.SIGHUP, lambda signum, frame: on_hup())
    while not stop.wait(0.2):
        pass


def cmd_read_teds(args) -> int:
    command = make_command(args.ncap_id, args.app_id, args.access_code, args.offset,
                           args.timeout, args.tim_id, args.channel_id)
    with _client(args) as client:
        client.connect()
        result = read_teds_flow(client, command)
    if result.teds is not None:
        print(pretty_print(result.teds), end="")
    else:
        print(result.reply.raw_teds_block.hex())
    log.info("read-teds completed errorCode=%d in %.3fs", result.reply.error_code, result.elapsed)
    return EXIT_OK


def cmd_encode_teds(args) -> int:
    try:
        block = encode_security_teds(load_description(args.teds))
    except DescriptionError as exc:
        print(f"{args.teds}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    args.out.write_bytes(block)
    print(f"wrote {len(block)} octets to {args.out}")
    return EXIT_OK


def cmd_decode_teds(args) -> int:
    print(pretty_print(decode_security_teds(args.teds.read_bytes())), end="")
    return EXIT_OK


def cmd_acl_update(args) -> int:
    with _client(args) as client:
        client.connect()
        result = acl_update_flow(client, args.token, args.op, args.user, args.access,
                                 args.topic, timeout=args.timeout)
    print(f"{result.request_id} {result.status.value} {result.detail}".rstrip())
    return _STATUS_EXIT[result.status]


def cmd_broker(args) -> int:
    host, port = parse_endpoint(args.broker)
    config = BrokerConfig(host, port, args.level, args.passwords, args.acl,
                          args.tls_cert, args.tls_key, args.acl_poll)
    broker = Broker(config).start()
    print("listening on %s:%d" % broker.address, flush=True)
    stop = threading.Event()
    try:
        _wait_forever(stop, on_hup=broker.reload_acl)
    finally:
        broker.stop()
    return EXIT_OK


def cmd_ncap(args) -> int:
    host, port = parse_endpoint(args.broker)
    repo = repository_for(load_description(args.teds))
    config = NcapConfig(args.ncap_id, host, port, args.username, args.password,
                        _tls_context(args), args.client_id or None)
    service = NcapService(config, repo).start()
    try:
        _wait_forever(service.stop_event)
    finally:
        service.stop()
    return EXIT_OK


def cmd_acs(args) -> int:
    processor = AcsProcessor(load_registry(args.tokens), args.acl)
    if not args.acl.is_file():
        raise FileNotFoundError(f"ACL file {args.acl} does not exist")
    args.client_id = args.client_id or "mqtt-acs"
    service = AcsService(processor, lambda: _client(args)).start()
    try:
        _wait_forever(service.stop_event)
    finally:
        service.stop()
    return EXIT_OK


COMMANDS = {
    "read-teds": cmd_read_teds,
    "encode-teds": cmd_encode_teds,
    "decode-teds": cmd_decode_teds,
    "acl-update": cmd_acl_update,
    "broker": cmd_broker,
    "ncap": cmd_ncap,
    "acs": cmd_acs,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except FlowTimeout as exc:
        print(f"timeout: {exc}", file=sys.stderr)
        return EXIT_TIMEOUT
    except ConnectionRefused as exc:
        print(f"auth failure: {exc}", file=sys.stderr)
        return EXIT_AUTH
    except ReplyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REPLY_ERROR
    except TedsError as exc:
        print(f"decode error: {exc}", file=sys.stderr)
        return EXIT_DECODE
    except (ClientError, ssl.SSLError, ConnectionError, PermissionError, netsvc.NetSvcError) as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (OSError, BrokerConfigError, PasswordFileError, RegistryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
