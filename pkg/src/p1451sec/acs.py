"""ACL update service: applies token-scoped rule changes sent over MQTT.

Requests and results are UTF-8 ``key=value`` lines.  Requests arrive on
``1451.1.6/ACL/CONFIG``; each one gets exactly one result on
``1451.1.6/ACL/RESULT``.
"""
from __future__ import annotations

import enum
import logging
import os
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from .acl import (
    Access,
    AclDocument,
    AclRule,
    RuleNotFound,
    add_rule,
    is_within_scope,
    parse_acl,
    remove_rule,
    serialize_acl,
)
from .client import MqttClient, run_service
from .mqtt_proto import InvalidTopic, Publish, validate_filter, validate_topic

log = logging.getLogger(__name__)

CONFIG_TOPIC = "1451.1.6/ACL/CONFIG"
RESULT_TOPIC = "1451.1.6/ACL/RESULT"
REQUEST_KEYS = ("request_id", "token", "op", "user", "access", "topic")
UNKNOWN_REQUEST_ID = "?"


class InvalidRequest(ValueError):
    def __init__(self, message: str, request_id: str = UNKNOWN_REQUEST_ID):
        super().__init__(message)
        self.request_id = request_id


class RegistryError(ValueError):
    pass


class Op(enum.Enum):
    ADD = "add"
    REMOVE = "remove"


class Status(enum.Enum):
    OK = "ok"
    DENIED = "denied"
    INVALID = "invalid"
    ERROR = "error"


@dataclass(frozen=True)
class AccessToken:
    token: str
    scope_prefix: str
    allowed_users: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.token) < 16:
            raise RegistryError("tokens must be at least 16 characters")
        try:
            validate_topic(self.scope_prefix)
        except InvalidTopic as exc:
            raise RegistryError(f"bad scope for token: {exc}") from None

    def permits_user(self, user: str) -> bool:
        return not self.allowed_users or user in self.allowed_users


def parse_registry(text: str) -> dict[str, AccessToken]:
    """One token per line: ``token=<value> scope=<prefix> users=<a,b|*>``."""
    tokens: dict[str, AccessToken] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = {}
        for part in line.split():
            key, sep, value = part.partition("=")
            if not sep or key in fields:
                raise RegistryError(f"line {lineno}: bad or repeated field {part!r}")
            fields[key] = value
        if set(fields) - {"token", "scope", "users"} or not {"token", "scope"} <= set(fields):
            raise RegistryError(f"line {lineno}: need token= and scope= (users= optional)")
        users = fields.get("users", "*")
        allowed = () if users in ("*", "") else tuple(u for u in users.split(",") if u)
        try:
            entry = AccessToken(fields["token"], fields["scope"], allowed)
        except RegistryError as exc:
            raise RegistryError(f"line {lineno}: {exc}") from None
        if entry.token in tokens:
            raise RegistryError(f"line {lineno}: duplicate token")
        tokens[entry.token] = entry
    return tokens


def load_registry(path) -> dict[str, AccessToken]:
    return parse_registry(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class AclUpdateRequest:
    request_id: str
    token: str
    op: Op
    user: str
    access: Access
    filter: str

    @property
    def rule(self) -> AclRule:
        return AclRule(self.user, self.access, self.filter)


@dataclass(frozen=True)
class AclUpdateResult:
    request_id: str
    status: Status
    detail: str = ""


def _kv_lines(payload) -> list[tuple[str, str]]:
    text = payload.decode("utf-8") if isinstance(payload, (bytes, bytearray)) else payload
    pairs = []
    for raw in text.splitlines():
        if not raw.strip():
            continue
        key, sep, value = raw.partition("=")
        if not sep:
            raise InvalidRequest(f"line {raw!r} is not key=value")
        pairs.append((key.strip(), value.strip()))
    return pairs


def parse_request(payload) -> AclUpdateRequest:
    try:
        pairs = _kv_lines(payload)
    except UnicodeDecodeError:
        raise InvalidRequest("payload is not UTF-8") from None
    fields: dict[str, str] = {}
    request_id = next((v for k, v in pairs if k == "request_id"), UNKNOWN_REQUEST_ID) or UNKNOWN_REQUEST_ID

    def fail(message):
        raise InvalidRequest(message, request_id)

    for key, value in pairs:
        if key not in REQUEST_KEYS:
            fail(f"unknown key {key!r}")
        if key in fields:
            fail(f"duplicate key {key!r}")
        fields[key] = value
    missing = [k for k in REQUEST_KEYS if k not in fields]
    if missing:
        fail(f"missing keys: {', '.join(missing)}")
    try:
        op = Op(fields["op"])
    except ValueError:
        fail(f"unknown op {fields['op']!r}")
    try:
        access = Access(fields["access"])
    except ValueError:
        fail(f"unknown access {fields['access']!r}")
    try:
        validate_filter(fields["topic"])
    except InvalidTopic as exc:
        fail(str(exc))
    if not fields["request_id"]:
        fail("empty request_id")
    return AclUpdateRequest(fields["request_id"], fields["token"], op, fields["user"], access, fields["topic"])


def format_request(req: AclUpdateRequest) -> bytes:
    lines = [
        f"request_id={req.request_id}",
        f"token={req.token}",
        f"op={req.op.value}",
        f"user={req.user}",
        f"access={req.access.value}",
        f"topic={req.filter}",
    ]
    return ("\n".join(lines) + "\n").encode("utf-8")


def format_result(result: AclUpdateResult) -> bytes:
    detail = " ".join(result.detail.split())
    return f"request_id={result.request_id}\nstatus={result.status.value}\ndetail={detail}\n".encode("utf-8")


def parse_result(payload) -> AclUpdateResult:
    fields = dict(_kv_lines(payload))
    try:
        return AclUpdateResult(fields["request_id"], Status(fields["status"]), fields.get("detail", ""))
    except (KeyError, ValueError):
        raise InvalidRequest(f"malformed result payload {payload!r}") from None


def handle_request(req: AclUpdateRequest, registry: dict[str, AccessToken],
                   doc: AclDocument) -> tuple[AclUpdateResult, AclDocument]:
    """Decide on ``req``; the document only changes when the status is ok."""
    def result(status: Status, detail: str):
        return AclUpdateResult(req.request_id, status, detail)

    token = registry.get(req.token)
    if token is None:
        return result(Status.DENIED, "unknown token"), doc
    if not token.permits_user(req.user):
        return result(Status.DENIED, f"token may not manage user {req.user!r}"), doc
    if not is_within_scope(token.scope_prefix, req.filter):
        return result(Status.DENIED, f"{req.filter!r} is not below {token.scope_prefix!r}"), doc
    try:
        rule = req.rule
    except ValueError as exc:
        return result(Status.INVALID, str(exc)), doc
    if req.op is Op.ADD:
        new_doc = add_rule(doc, rule)
        detail = "added" if new_doc is not doc else "already present"
        return result(Status.OK, detail), new_doc
    try:
        return result(Status.OK, "removed"), remove_rule(doc, rule)
    except RuleNotFound as exc:
        return result(Status.INVALID, str(exc)), doc


def write_acl_atomic(path, doc: AclDocument):
    """Replace ``path`` with ``doc`` via a synced temp file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(serialize_acl(doc))
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
    dir_fd = os.open(path.parent, os.O_RDONLY)
    try:
        os.fsync(dir_fd)
    finally:
        os.close(dir_fd)


class AcsProcessor:
    """Parses, decides, persists and triggers reload for one request at a time."""

    def __init__(self, registry: dict[str, AccessToken], acl_path,
                 reload: Optional[Callable[[], object]] = None):
        self.registry = registry
        self.acl_path = Path(acl_path)
        self.reload = reload
        self._lock = threading.Lock()

    def process(self, payload) -> AclUpdateResult:
        with self._lock:
            try:
                req = parse_request(payload)
            except InvalidRequest as exc:
                return AclUpdateResult(exc.request_id, Status.INVALID, str(exc))
            try:
                doc = parse_acl(self.acl_path.read_text(encoding="utf-8"))
            except (OSError, ValueError) as exc:
                return AclUpdateResult(req.request_id, Status.ERROR, f"cannot read ACL file: {exc}")
            result, new_doc = handle_request(req, self.registry, doc)
            if result.status is not Status.OK or new_doc is doc:
                return result
            try:
                write_acl_atomic(self.acl_path, new_doc)
            except OSError as exc:
                return AclUpdateResult(req.request_id, Status.ERROR, f"cannot write ACL file: {exc}")
            if self.reload is not None:
                self.reload()
            return result


class AcsService:
    def __init__(self, processor: AcsProcessor, make_client: Callable[[], MqttClient]):
        self.processor = processor
        self.make_client = make_client
        self.stop_event = threading.Event()
        self.ready = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def handle_message(self, client: MqttClient, message: Publish):
        result = self.processor.process(message.payload)
        log.info("acl request %s -> %s (%s)", result.request_id, result.status.value, result.detail)
        client.publish(RESULT_TOPIC, format_result(result), qos=1)

    def run(self):
        run_service(self.make_client, [CONFIG_TOPIC], self.handle_message,
                    self.stop_event, self.ready, name="acs")

    def start(self) -> "AcsService":
        self._thread = threading.Thread(target=self.run, name="acs", daemon=True)
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
