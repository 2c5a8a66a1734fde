"""Access-control documents: Mosquitto-style ``user``/``topic`` files.

Documents are immutable; ``add_rule``/``remove_rule`` return new ones so a
broker can swap whole snapshots without locking readers.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

from .mqtt_proto import InvalidTopic, filter_matches, validate_filter, validate_topic


class AclParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class RuleNotFound(LookupError):
    pass


class Access(enum.Enum):
    READ = "read"
    WRITE = "write"
    READWRITE = "readwrite"

    @property
    def can_read(self) -> bool:
        return self is not Access.WRITE

    @property
    def can_write(self) -> bool:
        return self is not Access.READ


@dataclass(frozen=True)
class AclRule:
    username: str
    access: Access
    filter: str

    def __post_init__(self):
        validate_filter(self.filter)
        if self.filter != self.filter.strip() or "\n" in self.filter or "\r" in self.filter:
            raise InvalidTopic(f"filter {self.filter!r} cannot be stored in an ACL file")
        if self.username != self.username.strip() or "\n" in self.username or "\r" in self.username:
            raise ValueError(f"username {self.username!r} cannot be stored in an ACL file")


@dataclass(frozen=True)
class AclDocument:
    rules: tuple[AclRule, ...] = ()


def parse_acl(text: str) -> AclDocument:
    """Parse ACL text.

    ``user <name>`` opens a section (a bare ``user`` line is the anonymous,
    empty-named user); ``topic [read|write|readwrite] <filter>`` adds a rule
    to it.
    """
    rules = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        keyword, _, rest = line.partition(" ")
        rest = rest.strip()
        if keyword == "user":
            current = rest
        elif keyword == "topic":
            if current is None:
                raise AclParseError(lineno, "topic line before any user line")
            access = Access.READWRITE
            first, _, remainder = rest.partition(" ")
            if first in {a.value for a in Access} and remainder.strip():
                access, rest = Access(first), remainder.strip()
            if not rest:
                raise AclParseError(lineno, "topic line without a filter")
            try:
                rules.append(AclRule(current, access, rest))
            except ValueError as exc:
                raise AclParseError(lineno, str(exc)) from None
        else:
            raise AclParseError(lineno, f"unknown keyword {keyword!r}")
    return AclDocument(tuple(rules))


def serialize_acl(doc: AclDocument) -> str:
    lines = []
    current = None
    for rule in doc.rules:
        if rule.username != current:
            if lines:
                lines.append("")
            lines.append(f"user {rule.username}".rstrip())
            current = rule.username
        lines.append(f"topic {rule.access.value} {rule.filter}")
    return "\n".join(lines) + "\n" if lines else ""


def filter_covers(general: str, specific: str) -> bool:
    """True when every topic matched by ``specific`` is matched by ``general``."""
    g = general.split("/")
    s = specific.split("/")
    # wildcard-led filters skip '$' topics, so a '$' literal first level
    # is only covered by an identical literal
    if s[0].startswith("$") and g[0] in ("+", "#"):
        return False
    for i, level in enumerate(g):
        if level == "#":
            return True
        if i >= len(s):
            return False
        if s[i] == "#":
            # s matches every continuation of its prefix, including the bare
            # prefix unless that would be the (invalid) empty topic; g can
            # only cover that with a tail of '+' levels ending in '#'
            tail = g[i:]
            min_extra = 1 if i == 0 or (i == 1 and s[0] == "") else 0
            return (tail[-1] == "#" and all(x == "+" for x in tail[:-1])
                    and len(tail) - 1 <= min_extra)
        if level != "+" and (s[i] == "+" or s[i] != level):
            return False
    return len(g) == len(s)


def _rules_for(doc: AclDocument, username: str):
    return (r for r in doc.rules if r.username == username)


def check_publish(doc: AclDocument, username: str, topic: str) -> bool:
    return any(r.access.can_write and filter_matches(r.filter, topic)
               for r in _rules_for(doc, username))


def check_read(doc: AclDocument, username: str, topic: str) -> bool:
    """Whether ``username`` may receive a message published on ``topic``."""
    return any(r.access.can_read and filter_matches(r.filter, topic)
               for r in _rules_for(doc, username))


def check_subscribe(doc: AclDocument, username: str, requested: str) -> bool:
    return any(r.access.can_read and filter_covers(r.filter, requested)
               for r in _rules_for(doc, username))


def add_rule(doc: AclDocument, rule: AclRule) -> AclDocument:
    if rule in doc.rules:
        return doc
    return AclDocument(doc.rules + (rule,))


def remove_rule(doc: AclDocument, rule: AclRule) -> AclDocument:
    kept = tuple(r for r in doc.rules if r != rule)
    if len(kept) == len(doc.rules):
        raise RuleNotFound(f"no rule {rule.username!r} {rule.access.value} {rule.filter!r}")
    return AclDocument(kept)


def is_within_scope(scope_prefix: str, topic_filter: str) -> bool:
    """True if ``topic_filter`` sits strictly below ``scope_prefix``."""
    try:
        validate_topic(scope_prefix)
        validate_filter(topic_filter)
    except InvalidTopic:
        return False
    head = scope_prefix + "/"
    return topic_filter.startswith(head) and len(topic_filter) > len(head)
