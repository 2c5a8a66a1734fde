"""Security TEDS codec plus the lookup tables it refers to.

Wire layout of a raw TEDS block::

    Length (UInt32 BE, counts every following octet incl. checksum)
    TLV fields, ascending type, each (type: u8, length: u8, value)
        3  TEDSID          5 octets
        10 Level           1 octet, ASCII letter
        11 NumOfStandards  1 octet
        12+2i / 13+2i      standard code / version code of entry i
    Checksum (UInt16 BE) over Length and all TLVs
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from pathlib import Path

FIELD_TEDS_ID = 3
FIELD_LEVEL = 10
FIELD_NUM_STANDARDS = 11
FIELD_FIRST_STANDARD = 12
# Types that may be carried through as opaque, unrecognised fields.
UNKNOWN_FIELD_TYPES = frozenset([0, 1, 2, 4, 5, 6, 7, 8, 9])
MAX_ENTRIES = (255 - FIELD_FIRST_STANDARD + 1) // 2   # 122

SECURITY_TEDS_ACCESS_CODE = 16
STANDARD_TLS = 10
STANDARD_MQTT_ACL = 128
RESERVED_STANDARDS = range(14, 128)


class TedsError(ValueError):
    pass


class TedsTruncated(TedsError):
    pass


class TedsLengthMismatch(TedsError):
    pass


class TedsChecksumError(TedsError):
    pass


class ReservedStandardCode(TedsError):
    pass


class Policy(enum.Enum):
    ENCRYPTION = "encryption"
    AUTHENTICATION = "authentication"
    AUTHORIZATION = "authorization"


class SecurityLevel(enum.Enum):
    N = "N"
    A = "A"
    B = "B"
    C = "C"
    D = "D"
    E = "E"

    @property
    def octet(self) -> int:
        return ord(self.value)

    @classmethod
    def from_octet(cls, value: int) -> "SecurityLevel":
        try:
            return cls(chr(value))
        except ValueError:
            raise TedsError(f"level octet {value:#04x} is not one of N, A-E") from None


_POLICIES = {
    SecurityLevel.N: frozenset(),
    SecurityLevel.A: frozenset({Policy.ENCRYPTION}),
    SecurityLevel.B: frozenset({Policy.AUTHENTICATION}),
    SecurityLevel.C: frozenset({Policy.ENCRYPTION, Policy.AUTHENTICATION}),
    SecurityLevel.D: frozenset({Policy.AUTHENTICATION, Policy.AUTHORIZATION}),
    SecurityLevel.E: frozenset(Policy),
}


def level_policies(level: SecurityLevel) -> frozenset[Policy]:
    return _POLICIES[level]


_STANDARD_NAMES = {
    1: "NIST CSF",
    2: "PCI-DSS",
    3: "FIPS-140-2",
    4: "NSA Suite B",
    5: "ChaCha20",
    6: "AES",
    7: "ISO 29192",
    8: "LDAP",
    9: "OAuth",
    10: "TLS",
    11: "VPN",
    12: "Username/Password",
    13: "Client Identifier",
    128: "MQTT-ACL",
}


def standard_name(code: int) -> str:
    if code in _STANDARD_NAMES:
        return _STANDARD_NAMES[code]
    if code >= 129:
        return "User-defined"
    return "Reserved"


_TLS_VERSIONS = {0: "Default", 1: "TLS 1.0", 2: "TLS 1.1", 3: "TLS 1.2", 4: "TLS 1.3"}


def tls_version_name(code: int) -> str:
    return _TLS_VERSIONS.get(code, "Manufacturer-defined")


@dataclass(frozen=True)
class TedsId:
    family_major: int = 1
    family_minor: int = 6
    access_code: int = SECURITY_TEDS_ACCESS_CODE
    teds_version: int = 2
    tuple_length: int = 1

    def to_bytes(self) -> bytes:
        return bytes([self.family_major, self.family_minor, self.access_code,
                      self.teds_version, self.tuple_length])

    @classmethod
    def from_bytes(cls, raw: bytes) -> "TedsId":
        if len(raw) != 5:
            raise TedsError(f"TEDSID must be 5 octets, got {len(raw)}")
        return cls(*raw)


@dataclass(frozen=True)
class SecurityStandardEntry:
    standard: int
    version: int


@dataclass(frozen=True)
class SecurityTeds:
    level: SecurityLevel
    entries: tuple[SecurityStandardEntry, ...] = ()
    teds_id: TedsId = TedsId()
    unknown_fields: tuple[tuple[int, bytes], ...] = field(default=())


def compute_checksum(data: bytes) -> int:
    """Ones'-complement style trailer: 0xFFFF minus the 16-bit octet sum."""
    return 0xFFFF - (sum(data) & 0xFFFF)


def _tlv(ftype: int, value: bytes) -> bytes:
    if len(value) > 255:
        raise TedsError(f"field {ftype} value longer than 255 octets")
    return bytes([ftype, len(value)]) + value


def encode_security_teds(teds: SecurityTeds) -> bytes:
    entries = teds.entries
    if len(entries) > MAX_ENTRIES:
        raise TedsError(f"at most {MAX_ENTRIES} standards fit in a TEDS, got {len(entries)}")
    fields: list[tuple[int, bytes]] = [
        (FIELD_TEDS_ID, teds.teds_id.to_bytes()),
        (FIELD_LEVEL, bytes([teds.level.octet])),
        (FIELD_NUM_STANDARDS, bytes([len(entries)])),
    ]
    for i, entry in enumerate(entries):
        if entry.standard in RESERVED_STANDARDS:
            raise ReservedStandardCode(f"standard code {entry.standard} is reserved")
        if not (0 <= entry.standard <= 255 and 0 <= entry.version <= 255):
            raise TedsError(f"entry {i} codes must fit in one octet")
        fields.append((FIELD_FIRST_STANDARD + 2 * i, bytes([entry.standard])))
        fields.append((FIELD_FIRST_STANDARD + 2 * i + 1, bytes([entry.version])))
    seen = set()
    for ftype, _ in teds.unknown_fields:
        if ftype not in UNKNOWN_FIELD_TYPES or ftype in seen:
            raise TedsError(f"cannot carry opaque field type {ftype}")
        seen.add(ftype)
    fields.extend(teds.unknown_fields)
    fields.sort(key=lambda f: f[0])

    body = b"".join(_tlv(ftype, value) for ftype, value in fields)
    head = (len(body) + 2).to_bytes(4, "big") + body
    return head + compute_checksum(head).to_bytes(2, "big")


def decode_security_teds(block: bytes) -> SecurityTeds:
    block = bytes(block)
    if len(block) < 6:
        raise TedsTruncated(f"block of {len(block)} octets is too short")
    declared = int.from_bytes(block[:4], "big")
    if declared != len(block) - 4:
        raise TedsLengthMismatch(f"length field says {declared}, block carries {len(block) - 4}")
    stored = int.from_bytes(block[-2:], "big")
    if compute_checksum(block[:-2]) != stored:
        raise TedsChecksumError(f"checksum {stored:#06x} does not match contents")

    body = block[4:-2]
    fields: dict[int, bytes] = {}
    pos, last_type = 0, -1
    while pos < len(body):
        if pos + 2 > len(body):
            raise TedsTruncated("TLV header cut short")
        ftype, flen = body[pos], body[pos + 1]
        if pos + 2 + flen > len(body):
            raise TedsTruncated(f"field {ftype} value cut short")
        if ftype <= last_type:
            raise TedsError(f"field {ftype} out of order or repeated")
        fields[ftype] = body[pos + 2:pos + 2 + flen]
        last_type = ftype
        pos += 2 + flen

    for required in (FIELD_TEDS_ID, FIELD_LEVEL, FIELD_NUM_STANDARDS):
        if required not in fields:
            raise TedsError(f"required field {required} missing")
    teds_id = TedsId.from_bytes(fields.pop(FIELD_TEDS_ID))
    level_raw = fields.pop(FIELD_LEVEL)
    count_raw = fields.pop(FIELD_NUM_STANDARDS)
    if len(level_raw) != 1 or len(count_raw) != 1:
        raise TedsError("Level and NumOfStandards must be single octets")
    level = SecurityLevel.from_octet(level_raw[0])
    count = count_raw[0]

    entries = []
    for i in range(count):
        name = fields.pop(FIELD_FIRST_STANDARD + 2 * i, None)
        version = fields.pop(FIELD_FIRST_STANDARD + 2 * i + 1, None)
        if name is None or version is None:
            raise TedsError(f"NumOfStandards is {count} but entry {i} is incomplete")
        if len(name) != 1 or len(version) != 1:
            raise TedsError(f"entry {i} fields must be single octets")
        if name[0] in RESERVED_STANDARDS:
            raise ReservedStandardCode(f"entry {i} uses reserved standard code {name[0]}")
        entries.append(SecurityStandardEntry(name[0], version[0]))

    extra = sorted(t for t in fields if t >= FIELD_FIRST_STANDARD)
    if extra:
        raise TedsError(f"NumOfStandards is {count} but standard fields {extra} are present")
    unknown = tuple(sorted(fields.items()))
    return SecurityTeds(level, tuple(entries), teds_id, unknown)


# -- textual description (CLI input) ----------------------------------------

class DescriptionError(TedsError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _octet(text: str, lineno: int, what: str) -> int:
    try:
        value = int(text.strip(), 0)
    except ValueError:
        raise DescriptionError(lineno, f"{what} {text.strip()!r} is not an integer") from None
    if not 0 <= value <= 255:
        raise DescriptionError(lineno, f"{what} {value} does not fit in one octet")
    return value


def parse_description(text: str) -> SecurityTeds:
    """Parse ``level=E`` / ``standard=<code>,<version>`` lines.

    ``teds_id=1 6 16 2 1`` is accepted too; blank lines and ``#`` comments
    are skipped.
    """
    level = None
    teds_id = TedsId()
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip().lower()
        if not sep:
            raise DescriptionError(lineno, f"expected key=value, got {line!r}")
        if key == "level":
            if level is not None:
                raise DescriptionError(lineno, "level given twice")
            try:
                level = SecurityLevel(value.strip().upper())
            except ValueError:
                raise DescriptionError(lineno, f"unknown security level {value.strip()!r}") from None
        elif key == "standard":
            parts = value.split(",")
            if len(parts) != 2:
                raise DescriptionError(lineno, "standard needs <code>,<version>")
            code = _octet(parts[0], lineno, "standard code")
            if code in RESERVED_STANDARDS:
                raise DescriptionError(lineno, f"standard code {code} is reserved")
            entries.append(SecurityStandardEntry(code, _octet(parts[1], lineno, "version code")))
        elif key == "teds_id":
            parts = re.split(r"[\s,]+", value.strip())
            if len(parts) != 5:
                raise DescriptionError(lineno, "teds_id needs 5 octets")
            teds_id = TedsId(*(_octet(p, lineno, "teds_id octet") for p in parts))
        else:
            raise DescriptionError(lineno, f"unknown key {key!r}")
    if level is None:
        raise DescriptionError(0, "no level line")
    if len(entries) > MAX_ENTRIES:
        raise DescriptionError(0, f"more than {MAX_ENTRIES} standards")
    return SecurityTeds(level, tuple(entries), teds_id)


def format_description(teds: SecurityTeds) -> str:
    tid = teds.teds_id
    lines = [
        f"teds_id={tid.family_major} {tid.family_minor} {tid.access_code} "
        f"{tid.teds_version} {tid.tuple_length}",
        f"level={teds.level.value}",
    ]
    lines += [f"standard={e.standard},{e.version}" for e in teds.entries]
    return "\n".join(lines) + "\n"


def load_description(path) -> SecurityTeds:
    return parse_description(Path(path).read_text(encoding="utf-8"))


GOLDEN_TEDS = SecurityTeds(
    SecurityLevel.E,
    (
        SecurityStandardEntry(STANDARD_TLS, 4),
        SecurityStandardEntry(12, 1),
        SecurityStandardEntry(STANDARD_MQTT_ACL, 1),
    ),
)
