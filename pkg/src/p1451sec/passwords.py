"""Salted SHA-256 password files, one ``username:hexsalt:hexhash`` per line."""
from __future__ import annotations

import hashlib
import hmac
import os
from dataclasses import dataclass
from pathlib import Path


class PasswordFileError(ValueError):
    pass


def hash_password(salt: bytes, password: bytes) -> bytes:
    return hashlib.sha256(salt + b":" + password).digest()


@dataclass(frozen=True)
class Credential:
    username: str
    salt: bytes
    password_hash: bytes

    @classmethod
    def create(cls, username: str, password: str, salt: bytes | None = None) -> "Credential":
        salt = os.urandom(16) if salt is None else salt
        return cls(username, salt, hash_password(salt, password.encode("utf-8")))

    def verify(self, password: bytes) -> bool:
        return hmac.compare_digest(hash_password(self.salt, password), self.password_hash)

    def to_line(self) -> str:
        return f"{self.username}:{self.salt.hex()}:{self.password_hash.hex()}"


def parse_password_file(text: str) -> dict[str, Credential]:
    creds: dict[str, Credential] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        # the username may itself contain ':', so split from the right
        parts = line.rsplit(":", 2)
        if len(parts) != 3 or not parts[0]:
            raise PasswordFileError(f"line {lineno}: expected username:hexsalt:hexhash")
        username, salt_hex, hash_hex = parts
        try:
            salt, digest = bytes.fromhex(salt_hex), bytes.fromhex(hash_hex)
        except ValueError:
            raise PasswordFileError(f"line {lineno}: salt and hash must be hex") from None
        if len(digest) != 32:
            raise PasswordFileError(f"line {lineno}: hash must be 32 octets")
        if username in creds:
            raise PasswordFileError(f"line {lineno}: duplicate user {username!r}")
        creds[username] = Credential(username, salt, digest)
    return creds


def load_password_file(path) -> dict[str, Credential]:
    return parse_password_file(Path(path).read_text(encoding="utf-8"))


def write_password_file(path, users: dict[str, str]) -> Path:
    """Create a password file from plain ``{username: password}``."""
    lines = [Credential.create(u, p).to_line() for u, p in users.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(path)
