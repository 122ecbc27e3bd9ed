"""Basic authentication, class-level role checks and the user store."""
from __future__ import annotations

import base64
import binascii
import copy
import hashlib
import hmac
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .metamodel import ClassDef
from .storage import atomic_write

REALM = "emf-rest"
CHALLENGE = f'Basic realm="{REALM}"'
DEFAULT_ROLE = "user"
ADMIN_ROLE = "admin"

# scrypt cost; stored per entry so it can be raised without a migration
DEFAULT_KDF = {"name": "scrypt", "n": 2 ** 14, "r": 8, "p": 1, "dklen": 32}


class AuthError(Exception):
    """Authentication failed (401)."""


class UserStoreError(Exception):
    pass


class DuplicateUser(UserStoreError):
    pass


class UnknownUser(UserStoreError):
    pass


class LastAdmin(UserStoreError):
    pass


def _normalize_roles(roles) -> tuple[str, ...]:
    out = {DEFAULT_ROLE}
    for r in roles:
        if not isinstance(r, str) or not r.strip():
            raise UserStoreError(f"invalid role {r!r}")
        out.add(r.strip().lower())
    return tuple(sorted(out))


def hash_password(password: str, salt: bytes, params: dict[str, Any]) -> bytes:
    if params.get("name", "scrypt") != "scrypt":
        raise UserStoreError(f"unsupported kdf {params.get('name')!r}")
    n, r, p = int(params["n"]), int(params["r"]), int(params["p"])
    return hashlib.scrypt(password.encode("utf-8"), salt=salt, n=n, r=r, p=p,
                          dklen=int(params.get("dklen", 32)), maxmem=128 * r * (n + p + 2) + 1024 * 1024)


@dataclass(frozen=True)
class User:
    username: str
    password_hash: bytes = field(repr=False)
    salt: bytes = field(repr=False)
    kdf_params: dict = field(default_factory=lambda: dict(DEFAULT_KDF), compare=False, hash=False)
    roles: tuple[str, ...] = (DEFAULT_ROLE,)

    @property
    def is_admin(self) -> bool:
        return ADMIN_ROLE in self.roles

    def public(self) -> dict[str, Any]:
        return {"username": self.username, "roles": list(self.roles)}

    def to_json(self) -> dict[str, Any]:
        return {
            "username": self.username,
            "hash": base64.b64encode(self.password_hash).decode("ascii"),
            "salt": base64.b64encode(self.salt).decode("ascii"),
            "kdf_params": self.kdf_params,
            "roles": list(self.roles),
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "User":
        try:
            return cls(
                username=d["username"],
                password_hash=base64.b64decode(d["hash"], validate=True),
                salt=base64.b64decode(d["salt"], validate=True),
                kdf_params=dict(d["kdf_params"]),
                roles=_normalize_roles(d.get("roles", ())),
            )
        except (KeyError, TypeError, binascii.Error) as exc:
            raise UserStoreError(f"malformed user entry: {exc}") from None


def make_user(username: str, password: str, roles=(), kdf: dict | None = None) -> User:
    if not isinstance(username, str) or not username or ":" in username:
        raise UserStoreError("username must be non-empty and contain no ':'")
    params = dict(kdf or DEFAULT_KDF)
    salt = os.urandom(16)
    return User(username, hash_password(password, salt, params), salt, params, _normalize_roles(roles))


class UserStore:
    """File-backed users table; every change rewrites the file atomically."""

    def __init__(self, path: str | Path | None = None, kdf: dict | None = None):
        self.path = Path(path) if path is not None else None
        self.kdf = dict(kdf or DEFAULT_KDF)
        self.users: dict[str, User] = {}
        self.lock = threading.RLock()
        self._dummy_salt = os.urandom(16)

    @classmethod
    def load(cls, path: str | Path, kdf: dict | None = None) -> "UserStore":
        store = cls(path, kdf)
        p = Path(path)
        if p.exists():
            try:
                rows = json.loads(p.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise UserStoreError(f"{p}: {exc}") from None
            if not isinstance(rows, list):
                raise UserStoreError(f"{p}: expected a JSON array")
            for row in rows:
                u = User.from_json(row)
                if u.username in store.users:
                    raise UserStoreError(f"{p}: duplicate username {u.username!r}")
                store.users[u.username] = u
        return store

    def dumps(self) -> str:
        return json.dumps([u.to_json() for u in self.users.values()], indent=2) + "\n"

    def save(self) -> None:
        if self.path is not None:
            atomic_write(self.path, self.dumps())

    def get(self, username: str) -> User:
        try:
            return self.users[username]
        except KeyError:
            raise UnknownUser(f"unknown username {username!r}") from None

    def check_password(self, username: str, password: str) -> User | None:
        """Constant-time check; unknown users still pay for one hash."""
        u = self.users.get(username)
        if u is None:
            # same cost as a real entry, result discarded
            params = next(iter(self.users.values())).kdf_params if self.users else self.kdf
            hash_password(password, self._dummy_salt, params)
            return None
        digest = hash_password(password, u.salt, u.kdf_params)
        return u if hmac.compare_digest(digest, u.password_hash) else None

    def _commit(self, users: dict[str, User]) -> None:
        had_admin = any(u.is_admin for u in self.users.values())
        if had_admin and not any(u.is_admin for u in users.values()):
            raise LastAdmin("refusing to remove the last admin")
        previous = self.users
        self.users = users
        try:
            self.save()
        except OSError:
            self.users = previous
            raise


def manage_users(store: UserStore, action: str, username: str, *,
                 password: str | None = None, roles=None) -> User | None:
    """Apply one admin action; returns the affected user (None on remove)."""
    with store.lock:
        users = copy.copy(store.users)
        if action == "add":
            if username in users:
                raise DuplicateUser(f"duplicate username {username!r}")
            if password is None:
                raise UserStoreError("password required")
            u = make_user(username, password, roles or (), store.kdf)
            users[username] = u
        elif action == "remove":
            store.get(username)
            del users[username]
            u = None
        elif action == "set_roles":
            old = store.get(username)
            u = User(old.username, old.password_hash, old.salt, old.kdf_params, _normalize_roles(roles or ()))
            users[username] = u
        elif action == "set_password":
            store.get(username)
            if password is None:
                raise UserStoreError("password required")
            old = users[username]
            u = make_user(username, password, old.roles, store.kdf)
            users[username] = u
        else:
            raise UserStoreError(f"unknown action {action!r}")
        store._commit(users)
        return u


def authenticate(store: UserStore, header: str | None) -> User:
    """Decode ``Authorization: Basic ...`` and verify it against ``store``."""
    if not header:
        raise AuthError("credentials required")
    scheme, _, token = header.strip().partition(" ")
    if scheme.lower() != "basic" or not token.strip():
        raise AuthError("Basic authentication required")
    try:
        decoded = base64.b64decode(token.strip(), validate=True).decode("utf-8")
    except (binascii.Error, UnicodeDecodeError):
        raise AuthError("malformed credentials") from None
    username, sep, password = decoded.partition(":")
    if not sep:
        raise AuthError("malformed credentials")
    user = store.check_password(username, password)
    if user is None:
        raise AuthError("invalid credentials")
    return user


def authorize(roles, cls: ClassDef) -> bool:
    """Class-level check; no annotation means any authenticated user."""
    required = {r.lower() for r in cls.annotations.roles}
    if not required:
        return True
    return bool(required & {r.lower() for r in roles})


def basic_header(username: str, password: str) -> str:
    token = base64.b64encode(f"{username}:{password}".encode("utf-8")).decode("ascii")
    return f"Basic {token}"
