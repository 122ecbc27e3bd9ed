"""Server configuration: a JSON file plus environment overrides."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

ENV_PREFIX = "MODELREST_"


class ConfigError(Exception):
    pass


@dataclass
class ServerConfig:
    models_dir: Path
    users_file: Path
    host: str = "127.0.0.1"
    port: int = 8443
    tls_cert: Path | None = None
    tls_key: Path | None = None
    insecure_http: bool = False
    cors_allowed_origins: list[str] = field(default_factory=list)
    base_url: str | None = None

    @property
    def scheme(self) -> str:
        return "http" if self.tls_cert is None else "https"

    def check(self) -> None:
        if (self.tls_cert is None) != (self.tls_key is None):
            raise ConfigError("tls needs both cert and key")
        if self.tls_cert is None and not self.insecure_http:
            raise ConfigError("TLS is not configured; set tls.cert/tls.key or insecure_http")
        if self.tls_cert is not None:
            for p in (self.tls_cert, self.tls_key):
                if not p.is_file():
                    raise ConfigError(f"{p}: no such file")
        if not self.models_dir.is_dir():
            raise ConfigError(f"models_dir {self.models_dir}: not a directory")
        if not 0 <= self.port <= 65535:
            raise ConfigError(f"port {self.port} out of range")


def _path(value, base: Path, key: str) -> Path:
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{key} must be a non-empty string")
    p = Path(value)
    return p if p.is_absolute() else base / p


def config_from_dict(doc: dict, base: Path = Path("."), env: Mapping[str, str] | None = None) -> ServerConfig:
    """Build a config; relative paths are taken against ``base``."""
    env = os.environ if env is None else env
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    known = {"host", "port", "tls", "insecure_http", "models_dir", "users_file",
             "cors_allowed_origins", "base_url"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    doc = dict(doc)
    tls = doc.get("tls") or {}
    if not isinstance(tls, dict) or not set(tls) <= {"cert", "key"}:
        raise ConfigError("tls must be an object with cert and key")
    tls = dict(tls)
    overrides = {
        "HOST": ("host", doc), "PORT": ("port", doc), "MODELS_DIR": ("models_dir", doc),
        "USERS_FILE": ("users_file", doc), "TLS_CERT": ("cert", tls), "TLS_KEY": ("key", tls),
        "BASE_URL": ("base_url", doc),
    }
    for suffix, (key, target) in overrides.items():
        if ENV_PREFIX + suffix in env:
            target[key] = env[ENV_PREFIX + suffix]
    try:
        port = int(doc.get("port", 8443))
    except (TypeError, ValueError):
        raise ConfigError(f"port must be an integer, got {doc.get('port')!r}") from None
    origins = doc.get("cors_allowed_origins", [])
    if not isinstance(origins, list) or not all(isinstance(o, str) for o in origins):
        raise ConfigError("cors_allowed_origins must be a list of strings")
    insecure = doc.get("insecure_http", False)
    if not isinstance(insecure, bool):
        raise ConfigError("insecure_http must be a boolean")
    for key in ("models_dir", "users_file"):
        if key not in doc:
            raise ConfigError(f"missing {key}")
    return ServerConfig(
        models_dir=_path(doc["models_dir"], base, "models_dir"),
        users_file=_path(doc["users_file"], base, "users_file"),
        host=str(doc.get("host", "127.0.0.1")),
        port=port,
        tls_cert=_path(tls["cert"], base, "tls.cert") if tls.get("cert") else None,
        tls_key=_path(tls["key"], base, "tls.key") if tls.get("key") else None,
        insecure_http=insecure,
        cors_allowed_origins=origins,
        base_url=doc.get("base_url") or None,
    )


def load_config(path: str | Path, env: Mapping[str, str] | None = None) -> ServerConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(doc, path.parent, env)
