"""Command line: serve, import-ecore, validate, user, manifest.

Machine-readable output goes to stdout as JSON, diagnostics to stderr.
Exit status: 0 ok, 1 operational failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import getpass
import json
import logging
import os
import sys
from pathlib import Path

from .config import ENV_PREFIX, ConfigError, load_config
from .ecore import import_ecore_xmi
from .instance import InstanceError
from .manifest import generate_manifest
from .metamodel import MetamodelError, dump_metamodel
from .registry import Registry, RegistryError
from .security import DEFAULT_KDF, UserStore, UserStoreError, manage_users


class CliError(Exception):
    pass


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, ensure_ascii=False))


def _models_dir(args) -> Path:
    if args.models_dir:
        return Path(args.models_dir)
    if args.config:
        return load_config(args.config).models_dir
    return Path(os.environ.get(ENV_PREFIX + "MODELS_DIR", "models"))


def _users_file(args) -> Path:
    if args.users_file:
        return Path(args.users_file)
    if args.config:
        return load_config(args.config).users_file
    return Path(os.environ.get(ENV_PREFIX + "USERS_FILE", "users.json"))


def cmd_serve(args) -> int:
    from .server import boot

    config = load_config(args.config)
    if args.insecure_http:
        config.insecure_http = True
    service = boot(config)
    print(f"listening on {service.url}", file=sys.stderr)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        service.httpd.server_close()
    return 0


def cmd_import_ecore(args) -> int:
    try:
        m = import_ecore_xmi(Path(args.input).read_bytes())
    except OSError as exc:
        raise CliError(f"{args.input}: {exc.strerror}") from None
    Path(args.output).write_text(dump_metamodel(m), encoding="utf-8")
    _emit({"model": m.model_id, "classes": len(m.classes), "output": args.output})
    return 0


def cmd_validate(args) -> int:
    registry = Registry(_models_dir(args))
    i = registry.instance(args.model, args.instance)
    report = registry.models[args.model].validator(i)
    _emit(report.to_json(i))
    return 1 if report else 0


def _password(args) -> str:
    if args.password is not None:
        return args.password
    if not sys.stdin.isatty():
        return sys.stdin.readline().rstrip("\n")
    return getpass.getpass(f"password for {args.username}: ")


def cmd_user(args) -> int:
    kdf = dict(DEFAULT_KDF)
    if args.kdf_n:
        kdf["n"] = args.kdf_n
    store = UserStore.load(_users_file(args), kdf)
    action = args.action.replace("-", "_")
    password = _password(args) if action in ("add", "set_password") else None
    u = manage_users(store, action, args.username, password=password, roles=args.role)
    _emit(u.public() if u is not None else {"removed": args.username})
    return 0


def cmd_manifest(args) -> int:
    registry = Registry(_models_dir(args))
    m = registry.metamodel(args.model)
    sys.stdout.write(generate_manifest(m, args.base_url))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modelrest", description="REST API server for model instances")
    p.add_argument("-v", "--verbose", action="store_true", help="log to stderr at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    def locations(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--config", help="server config file to take paths from")
        sp.add_argument("--models-dir", help="directory of metamodels and instances")

    sp = sub.add_parser("serve", help="run the HTTPS server")
    sp.add_argument("--config", required=True)
    sp.add_argument("--insecure-http", action="store_true", help="allow plain HTTP (development only)")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("import-ecore", help="convert an .ecore file to a JSON metamodel")
    sp.add_argument("input")
    sp.add_argument("output")
    sp.set_defaults(func=cmd_import_ecore)

    sp = sub.add_parser("validate", help="check an instance against its invariants")
    sp.add_argument("model")
    sp.add_argument("instance")
    locations(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("user", help="manage the user store")
    sp.add_argument("action", choices=["add", "remove", "set-roles", "set-password"])
    sp.add_argument("username")
    sp.add_argument("--role", action="append", default=[], help="role to grant (repeatable)")
    sp.add_argument("--password", help="password (default: prompt, or first line of stdin)")
    sp.add_argument("--users-file")
    sp.add_argument("--config")
    sp.add_argument("--kdf-n", type=int, help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_user)

    sp = sub.add_parser("manifest", help="print the route manifest of a model")
    sp.add_argument("model")
    sp.add_argument("--base-url", default="https://localhost")
    locations(sp)
    sp.set_defaults(func=cmd_manifest)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RegistryError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 1
    except (CliError, ConfigError, MetamodelError, InstanceError, UserStoreError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
