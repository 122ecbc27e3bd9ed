"""HTTP semantics of the generated API, independent of any server.

:meth:`Api.handle` turns an :class:`ApiRequest` into an
:class:`ApiResponse`. Order of checks: OPTIONS preflight (no credentials),
authentication, content negotiation, URL shape (404/400/405), resource
resolution (404), authorization (403), then the operation itself.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any
from urllib.parse import parse_qs, quote, unquote

from .instance import (
    BadPath,
    Element,
    InstanceError,
    InvalidOperation,
    LoadError,
    ModelInstance,
    NotFound,
    PayloadError,
    ResourcePath,
    StorageError,
    ValidationFailed,
    create_element,
    delete_element,
    parse_resource_path,
    resolve_path,
    update_element,
)
from .metamodel import Metamodel, ReferenceDef, concrete_subtypes
from .registry import Registry
from .representation import (
    JSON,
    MEDIA_TYPES,
    XML,
    UnaddressableError,
    WireDocument,
    dumps_json,
    error_document,
    parse_payload,
    render,
    resource_url,
)
from .security import (
    CHALLENGE,
    AuthError,
    DuplicateUser,
    LastAdmin,
    UnknownUser,
    UserStore,
    UserStoreError,
    authenticate,
    authorize,
    manage_users,
)

log = logging.getLogger(__name__)

METHODS = ("GET", "HEAD", "PUT", "POST", "DELETE", "OPTIONS")
_CONTENT_TYPES = {"application/json": JSON, "application/xml": XML, "text/xml": XML}


class HttpError(Exception):
    def __init__(self, status: int, message: str, violations: list[str] | None = None,
                 headers: dict[str, str] | None = None):
        self.status = status
        self.message = message
        self.violations = violations or []
        self.headers = headers or {}
        super().__init__(message)


@dataclass
class ApiRequest:
    method: str
    path: str
    query: str = ""
    headers: dict[str, str] = field(default_factory=dict)
    body: bytes = b""
    # scheme://host used for URIs when the server has no base_url override
    base_url: str = "https://localhost"

    def __post_init__(self) -> None:
        self.method = self.method.upper()
        self.headers = {k.lower(): v for k, v in self.headers.items()}

    def header(self, name: str) -> str | None:
        return self.headers.get(name.lower())


@dataclass
class ApiResponse:
    status: int
    headers: dict[str, str] = field(default_factory=dict)
    body: bytes = b""


# -- URL and negotiation -----------------------------------------------------

def parse_request_url(path: str, query: str = "") -> ResourcePath:
    """Map ``/rest/{M}/{I}/ref/id...`` plus ``?index=`` to a ResourcePath.

    Raises NotFound for short paths and BadPath for a malformed or
    repeated ``index`` parameter; other parameters are ignored.
    """
    params = parse_qs(query, keep_blank_values=True)
    index = params.get("index")
    if index is not None and len(index) != 1:
        raise BadPath("index given more than once")
    return parse_resource_path(path, index[0] if index else None)


def _media_ranges(accept: str) -> list[tuple[str, float]]:
    out = []
    for part in accept.split(","):
        pieces = [p.strip() for p in part.split(";")]
        media = pieces[0].lower()
        if not media:
            continue
        q = 1.0
        for p in pieces[1:]:
            k, _, v = p.partition("=")
            if k.strip().lower() == "q":
                try:
                    q = float(v)
                except ValueError:
                    q = 0.0
        out.append((media, q))
    return out


def _quality(fmt: str, ranges: list[tuple[str, float]]) -> float:
    media = MEDIA_TYPES[fmt]
    kind = media.split("/")[0]
    # the most specific matching range decides
    best = (-1, 0.0)
    for r, q in ranges:
        spec = 2 if r == media else 1 if r == f"{kind}/*" else 0 if r == "*/*" else -1
        if spec > best[0]:
            best = (spec, q)
    return best[1] if best[0] >= 0 else 0.0


def negotiate(accept: str | None, content_type: str | None) -> tuple[str, str | None]:
    """Return (response format, request body format or None)."""
    request_fmt = None
    if content_type:
        media, *params = [p.strip() for p in content_type.split(";")]
        request_fmt = _CONTENT_TYPES.get(media.lower())
        for p in params:
            k, _, v = p.partition("=")
            if k.lower() == "charset" and v.strip('"').lower() not in ("utf-8", "utf8"):
                request_fmt = None
        if request_fmt is None:
            raise HttpError(415, f"unsupported content type {content_type!r}")
    if not accept or not accept.strip():
        return JSON, request_fmt
    ranges = _media_ranges(accept)
    scored = [(q, -n, fmt) for n, fmt in enumerate((JSON, XML)) if (q := _quality(fmt, ranges)) > 0]
    if not scored:
        raise HttpError(406, f"cannot produce any of {accept!r}")
    return max(scored)[2], request_fmt


# -- static shape ------------------------------------------------------------

ROOT_METHODS = ("GET", "HEAD", "PUT", "OPTIONS")
ELEMENT_METHODS = ("GET", "HEAD", "PUT", "DELETE", "OPTIONS")
# reached through a cross-reference: deleting would destroy the target
# rather than unlink it, so DELETE is refused there
LINKED_METHODS = ("GET", "HEAD", "PUT", "OPTIONS")
CONTAINMENT_METHODS = ("GET", "HEAD", "POST", "OPTIONS")
CROSS_METHODS = ("GET", "HEAD", "OPTIONS")


@dataclass(frozen=True)
class Shape:
    kind: str  # root | element | collection
    declared: str  # declared class of the addressed resource
    containment: bool = False  # the last reference step owns its targets

    @property
    def allow(self) -> tuple[str, ...]:
        if self.kind == "root":
            return ROOT_METHODS
        if self.kind == "element":
            return ELEMENT_METHODS if self.containment else LINKED_METHODS
        return CONTAINMENT_METHODS if self.containment else CROSS_METHODS


def _find_reference(m: Metamodel, cls: str, name: str) -> ReferenceDef | None:
    for c in [m.get(cls)] + concrete_subtypes(cls, m):
        f = m.feature(c.name, name)
        if isinstance(f, ReferenceDef):
            return f
    return None


def static_shape(m: Metamodel, root_cls: str, p: ResourcePath) -> Shape:
    """Type a path against the metamodel alone, without looking up ids."""
    shape = Shape("root", root_cls)
    for seg in p.segments:
        if shape.kind == "collection":
            shape = Shape("element", shape.declared, shape.containment)
            continue
        ref = _find_reference(m, shape.declared, seg)
        if ref is None:
            raise NotFound(f"{shape.declared} has no reference {seg!r}")
        shape = Shape("collection" if ref.many else "element", ref.target, ref.containment)
    if p.index is not None:
        if shape.kind != "collection":
            raise BadPath("index applies only to a collection")
        shape = Shape("element", shape.declared, shape.containment)
    return shape


# -- the API -----------------------------------------------------------------

def _json_body(body: bytes) -> Any:
    try:
        return json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HttpError(400, f"malformed JSON: {exc}") from None


class Api:
    def __init__(self, registry: Registry, users: UserStore, *, base_url: str | None = None,
                 cors_allowed_origins: list[str] | tuple[str, ...] = ()):
        self.registry = registry
        self.users = users
        self.base_url = base_url.rstrip("/") if base_url else None
        self.cors_allowed_origins = tuple(cors_allowed_origins)

    # -- entry point

    def handle(self, req: ApiRequest) -> ApiResponse:
        fmt = JSON
        try:
            try:
                fmt = negotiate(req.header("accept"), None)[0]
            except HttpError:
                pass
            if req.method not in METHODS:
                raise HttpError(501, f"method {req.method} not implemented")
            if req.method == "OPTIONS":
                resp = self._options(req)
            else:
                try:
                    user = authenticate(self.users, req.header("authorization"))
                except AuthError as exc:
                    raise HttpError(401, str(exc), headers={"WWW-Authenticate": CHALLENGE}) from None
                fmt, body_fmt = negotiate(req.header("accept"), req.header("content-type") if req.body else None)
                if self._is_admin_path(req.path):
                    resp = self._admin(req, user, fmt)
                else:
                    resp = self._resource(req, user, fmt, body_fmt)
        except HttpError as exc:
            resp = self._error(exc.status, exc.message, exc.violations, fmt)
            resp.headers.update(exc.headers)
        except Exception:  # pragma: no cover - defensive
            log.exception("unhandled error for %s %s", req.method, req.path)
            resp = self._error(500, "internal server error", [], fmt)
        self._cors(req, resp)
        resp.headers["Content-Length"] = str(len(resp.body))
        if req.method == "HEAD":
            resp.body = b""
        return resp

    dispatch = handle

    # -- helpers

    def _base(self, req: ApiRequest) -> str:
        return self.base_url or req.base_url.rstrip("/")

    @staticmethod
    def _is_admin_path(path: str) -> bool:
        return path == "/rest/admin" or path.startswith("/rest/admin/")

    def _error(self, status: int, message: str, violations: list[str], fmt: str) -> ApiResponse:
        doc = error_document(status, message, violations, fmt)
        return self._document(status, doc)

    @staticmethod
    def _document(status: int, doc: WireDocument, headers: dict[str, str] | None = None) -> ApiResponse:
        h = {"Content-Type": f"{doc.media_type}; charset=utf-8"}
        h.update(headers or {})
        return ApiResponse(status, h, doc.body.encode("utf-8"))

    def _cors(self, req: ApiRequest, resp: ApiResponse) -> None:
        origin = req.header("origin")
        if not origin or not ({origin, "*"} & set(self.cors_allowed_origins)):
            return
        resp.headers["Access-Control-Allow-Origin"] = origin
        resp.headers["Access-Control-Allow-Credentials"] = "true"
        resp.headers["Vary"] = "Origin"
        if req.method == "OPTIONS" and req.header("access-control-request-method") and "Allow" in resp.headers:
            resp.headers["Access-Control-Allow-Methods"] = resp.headers["Allow"]
            resp.headers["Access-Control-Allow-Headers"] = "Authorization, Content-Type, Accept"
            resp.headers["Access-Control-Max-Age"] = "600"

    def _locate(self, req: ApiRequest) -> tuple[ModelInstance, ResourcePath, Shape]:
        try:
            p = parse_request_url(req.path, req.query)
            i = self.registry.instance(p.model_id, p.instance_id)
            shape = static_shape(i.metamodel, i.root().cls, p)
        except NotFound as exc:
            raise HttpError(404, str(exc)) from None
        except BadPath as exc:
            raise HttpError(400, str(exc)) from None
        except LoadError as exc:
            log.error("%s", exc)
            raise HttpError(500, "instance could not be loaded") from None
        return i, p, shape

    # -- OPTIONS

    def _options(self, req: ApiRequest) -> ApiResponse:
        if self._is_admin_path(req.path):
            allow = self._admin_allow(req.path)
        else:
            allow = self._locate(req)[2].allow
        return ApiResponse(204, {"Allow": ", ".join(allow)})

    # -- model resources

    def _resource(self, req: ApiRequest, user, fmt: str, body_fmt: str | None) -> ApiResponse:
        i, p, shape = self._locate(req)
        method = "GET" if req.method == "HEAD" else req.method
        if method not in shape.allow:
            raise HttpError(405, f"{req.method} is not allowed on this {shape.kind}",
                            headers={"Allow": ", ".join(shape.allow)})
        base = self._base(req)
        m = i.metamodel
        with i.lock:
            try:
                target = resolve_path(i, p)
            except NotFound as exc:
                raise HttpError(404, str(exc)) from None
            except BadPath as exc:
                raise HttpError(400, str(exc)) from None
            addressed = m.get(target.cls if isinstance(target, Element) else shape.declared)
            if not authorize(user.roles, addressed):
                raise HttpError(403, f"access to {addressed.name} requires role {', '.join(addressed.annotations.roles)}")
            try:
                if method == "GET":
                    return self._document(200, render(i, target, base, fmt))
                if method == "DELETE":
                    delete_element(i, target)
                    return ApiResponse(204, {})
                payload = self._payload(req, body_fmt, shape.declared, m)
                if method == "POST":
                    cls = m.get(payload.cls)
                    if not authorize(user.roles, cls):
                        raise HttpError(403, f"access to {cls.name} requires role {', '.join(cls.annotations.roles)}")
                    e = create_element(i, target, payload.cls, payload)
                    headers = {}
                    try:
                        headers["Location"] = resource_url(i, e, base)
                    except UnaddressableError:
                        # only a fragment URI exists; it would GET the root
                        pass
                    return self._document(201, render(i, e, base, fmt), headers)
                e = update_element(i, target, payload)
                return self._document(200, render(i, e, base, fmt))
            except ValidationFailed as exc:
                raise HttpError(400, "constraint violation", exc.report.names()
                                if hasattr(exc.report, "names") else []) from None
            except InvalidOperation as exc:
                raise HttpError(405, str(exc), headers={"Allow": ", ".join(shape.allow)}) from None
            except PayloadError as exc:
                raise HttpError(400, str(exc)) from None
            except StorageError as exc:
                log.error("%s", exc)
                raise HttpError(500, "storage failure; change rolled back") from None

    @staticmethod
    def _payload(req: ApiRequest, body_fmt: str | None, expected: str, m: Metamodel):
        if not req.body:
            raise HttpError(400, "request body required")
        try:
            text = req.body.decode("utf-8")
        except UnicodeDecodeError:
            raise HttpError(400, "body is not UTF-8") from None
        return parse_payload(WireDocument(body_fmt or JSON, text), expected, m)

    # -- admin

    @staticmethod
    def _admin_parts(path: str) -> list[str]:
        return [unquote(s) for s in path[len("/rest/admin"):].strip("/").split("/") if s]

    def _admin_allow(self, path: str) -> tuple[str, ...]:
        parts = self._admin_parts(path)
        if parts == ["users"]:
            return ("GET", "HEAD", "POST", "OPTIONS")
        if len(parts) == 2 and parts[0] == "users":
            return ("GET", "HEAD", "PUT", "DELETE", "OPTIONS")
        if len(parts) == 3 and parts[0] == "validation":
            return ("GET", "HEAD", "PUT", "OPTIONS")
        raise HttpError(404, f"no admin resource {path}")

    def _admin(self, req: ApiRequest, user, fmt: str) -> ApiResponse:
        allow = self._admin_allow(req.path)
        if not user.is_admin:
            raise HttpError(403, "administrator role required")
        method = "GET" if req.method == "HEAD" else req.method
        if method not in allow:
            raise HttpError(405, f"{req.method} not allowed", headers={"Allow": ", ".join(allow)})
        if fmt != JSON:
            raise HttpError(406, "admin resources are JSON only")
        parts = self._admin_parts(req.path)
        try:
            if parts[0] == "validation":
                return self._admin_validation(req, method, parts[1], parts[2])
            return self._admin_users(req, method, parts[1] if len(parts) > 1 else None)
        except (DuplicateUser, LastAdmin) as exc:
            raise HttpError(409, str(exc)) from None
        except UnknownUser as exc:
            raise HttpError(404, str(exc)) from None
        except UserStoreError as exc:
            raise HttpError(400, str(exc)) from None

    @staticmethod
    def _json(status: int, obj: Any, headers: dict[str, str] | None = None) -> ApiResponse:
        return Api._document(status, WireDocument(JSON, dumps_json(obj)), headers)

    def _admin_users(self, req: ApiRequest, method: str, name: str | None) -> ApiResponse:
        if name is None:
            if method == "GET":
                return self._json(200, [u.public() for u in self.users.users.values()])
            doc = _json_body(req.body)
            if not isinstance(doc, dict) or not isinstance(doc.get("username"), str) \
                    or not isinstance(doc.get("password"), str):
                raise HttpError(400, "expected {\"username\", \"password\", \"roles\"?}")
            u = manage_users(self.users, "add", doc["username"], password=doc["password"],
                             roles=self._roles(doc.get("roles", [])))
            location = f"{self._base(req)}/rest/admin/users/{quote(u.username, safe='')}"
            return self._json(201, u.public(), {"Location": location})
        if method == "GET":
            return self._json(200, self.users.get(name).public())
        if method == "DELETE":
            manage_users(self.users, "remove", name)
            return ApiResponse(204, {})
        doc = _json_body(req.body)
        if not isinstance(doc, dict) or not set(doc) <= {"roles", "password"} or not doc:
            raise HttpError(400, "expected {\"roles\"?, \"password\"?}")
        self.users.get(name)
        if "password" in doc and not isinstance(doc["password"], str):
            raise HttpError(400, "password must be a string")
        # roles first: it is the change that can be refused (last admin)
        if "roles" in doc:
            manage_users(self.users, "set_roles", name, roles=self._roles(doc["roles"]))
        if "password" in doc:
            manage_users(self.users, "set_password", name, password=doc["password"])
        return self._json(200, self.users.get(name).public())

    @staticmethod
    def _roles(value: Any) -> list[str]:
        if not isinstance(value, list) or not all(isinstance(r, str) for r in value):
            raise HttpError(400, "roles must be an array of strings")
        return value

    def _admin_validation(self, req: ApiRequest, method: str, model_id: str, instance_id: str) -> ApiResponse:
        try:
            i = self.registry.instance(model_id, instance_id)
            if method == "PUT":
                doc = _json_body(req.body)
                if not isinstance(doc, dict) or set(doc) != {"enabled"} or not isinstance(doc["enabled"], bool):
                    raise HttpError(400, "expected {\"enabled\": true|false}")
                self.registry.set_validation(model_id, instance_id, doc["enabled"])
        except NotFound as exc:
            raise HttpError(404, str(exc)) from None
        except (InstanceError, OSError) as exc:
            log.error("%s", exc)
            raise HttpError(500, "cannot update validation setting") from None
        return self._json(200, {"enabled": i.validation_active})
