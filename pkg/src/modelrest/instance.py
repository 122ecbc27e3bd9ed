"""Model instances: containment trees of typed elements.

An instance is addressed through :class:`ResourcePath` values, which are
resolved against the tree starting at the first root. Every mutation runs
inside :meth:`ModelInstance.transaction`, which validates the resulting
state, persists it, and restores the previous state if either step fails.
"""
from __future__ import annotations

import copy
import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence, Union
from urllib.parse import unquote, urlsplit

from .metamodel import (
    AttributeDef,
    ClassDef,
    Metamodel,
    ReferenceDef,
    container_reference,
    effective_identifier,
    is_subtype,
)


class InstanceError(Exception):
    """Base class for errors raised while reading or mutating instances."""


class NotFound(InstanceError):
    pass


class BadPath(InstanceError):
    pass


class PayloadError(InstanceError):
    """A payload names unknown features or carries ill-typed values."""


class TypeMismatch(PayloadError):
    pass


class InvalidOperation(InstanceError):
    pass


class ValidationFailed(InstanceError):
    def __init__(self, report: Sequence[Any]):
        self.report = report
        names = sorted({v.invariant for v in report})
        super().__init__("validation failed: " + ", ".join(names))


class StorageError(InstanceError):
    pass


class LoadError(InstanceError):
    pass


@dataclass
class Element:
    eid: str
    cls: str
    attrs: dict[str, Any] = field(default_factory=dict)
    refs: dict[str, list[str]] = field(default_factory=dict)
    container: str | None = None
    container_ref: str | None = None


@dataclass(frozen=True)
class Collection:
    """View of a multi-valued reference slot of ``owner``."""
    owner: str
    ref: str
    members: tuple[str, ...]


Target = Union[Element, Collection]


@dataclass(frozen=True)
class ResourcePath:
    model_id: str
    instance_id: str
    segments: tuple[str, ...] = ()
    index: int | None = None


@dataclass
class TypedPayload:
    cls: str
    attrs: dict[str, Any] = field(default_factory=dict)
    refs: dict[str, list[str]] = field(default_factory=dict)


@dataclass
class DeleteReport:
    removed: list[str]
    unlinked: list[tuple[str, str]]


def format_scalar(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ModelInstance:
    def __init__(self, instance_id: str, metamodel: Metamodel,
                 storage: tuple[str, str] | None = None):
        self.instance_id = instance_id
        self.metamodel = metamodel
        self.roots: list[str] = []
        self.elements: dict[str, Element] = {}
        self.validation_active = True
        # (path, "xmi" | "json"); None keeps the instance in memory only
        self.storage = storage
        self.validator: Callable[[ModelInstance], Sequence[Any]] | None = None
        self.lock = threading.RLock()
        self._counter = 0

    @property
    def model_id(self) -> str:
        return self.metamodel.model_id

    def __repr__(self) -> str:
        return f"<ModelInstance {self.model_id}/{self.instance_id} ({len(self.elements)} elements)>"

    # -- element table ---------------------------------------------------

    def new_element(self, cls: str) -> Element:
        c = self.metamodel.get(cls)
        if c.abstract:
            raise TypeMismatch(f"cannot instantiate abstract class {cls}")
        self._counter += 1
        e = Element(eid=f"e{self._counter}", cls=cls)
        self.elements[e.eid] = e
        return e

    def add_root(self, e: Element) -> None:
        self.roots.append(e.eid)

    def root(self) -> Element:
        if not self.roots:
            raise NotFound("instance has no root element")
        return self.elements[self.roots[0]]

    def get(self, eid: str) -> Element:
        return self.elements[eid]

    def attach(self, parent: Element, ref: ReferenceDef, child: Element) -> None:
        parent.refs.setdefault(ref.name, []).append(child.eid)
        child.container = parent.eid
        child.container_ref = ref.name

    def ref_values(self, e: Element, ref: ReferenceDef) -> list[Element]:
        return [self.elements[x] for x in self.ref_eids(e, ref)]

    def ref_eids(self, e: Element, ref: ReferenceDef) -> list[str]:
        if container_reference(self.metamodel, e.cls, ref):
            if e.container is not None and e.container_ref == ref.opposite:
                return [e.container]
            return []
        return list(e.refs.get(ref.name, ()))

    def children(self, e: Element) -> Iterator[Element]:
        for ref in self.metamodel.all_references(e.cls):
            if ref.containment:
                for eid in e.refs.get(ref.name, ()):
                    yield self.elements[eid]

    def walk(self) -> Iterator[Element]:
        """All elements, depth first in slot order, roots in order."""
        stack = [self.elements[r] for r in reversed(self.roots)]
        while stack:
            e = stack.pop()
            yield e
            stack.extend(reversed(list(self.children(e))))

    def identifier_of(self, e: Element) -> str | None:
        ident = effective_identifier(self.metamodel.get(e.cls), self.metamodel)
        if ident is None:
            return None
        value = e.attrs.get(ident)
        return None if value is None else format_scalar(value)

    # -- transactions ----------------------------------------------------

    @contextmanager
    def transaction(self) -> Iterator[None]:
        """Run a mutation; validate and persist it or roll it back."""
        with self.lock:
            saved = (copy.deepcopy(self.elements), list(self.roots), self._counter)
            try:
                yield
                if self.validation_active and self.validator is not None:
                    report = self.validator(self)
                    if report:
                        raise ValidationFailed(report)
                if self.storage is not None:
                    from .storage import save_instance
                    try:
                        save_instance(self)
                    except OSError as exc:
                        raise StorageError(f"cannot write {self.storage[0]}: {exc}") from exc
            except BaseException:
                self.elements, self.roots, self._counter = saved
                raise


# -- paths -------------------------------------------------------------------

def _by_id(i: ModelInstance, members: Sequence[str], key: str) -> Element | None:
    for eid in members:
        e = i.elements[eid]
        if i.identifier_of(e) == key:
            return e
    return None


def resolve_path(i: ModelInstance, p: ResourcePath) -> Target:
    if p.model_id != i.model_id or p.instance_id != i.instance_id:
        raise NotFound(f"{p.model_id}/{p.instance_id}")
    cur: Target = i.root()
    last_was_id = False
    for seg in p.segments:
        last_was_id = False
        if isinstance(cur, Collection):
            found = _by_id(i, cur.members, seg)
            if found is None:
                raise NotFound(f"no element {seg!r} in {cur.ref}")
            cur = found
            last_was_id = True
            continue
        ref = i.metamodel.feature(cur.cls, seg)
        if not isinstance(ref, ReferenceDef):
            raise NotFound(f"{cur.cls} has no reference {seg!r}")
        values = i.ref_eids(cur, ref)
        if ref.many:
            cur = Collection(owner=cur.eid, ref=ref.name, members=tuple(values))
        elif values:
            cur = i.elements[values[0]]
        else:
            raise NotFound(f"{seg} is not set")
    if p.index is not None:
        if not isinstance(cur, Collection) or last_was_id:
            raise BadPath("index applies only to a collection")
        if p.index >= len(cur.members):
            raise NotFound(f"index {p.index} out of range")
        cur = i.elements[cur.members[p.index]]
    return cur


def parse_resource_path(path: str, query_index: str | None = None) -> ResourcePath:
    """Split ``/rest/{model}/{instance}/...`` into a :class:`ResourcePath`.

    Segments are split before percent-decoding so an encoded ``/`` inside
    an identifier survives.
    """
    if not path.startswith("/rest/"):
        raise NotFound(path)
    raw = path[len("/rest/"):].split("/")
    if raw and raw[-1] == "" and len(raw) > 2:
        raw = raw[:-1]
    segments = [unquote(s) for s in raw]
    if len(segments) < 2 or any(s == "" for s in segments):
        raise NotFound(path)
    index = None
    if query_index is not None:
        if not query_index.isdigit() or not query_index.isascii():
            raise BadPath(f"malformed index {query_index!r}")
        index = int(query_index)
    return ResourcePath(segments[0], segments[1], tuple(segments[2:]), index)


def resolve_uri(i: ModelInstance, uri: str) -> Element:
    parts = urlsplit(uri)
    index = None
    for pair in parts.query.split("&") if parts.query else ():
        k, _, v = pair.partition("=")
        if k == "index":
            index = v
    try:
        p = parse_resource_path(parts.path, index)
        if parts.fragment:
            # instance URL plus positional fragment, for elements without a URL
            frag = unquote(parts.fragment)
            if p.segments or p.index is not None or not frag.startswith("/"):
                raise BadPath("fragment allowed only on the instance URL")
            if p.model_id != i.model_id or p.instance_id != i.instance_id:
                raise NotFound(f"{p.model_id}/{p.instance_id}")
            target = resolve_fragment(i, frag)
        else:
            target = resolve_path(i, p)
    except InstanceError as exc:
        raise PayloadError(f"unresolvable URI {uri}: {exc}") from None
    if not isinstance(target, Element):
        raise PayloadError(f"URI {uri} addresses a collection")
    return target


# -- fragments ---------------------------------------------------------------

def identifier_index(i: ModelInstance) -> dict[str, str]:
    """First element (walk order) for every identifier value."""
    index: dict[str, str] = {}
    for e in i.walk():
        key = i.identifier_of(e)
        if key is not None and key not in index:
            index[key] = e.eid
    return index


def fragment_path(i: ModelInstance, e: Target, ids: dict[str, str] | None = None) -> str:
    """XMI fragment: ``#<id>`` when unambiguous, else the positional path.

    A collection gets its owner's positional path plus ``/@ref``.
    """
    if isinstance(e, Collection):
        head = positional_fragment(i, i.elements[e.owner])
        return f"#{head}/@{e.ref}"
    key = i.identifier_of(e)
    if key and not key.startswith("/"):
        if ids is None:
            ids = identifier_index(i)
        if ids.get(key) == e.eid:
            return "#" + key
    return "#" + positional_fragment(i, e)


def positional_fragment(i: ModelInstance, e: Element) -> str:
    steps = []
    while e.container is not None:
        parent = i.elements[e.container]
        ref = i.metamodel.feature(parent.cls, e.container_ref)
        if ref.many:
            steps.append(f"@{ref.name}.{parent.refs[ref.name].index(e.eid)}")
        else:
            steps.append(f"@{ref.name}")
        e = parent
    r = i.roots.index(e.eid)
    head = "/" if r == 0 else f"/{r}"
    if not steps:
        return head
    return head + "/" + "/".join(reversed(steps))


def resolve_fragment(i: ModelInstance, fragment: str, ids: dict[str, str] | None = None) -> Element:
    frag = fragment.split("#", 1)[1] if "#" in fragment else fragment
    if not frag.startswith("/"):
        if ids is None:
            ids = identifier_index(i)
        if frag not in ids:
            raise LoadError(f"dangling reference #{frag}")
        return i.elements[ids[frag]]
    parts = frag.split("/")
    try:
        r = int(parts[1]) if parts[1] else 0
        e = i.elements[i.roots[r]]
        for step in parts[2:]:
            if not step.startswith("@"):
                raise ValueError(step)
            name, _, pos = step[1:].partition(".")
            ref = i.metamodel.feature(e.cls, name)
            if not isinstance(ref, ReferenceDef) or not ref.containment:
                raise ValueError(step)
            slot = e.refs.get(name, [])
            e = i.elements[slot[int(pos) if pos else 0]]
    except (ValueError, IndexError, KeyError):
        raise LoadError(f"dangling reference #{frag}") from None
    return e


# -- payload application -----------------------------------------------------

_XML_BAD = {c for c in range(0x20) if c not in (0x9, 0xA, 0xD)} | {0xFFFE, 0xFFFF}


def coerce_value(a: AttributeDef, value: Any) -> Any:
    """Check a single attribute value against its datatype, normalizing floats."""
    dt = a.datatype
    if dt == "string":
        if not isinstance(value, str):
            raise TypeMismatch(f"{a.name}: expected string")
        if any(ord(ch) in _XML_BAD or 0xD800 <= ord(ch) <= 0xDFFF for ch in value):
            raise TypeMismatch(f"{a.name}: string contains unrepresentable characters")
        return value
    if dt == "boolean":
        if not isinstance(value, bool):
            raise TypeMismatch(f"{a.name}: expected boolean")
        return value
    if dt == "integer":
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeMismatch(f"{a.name}: expected integer")
        return value
    number = None
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        number = float(value)
    elif isinstance(value, str):
        try:
            number = float(value)
        except ValueError:
            pass
    # NaN and infinities have no JSON form and break equality; refused
    if number is None or not math.isfinite(number):
        raise TypeMismatch(f"{a.name}: expected a finite float")
    return number


def set_attribute(e: Element, a: AttributeDef, value: Any) -> None:
    if value is None or (a.many and value == []):
        e.attrs.pop(a.name, None)
    elif a.many:
        if not isinstance(value, list):
            raise TypeMismatch(f"{a.name}: expected a list")
        e.attrs[a.name] = [coerce_value(a, v) for v in value]
    else:
        e.attrs[a.name] = coerce_value(a, value)


def set_cross_reference(i: ModelInstance, e: Element, ref: ReferenceDef, targets: list[str]) -> None:
    """Replace a non-containment slot, keeping any opposite slot reciprocal."""
    new: list[str] = list(dict.fromkeys(targets))
    if not ref.many and len(new) > 1:
        raise TypeMismatch(f"{ref.name} is single-valued")
    old = e.refs.get(ref.name, [])
    if new:
        e.refs[ref.name] = new
    else:
        e.refs.pop(ref.name, None)
    if ref.opposite is None:
        return
    for t in old:
        if t not in new:
            _unlink(i.elements[t], ref.opposite, e.eid)
    for t in new:
        if t in old:
            continue
        target = i.elements[t]
        opp = i.metamodel.feature(target.cls, ref.opposite)
        slot = target.refs.setdefault(ref.opposite, [])
        if e.eid in slot:
            continue
        if not opp.many:
            for prev in slot:
                if prev != e.eid:
                    _unlink(i.elements[prev], ref.name, t)
            slot.clear()
        slot.append(e.eid)


def _unlink(e: Element, ref_name: str, eid: str) -> None:
    slot = e.refs.get(ref_name)
    if slot and eid in slot:
        slot.remove(eid)
        if not slot:
            del e.refs[ref_name]


def apply_payload(i: ModelInstance, e: Element, payload: TypedPayload) -> None:
    m = i.metamodel
    for name, value in payload.attrs.items():
        a = m.feature(e.cls, name)
        if not isinstance(a, AttributeDef):
            raise PayloadError(f"{e.cls} has no attribute {name!r}")
        set_attribute(e, a, value)
    for name, uris in payload.refs.items():
        ref = m.feature(e.cls, name)
        if not isinstance(ref, ReferenceDef):
            raise PayloadError(f"{e.cls} has no reference {name!r}")
        targets = []
        for uri in uris:
            t = resolve_uri(i, uri)
            if not is_subtype(t.cls, ref.target, m):
                raise TypeMismatch(f"{name}: {t.cls} is not a {ref.target}")
            targets.append(t.eid)
        if ref.containment or container_reference(m, e.cls, ref):
            # ownership changes only through POST and DELETE
            if set(targets) != set(i.ref_eids(e, ref)):
                raise PayloadError(f"{name} is a containment reference and cannot be reassigned")
            continue
        if _same_groups(i, i.ref_eids(e, ref), list(dict.fromkeys(targets))):
            # the wire form only orders members within each class group,
            # so a document read back unchanged keeps the stored order
            continue
        set_cross_reference(i, e, ref, targets)


def _same_groups(i: ModelInstance, old: list[str], new: list[str]) -> bool:
    if len(old) != len(new) or set(old) != set(new):
        return False
    by_class = lambda eids, c: [x for x in eids if i.elements[x].cls == c]
    return all(by_class(old, c) == by_class(new, c) for c in {i.elements[x].cls for x in old})


# -- mutations ---------------------------------------------------------------

def _check_payload_class(m: Metamodel, payload: TypedPayload) -> ClassDef:
    if payload.cls not in m:
        raise TypeMismatch(f"unknown class {payload.cls}")
    return m.get(payload.cls)


def create_element(i: ModelInstance, collection: Target, cls: str, payload: TypedPayload | None = None) -> Element:
    m = i.metamodel
    if not isinstance(collection, Collection):
        raise InvalidOperation("elements are created inside collections")
    owner = i.elements[collection.owner]
    ref = m.feature(owner.cls, collection.ref)
    if not ref.containment:
        raise InvalidOperation(f"{ref.name} is not a containment reference")
    if cls not in m:
        raise TypeMismatch(f"unknown class {cls}")
    if m.get(cls).abstract:
        raise TypeMismatch(f"{cls} is abstract")
    if not is_subtype(cls, ref.target, m):
        raise TypeMismatch(f"{cls} is not a {ref.target}")
    payload = payload or TypedPayload(cls)
    with i.transaction():
        owner = i.elements[collection.owner]
        e = i.new_element(cls)
        i.attach(owner, ref, e)
        apply_payload(i, e, payload)
    return i.elements[e.eid]


def update_element(i: ModelInstance, e: Element, payload: TypedPayload) -> Element:
    _check_payload_class(i.metamodel, payload)
    if not is_subtype(e.cls, payload.cls, i.metamodel):
        raise TypeMismatch(f"{payload.cls} payload cannot update a {e.cls}")
    eid = e.eid
    with i.transaction():
        apply_payload(i, i.elements[eid], payload)
    return i.elements[eid]


def delete_element(i: ModelInstance, e: Element) -> DeleteReport:
    if e.container is None:
        raise InvalidOperation("root elements cannot be deleted")
    eid = e.eid
    with i.transaction():
        e = i.elements[eid]
        removed = []
        stack = [e]
        while stack:
            cur = stack.pop()
            removed.append(cur.eid)
            stack.extend(i.children(cur))
        _unlink(i.elements[e.container], e.container_ref, eid)
        gone = set(removed)
        for r in removed:
            del i.elements[r]
        unlinked = []
        for other in i.elements.values():
            for name, slot in list(other.refs.items()):
                kept = [x for x in slot if x not in gone]
                if len(kept) != len(slot):
                    unlinked.append((other.eid, name))
                    if kept:
                        other.refs[name] = kept
                    else:
                        del other.refs[name]
    return DeleteReport(removed=removed, unlinked=unlinked)


# -- structural view ---------------------------------------------------------

def instance_tree(i: ModelInstance) -> list[dict[str, Any]]:
    """Plain nested structure of an instance, independent of element ids.

    Cross-references are given as positional fragments so two instances
    compare equal exactly when they hold the same tree and links.
    """
    m = i.metamodel

    def node(e: Element) -> dict[str, Any]:
        out: dict[str, Any] = {"class": e.cls}
        for f in m.features(e.cls):
            if isinstance(f, AttributeDef):
                if f.name in e.attrs:
                    out[f.name] = e.attrs[f.name]
            elif f.containment:
                kids = [node(i.elements[x]) for x in e.refs.get(f.name, ())]
                if kids:
                    out[f.name] = kids
            elif not container_reference(m, e.cls, f):
                links = [positional_fragment(i, i.elements[x]) for x in e.refs.get(f.name, ())]
                if links:
                    out[f.name] = links
        return out

    return [node(i.elements[r]) for r in i.roots]
