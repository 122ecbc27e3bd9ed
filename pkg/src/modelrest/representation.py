"""Wire representations of elements and collections, and payload parsing.

An element is an object wrapped in the key of its dynamic class. Its
attributes map to JSON values (floats travel as strings), and every
reference becomes an object grouping the targets' URIs by dynamic class:
one ``{"uri": ...}`` per group when it has a single member, an array
otherwise. Grouping is not index-ordered; slot order stays authoritative
for ``?index=`` addressing.
"""
from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Any
from urllib.parse import quote

from .instance import (
    Collection,
    Element,
    ModelInstance,
    PayloadError,
    Target,
    TypedPayload,
    TypeMismatch,
    coerce_value,
    format_scalar,
    positional_fragment,
)
from .metamodel import AttributeDef, Metamodel, ReferenceDef, is_subtype, key_name

JSON = "json"
XML = "xml"
MEDIA_TYPES = {JSON: "application/json", XML: "application/xml"}

# pchar sub-delimiters stay readable; "/", "?", "#" and "%" are encoded
_SAFE = "!$&'()*+,;=:@"


class UnaddressableError(Exception):
    """The element has no URL under the first root of its instance."""


@dataclass(frozen=True)
class WireDocument:
    format: str
    body: str

    @property
    def media_type(self) -> str:
        return MEDIA_TYPES[self.format]


__all__ = [
    "JSON", "XML", "TypedPayload", "UnaddressableError", "WireDocument",
    "key_name", "parse_payload", "resource_url", "to_json", "to_xml", "uri_for",
]


# -- URIs --------------------------------------------------------------------

def instance_url(i: ModelInstance, base: str) -> str:
    return f"{base.rstrip('/')}/rest/{quote(i.model_id, safe=_SAFE)}/{quote(i.instance_id, safe=_SAFE)}"


def resource_url(i: ModelInstance, e: Element, base: str) -> str:
    """The GETtable URL of ``e``; raises UnaddressableError if it has none."""
    steps: list[tuple[str, bool]] = []  # (rendered step, is index step)
    cur = e
    while cur.container is not None:
        parent = i.elements[cur.container]
        ref = i.metamodel.feature(parent.cls, cur.container_ref)
        if not ref.many:
            steps.append((f"/{quote(ref.name)}", False))
        else:
            slot = parent.refs[ref.name]
            key = i.identifier_of(cur)
            first = None
            if key not in (None, "", ".", ".."):
                first = next(x for x in slot if i.identifier_of(i.elements[x]) == key)
            if first == cur.eid:
                steps.append((f"/{ref.name}/{quote(key, safe=_SAFE)}", False))
            else:
                steps.append((f"/{ref.name}?index={slot.index(cur.eid)}", True))
        cur = parent
    if not i.roots or cur.eid != i.roots[0]:
        raise UnaddressableError(f"{e.eid} is not under the first root")
    steps.reverse()
    if any(is_index for _, is_index in steps[:-1]):
        raise UnaddressableError(f"{e.eid} has an ancestor without identifier")
    return instance_url(i, base) + "".join(s for s, _ in steps)


def uri_for(i: ModelInstance, e: Element, base: str) -> str:
    """URL of ``e``, or the instance URL plus a positional fragment.

    The URL grammar allows ``?index=`` only on the last step and has no
    form for roots after the first, so elements below an identifier-less
    ancestor are named by fragment. Such URIs are accepted in payloads.
    """
    try:
        return resource_url(i, e, base)
    except UnaddressableError:
        return instance_url(i, base) + "#" + quote(positional_fragment(i, e), safe="/@.")


# -- JSON --------------------------------------------------------------------

def _json_value(a: AttributeDef, v: Any) -> Any:
    if a.datatype == "float":
        return [repr(x) for x in v] if a.many else repr(v)
    return list(v) if a.many else v


def _group(i: ModelInstance, eids: list[str] | tuple[str, ...], base: str) -> dict[str, Any]:
    groups: dict[str, list[dict[str, str]]] = {}
    for eid in eids:
        member = i.elements[eid]
        groups.setdefault(key_name(member.cls), []).append({"uri": uri_for(i, member, base)})
    return {k: v[0] if len(v) == 1 else v for k, v in groups.items()}


def element_object(i: ModelInstance, e: Element, base: str) -> dict[str, Any]:
    body: dict[str, Any] = {}
    for f in i.metamodel.features(e.cls):
        if isinstance(f, AttributeDef):
            if f.name in e.attrs:
                body[f.name] = _json_value(f, e.attrs[f.name])
            continue
        eids = i.ref_eids(e, f)
        if not eids:
            continue
        if f.many:
            body[f.name] = _group(i, eids, base)
        else:
            body[f.name] = {"uri": uri_for(i, i.elements[eids[0]], base)}
    return {key_name(e.cls): body}


def target_object(i: ModelInstance, t: Target, base: str) -> dict[str, Any]:
    if isinstance(t, Collection):
        return {t.ref: _group(i, t.members, base)}
    return element_object(i, t, base)


def dumps_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False)


def to_json(i: ModelInstance, t: Target, base: str) -> WireDocument:
    return WireDocument(JSON, dumps_json(target_object(i, t, base)))


# -- XML ---------------------------------------------------------------------

def _xml_escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace("\r", "&#13;")


def render_xml(tag: str, content: Any, depth: int = 0) -> list[str]:
    """Pretty-print a (tag, str | list-of-(tag, content)) tree, 2-space indent."""
    pad = "  " * depth
    if isinstance(content, str):
        return [f"{pad}<{tag}>{_xml_escape(content)}</{tag}>"]
    if not content:
        return [f"{pad}<{tag}/>"]
    lines = [f"{pad}<{tag}>"]
    for child_tag, child in content:
        lines.extend(render_xml(child_tag, child, depth + 1))
    lines.append(f"{pad}</{tag}>")
    return lines


def _xml_members(i: ModelInstance, eids, base: str) -> list:
    grouped: dict[str, list] = {}
    for eid in eids:
        member = i.elements[eid]
        grouped.setdefault(key_name(member.cls), []).append(
            (key_name(member.cls), [("uri", uri_for(i, member, base))]))
    return [item for items in grouped.values() for item in items]


def _xml_element(i: ModelInstance, e: Element, base: str) -> tuple[str, list]:
    children: list = []
    for f in i.metamodel.features(e.cls):
        if isinstance(f, AttributeDef):
            if f.name not in e.attrs:
                continue
            values = e.attrs[f.name] if f.many else [e.attrs[f.name]]
            children.extend((f.name, format_scalar(v)) for v in values)
            continue
        eids = i.ref_eids(e, f)
        if not eids:
            continue
        if f.many:
            children.append((f.name, _xml_members(i, eids, base)))
        else:
            children.append((f.name, [("uri", uri_for(i, i.elements[eids[0]], base))]))
    return key_name(e.cls), children


def to_xml(i: ModelInstance, t: Target, base: str) -> WireDocument:
    if isinstance(t, Collection):
        tag, content = t.ref, _xml_members(i, t.members, base)
    else:
        tag, content = _xml_element(i, t, base)
    return WireDocument(XML, "\n".join(render_xml(tag, content)))


def render(i: ModelInstance, t: Target, base: str, fmt: str) -> WireDocument:
    return to_xml(i, t, base) if fmt == XML else to_json(i, t, base)


def error_document(status: int, message: str, violations: list[str], fmt: str) -> WireDocument:
    if fmt == XML:
        content: list = [("status", str(status)), ("message", message)]
        content.append(("violations", [("violation", v) for v in violations]))
        return WireDocument(XML, "\n".join(render_xml("error", content)))
    doc = {"error": {"status": status, "message": message, "violations": violations}}
    return WireDocument(JSON, dumps_json(doc))


# -- payloads ----------------------------------------------------------------

def _no_duplicates(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in pairs:
        if k in out:
            raise PayloadError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _wrapper_class(m: Metamodel, key: str, expected: str) -> str:
    c = m.class_for_key(key)
    if c is None:
        raise PayloadError(f"unknown wrapper key {key!r}")
    if not is_subtype(c.name, expected, m):
        raise TypeMismatch(f"wrapper {key!r} is not a subtype of {expected}")
    return c.name


def _uri_of(obj: Any, where: str) -> str:
    if not isinstance(obj, dict) or set(obj) != {"uri"} or not isinstance(obj["uri"], str):
        raise PayloadError(f"{where}: expected {{\"uri\": ...}}")
    return obj["uri"]


def _json_refs(m: Metamodel, ref: ReferenceDef, value: Any) -> list[str]:
    if value is None:
        return []
    if not ref.many:
        return [_uri_of(value, ref.name)]
    if isinstance(value, list):
        return [_uri_of(v, ref.name) for v in value]
    if not isinstance(value, dict):
        raise PayloadError(f"{ref.name}: expected an object of grouped URIs")
    uris = []
    for key, group in value.items():
        if m.class_for_key(key) is None:
            raise PayloadError(f"{ref.name}: unknown group key {key!r}")
        items = group if isinstance(group, list) else [group]
        uris.extend(_uri_of(g, f"{ref.name}.{key}") for g in items)
    return uris


def _parse_json_payload(body: str, expected: str, m: Metamodel) -> TypedPayload:
    try:
        doc = json.loads(body, object_pairs_hook=lambda p: _no_duplicates(p))
    except json.JSONDecodeError as exc:
        raise PayloadError(f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict) or len(doc) != 1:
        raise PayloadError("payload must have exactly one top-level key")
    (key, fields), = doc.items()
    cls = _wrapper_class(m, key, expected)
    if not isinstance(fields, dict):
        raise PayloadError(f"{key}: expected an object")
    payload = TypedPayload(cls)
    for name, value in fields.items():
        f = m.feature(cls, name)
        if f is None:
            raise PayloadError(f"{cls} has no feature {name!r}")
        if isinstance(f, AttributeDef):
            if value is None:
                payload.attrs[name] = None
            elif f.many:
                if not isinstance(value, list):
                    raise TypeMismatch(f"{name}: expected an array")
                payload.attrs[name] = [coerce_value(f, v) for v in value]
            else:
                payload.attrs[name] = coerce_value(f, value)
        else:
            payload.refs[name] = _json_refs(m, f, value)
    return payload


def _xml_scalar(a: AttributeDef, node: ET.Element) -> Any:
    raw = node.text or ""
    if len(node):
        raise TypeMismatch(f"{a.name}: expected text content")
    if a.datatype == "string":
        return coerce_value(a, raw)
    if raw == "":
        return None
    if a.datatype == "boolean":
        if raw.strip() not in ("true", "false"):
            raise TypeMismatch(f"{a.name}: expected boolean")
        return raw.strip() == "true"
    if a.datatype == "integer":
        try:
            return int(raw.strip())
        except ValueError:
            raise TypeMismatch(f"{a.name}: expected integer") from None
    return coerce_value(a, raw.strip())


def _xml_uri(node: ET.Element, where: str) -> str:
    uris = [c for c in node if c.tag == "uri"]
    if len(uris) != 1 or len(node) != 1:
        raise PayloadError(f"{where}: expected a single <uri>")
    return (uris[0].text or "").strip()


def _parse_xml_payload(body: str, expected: str, m: Metamodel) -> TypedPayload:
    try:
        root = ET.fromstring(body)
    except ET.ParseError as exc:
        raise PayloadError(f"malformed XML: {exc}") from None
    cls = _wrapper_class(m, root.tag, expected)
    payload = TypedPayload(cls)
    for child in root:
        f = m.feature(cls, child.tag)
        if f is None:
            raise PayloadError(f"{cls} has no feature {child.tag!r}")
        if isinstance(f, AttributeDef):
            value = _xml_scalar(f, child)
            if f.many:
                payload.attrs.setdefault(f.name, []).append(value)
            elif f.name in payload.attrs:
                raise PayloadError(f"{f.name} given twice")
            else:
                payload.attrs[f.name] = value
        elif f.many:
            uris = payload.refs.setdefault(f.name, [])
            for group in child:
                if m.class_for_key(group.tag) is None:
                    raise PayloadError(f"{f.name}: unknown group key {group.tag!r}")
                uris.append(_xml_uri(group, f.name))
        else:
            payload.refs[f.name] = [_xml_uri(child, f.name)] if len(child) else []
    for name, values in payload.attrs.items():
        if isinstance(values, list) and None in values:
            raise TypeMismatch(f"{name}: empty value in list")
    return payload


def parse_payload(doc: WireDocument, expected: str, m: Metamodel) -> TypedPayload:
    """Read a request body into a :class:`TypedPayload`.

    The wrapper key picks the class, which must conform to ``expected``.
    Only the fields present in the document are returned.
    """
    if doc.format == XML:
        return _parse_xml_payload(doc.body, expected, m)
    return _parse_json_payload(doc.body, expected, m)
