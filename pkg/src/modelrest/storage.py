"""Persistence of model instances as XMI or JSON documents.

Both writers are deterministic: features appear in metamodel declaration
order and elements in slot order, so saving an unmodified instance
reproduces the file it was loaded from. Files are replaced atomically.
"""
from __future__ import annotations

import json
import math
import os
import re
import tempfile
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Any
from xml.sax.saxutils import escape, quoteattr

from .instance import (
    Element,
    LoadError,
    ModelInstance,
    PayloadError,
    coerce_value,
    fragment_path,
    identifier_index,
    resolve_fragment,
)
from .metamodel import AttributeDef, Metamodel, ReferenceDef, container_reference, key_name

XMI_NS = "http://www.omg.org/XMI"
XSI_NS = "http://www.w3.org/2001/XMLSchema-instance"
FORMATS = ("xmi", "json")

_NCNAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_.-]*$")


def format_for(path: str | Path) -> str:
    suffix = Path(path).suffix.lstrip(".").lower()
    if suffix not in FORMATS:
        raise ValueError(f"unknown storage format for {path}")
    return suffix


def _text(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_text(a: AttributeDef, raw: str) -> Any:
    dt = a.datatype
    try:
        if dt == "boolean":
            if raw not in ("true", "false"):
                raise ValueError(raw)
            return raw == "true"
        if dt == "integer":
            return int(raw)
        if dt == "float":
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(raw)
            return value
    except ValueError:
        raise LoadError(f"{a.name}: invalid {dt} value {raw!r}") from None
    return raw


# -- loading -----------------------------------------------------------------

def load_instance(text: str | bytes, fmt: str, m: Metamodel, instance_id: str,
                  storage: tuple[str, str] | None = None) -> ModelInstance:
    i = ModelInstance(instance_id, m, storage=storage)
    # cross-references are resolved after the whole tree exists
    pending: list[tuple[Element, ReferenceDef, list[str]]] = []
    try:
        if fmt == "xmi":
            _load_xmi(i, text, pending)
        elif fmt == "json":
            _load_json(i, text, pending)
        else:
            raise LoadError(f"unknown format {fmt}")
    except (PayloadError, KeyError) as exc:
        raise LoadError(str(exc)) from None
    ids = identifier_index(i)
    resolved = [(e, ref, [resolve_fragment(i, f, ids).eid for f in frags]) for e, ref, frags in pending]
    for e, ref, targets in resolved:
        for t in targets:
            if not _conforms(m, i.elements[t].cls, ref.target):
                raise LoadError(f"{e.cls}.{ref.name}: {i.elements[t].cls} is not a {ref.target}")
        slot = e.refs.setdefault(ref.name, [])
        slot.extend(t for t in targets if t not in slot)
        if not ref.many and len(slot) > 1:
            raise LoadError(f"{e.cls}.{ref.name} is single-valued")
    # complete opposite slots so both ends agree
    for e, ref, targets in resolved:
        if ref.opposite is None:
            continue
        for t in targets:
            target = i.elements[t]
            slot = target.refs.setdefault(ref.opposite, [])
            if e.eid not in slot:
                slot.append(e.eid)
            if len(slot) > 1 and not m.feature(target.cls, ref.opposite).many:
                raise LoadError(f"{target.cls}.{ref.opposite} is not reciprocal to {e.cls}.{ref.name}")
    for e in i.elements.values():
        for name in [n for n, v in e.refs.items() if not v]:
            del e.refs[name]
    return i


def _conforms(m: Metamodel, cls: str, target: str) -> bool:
    return any(c.name == target for c in m.ancestors(cls))


def _new(i: ModelInstance, cls: str) -> Element:
    m = i.metamodel
    if cls not in m:
        raise LoadError(f"unknown class {cls}")
    if m.get(cls).abstract:
        raise LoadError(f"abstract class {cls} cannot be instantiated")
    return i.new_element(cls)


def _child_class(m: Metamodel, declared: str, xsi_type: str | None) -> str:
    cls = xsi_type.split(":", 1)[-1] if xsi_type else declared
    if cls not in m:
        raise LoadError(f"unknown class {cls}")
    if not _conforms(m, cls, declared):
        raise LoadError(f"{cls} is not a {declared}")
    return cls


def _load_xmi(i: ModelInstance, text: str | bytes, pending: list) -> None:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise LoadError(f"XML syntax error: {exc}") from None
    if root.tag == f"{{{XMI_NS}}}XMI":
        tops = list(root)
    else:
        tops = [root]
    for top in tops:
        cls = top.get(f"{{{XSI_NS}}}type") or top.tag.rsplit("}", 1)[-1]
        cls = cls.split(":", 1)[-1]
        e = _new(i, cls)
        i.add_root(e)
        _fill_xmi(i, e, top, pending)


def _fill_xmi(i: ModelInstance, e: Element, node: ET.Element, pending: list) -> None:
    m = i.metamodel
    for key, raw in node.attrib.items():
        if key.startswith("{"):
            continue
        f = m.feature(e.cls, key)
        if isinstance(f, AttributeDef) and not f.many:
            e.attrs[key] = _parse_text(f, raw)
        elif isinstance(f, ReferenceDef) and not f.containment:
            pending.append((e, f, raw.split()))
        else:
            raise LoadError(f"{e.cls} has no attribute {key!r}")
    for child in node:
        name = child.tag
        f = m.feature(e.cls, name)
        if isinstance(f, AttributeDef) and f.many:
            e.attrs.setdefault(name, []).append(_parse_text(f, child.text or ""))
        elif isinstance(f, ReferenceDef) and f.containment:
            c = _new(i, _child_class(m, f.target, child.get(f"{{{XSI_NS}}}type")))
            i.attach(e, f, c)
            if not f.many and len(e.refs[f.name]) > 1:
                raise LoadError(f"{e.cls}.{f.name} is single-valued")
            _fill_xmi(i, c, child, pending)
        elif isinstance(f, ReferenceDef) and child.get("href") is not None:
            if container_reference(m, e.cls, f):
                continue
            pending.append((e, f, [child.get("href")]))
        else:
            raise LoadError(f"{e.cls} has no feature {name!r}")


def _load_json(i: ModelInstance, text: str | bytes, pending: list) -> None:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LoadError(f"JSON syntax error: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("roots"), list):
        raise LoadError("expected an object with a roots list")
    if doc.get("model", i.model_id) != i.model_id:
        raise LoadError(f"document belongs to model {doc.get('model')}")
    for wrapped in doc["roots"]:
        cls, body = _unwrap(i.metamodel, wrapped)
        e = _new(i, cls)
        i.add_root(e)
        _fill_json(i, e, body, pending)


def _unwrap(m: Metamodel, wrapped: Any, declared: str | None = None) -> tuple[str, dict]:
    if not isinstance(wrapped, dict) or len(wrapped) != 1:
        raise LoadError("expected an object with a single class key")
    (key, body), = wrapped.items()
    c = m.class_for_key(key)
    if c is None:
        raise LoadError(f"unknown class key {key!r}")
    if declared is not None and not _conforms(m, c.name, declared):
        raise LoadError(f"{c.name} is not a {declared}")
    if not isinstance(body, dict):
        raise LoadError(f"{key}: expected an object")
    return c.name, body


def _fill_json(i: ModelInstance, e: Element, body: dict, pending: list) -> None:
    m = i.metamodel
    for name, value in body.items():
        f = m.feature(e.cls, name)
        if isinstance(f, AttributeDef):
            values = value if f.many else [value]
            if not isinstance(values, list):
                raise LoadError(f"{name}: expected a list")
            try:
                coerced = [coerce_value(f, v) for v in values]
            except PayloadError as exc:
                raise LoadError(str(exc)) from None
            if coerced:
                e.attrs[name] = coerced if f.many else coerced[0]
        elif isinstance(f, ReferenceDef) and f.containment:
            items = value if f.many else [value]
            if not isinstance(items, list):
                raise LoadError(f"{name}: expected a list")
            for wrapped in items:
                cls, child_body = _unwrap(m, wrapped, f.target)
                c = _new(i, cls)
                i.attach(e, f, c)
                _fill_json(i, c, child_body, pending)
        elif isinstance(f, ReferenceDef):
            if container_reference(m, e.cls, f):
                continue
            frags = value if f.many else [value]
            if not isinstance(frags, list) or not all(isinstance(x, str) for x in frags):
                raise LoadError(f"{name}: expected fragment strings")
            pending.append((e, f, frags))
        else:
            raise LoadError(f"{e.cls} has no feature {name!r}")


# -- dumping -----------------------------------------------------------------

def dump_json(i: ModelInstance) -> str:
    m = i.metamodel
    ids = identifier_index(i)

    def node(e: Element) -> dict:
        body: dict[str, Any] = {}
        for f in m.features(e.cls):
            if isinstance(f, AttributeDef):
                if f.name not in e.attrs:
                    continue
                v = e.attrs[f.name]
                if f.datatype == "float":
                    v = [repr(x) for x in v] if f.many else repr(v)
                body[f.name] = v
            elif f.containment:
                kids = [node(i.elements[x]) for x in e.refs.get(f.name, ())]
                if kids:
                    body[f.name] = kids if f.many else kids[0]
            elif not container_reference(m, e.cls, f):
                frags = [fragment_path(i, i.elements[x], ids) for x in e.refs.get(f.name, ())]
                if frags:
                    body[f.name] = frags if f.many else frags[0]
        return {key_name(e.cls): body}

    doc = {"model": i.model_id, "roots": [node(i.elements[r]) for r in i.roots]}
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def _escape_text(s: str) -> str:
    return escape(s, {"\r": "&#13;"})


def dump_xmi(i: ModelInstance) -> str:
    m = i.metamodel
    ids = identifier_index(i)
    prefix = m.model_id if _NCNAME.match(m.model_id) else "model"
    ns_decl = (f'xmi:version="2.0" xmlns:xmi="{XMI_NS}" xmlns:xsi="{XSI_NS}" '
               f'xmlns:{prefix}={quoteattr("urn:modelrest:" + m.model_id)}')
    lines = ['<?xml version="1.0" encoding="UTF-8"?>']

    def emit(e: Element, tag: str, head: str, depth: int) -> list[str]:
        pad = "  " * depth
        attrs = [head] if head else []
        body: list[str] = []
        for f in m.features(e.cls):
            if isinstance(f, AttributeDef):
                if f.name not in e.attrs:
                    continue
                if f.many:
                    body.extend(f"{pad}  <{f.name}>{_escape_text(_text(v))}</{f.name}>" for v in e.attrs[f.name])
                else:
                    attrs.append(f"{f.name}={quoteattr(_text(e.attrs[f.name]))}")
            elif f.containment:
                for x in e.refs.get(f.name, ()):
                    child = i.elements[x]
                    body.extend(emit(child, f.name, f'xsi:type="{prefix}:{child.cls}"', depth + 1))
            elif not container_reference(m, e.cls, f):
                for x in e.refs.get(f.name, ()):
                    body.append(f"{pad}  <{f.name} href={quoteattr(fragment_path(i, i.elements[x], ids))}/>")
        opening = f"{pad}<{tag}" + "".join(" " + a for a in attrs)
        if not body:
            return [opening + "/>"]
        return [opening + ">", *body, f"{pad}</{tag}>"]

    if len(i.roots) == 1:
        root = i.elements[i.roots[0]]
        lines.extend(emit(root, f"{prefix}:{root.cls}", ns_decl, 0))
    else:
        lines.append(f"<xmi:XMI {ns_decl}" + (">" if i.roots else "/>"))
        for r in i.roots:
            root = i.elements[r]
            lines.extend(emit(root, f"{prefix}:{root.cls}", "", 1))
        if i.roots:
            lines.append("</xmi:XMI>")
    return "\n".join(lines) + "\n"


def dump_instance(i: ModelInstance, fmt: str) -> str:
    if fmt == "xmi":
        return dump_xmi(i)
    if fmt == "json":
        return dump_json(i)
    raise ValueError(f"unknown format {fmt}")


def atomic_write(path: str | Path, data: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def save_instance(i: ModelInstance) -> None:
    if i.storage is None:
        raise ValueError("instance has no storage binding")
    path, fmt = i.storage
    atomic_write(path, dump_instance(i, fmt))


def read_instance(path: str | Path, m: Metamodel, instance_id: str | None = None) -> ModelInstance:
    path = Path(path)
    fmt = format_for(path)
    return load_instance(path.read_bytes(), fmt, m, instance_id or path.stem, storage=(str(path), fmt))
