"""Route manifest: every URL template, method and role the API exposes."""
from __future__ import annotations

import json
from typing import Any

from .metamodel import Metamodel, ReferenceDef, concrete_subtypes, effective_identifier
from .representation import MEDIA_TYPES
from .router import (
    CONTAINMENT_METHODS,
    CROSS_METHODS,
    ELEMENT_METHODS,
    LINKED_METHODS,
    ROOT_METHODS,
)

_MEDIA = sorted(MEDIA_TYPES.values())


def root_classes(m: Metamodel) -> list[str]:
    """Concrete classes that no containment reference can hold."""
    contained = set()
    for c in m.classes:
        for r in c.references:
            if r.containment:
                contained.add(r.target)
                contained.update(s.name for s in concrete_subtypes(r.target, m))
    return [c.name for c in m.classes if not c.abstract and c.name not in contained]


def _references(m: Metamodel, cls: str) -> list[ReferenceDef]:
    """References of ``cls`` and of its subclasses, first declaration wins."""
    seen: dict[str, ReferenceDef] = {}
    for c in [m.get(cls)] + concrete_subtypes(cls, m):
        for r in m.all_references(c.name):
            seen.setdefault(r.name, r)
    return list(seen.values())


def _identified(m: Metamodel, cls: str) -> bool:
    candidates = [m.get(cls)] if not m.get(cls).abstract else []
    candidates += concrete_subtypes(cls, m)
    return any(effective_identifier(c, m) is not None for c in candidates)


def _roles_by_class(m: Metamodel, cls: str) -> dict[str, list[str]] | None:
    """Elements are checked by dynamic class; list the concrete classes when that differs."""
    declared = m.get(cls).annotations.roles
    candidates = ([] if m.get(cls).abstract else [m.get(cls)]) + \
        [c for c in concrete_subtypes(cls, m) if c.name != cls]
    if all(c.annotations.roles == declared for c in candidates):
        return None
    return {c.name: list(c.annotations.roles) for c in candidates}


class _Builder:
    def __init__(self, m: Metamodel, base: str):
        self.m = m
        self.base = base
        self.rows: list[dict[str, Any]] = []

    def row(self, method: str, url: str, cls: str, shape: str) -> None:
        entry: dict[str, Any] = {
            "method": method,
            "url": url,
            "shape": shape,
            "class": cls,
            "roles": list(self.m.get(cls).annotations.roles),
        }
        by_class = _roles_by_class(self.m, cls) if shape == "element" else None
        if by_class is not None:
            entry["rolesByClass"] = by_class
        entry["produces"] = _MEDIA if method in ("GET", "HEAD", "PUT", "POST") else []
        if method in ("PUT", "POST"):
            entry["consumes"] = _MEDIA
        self.rows.append(entry)

    def element(self, url: str, cls: str, owned: bool) -> None:
        for method in ELEMENT_METHODS if owned else LINKED_METHODS:
            self.row(method, url, cls, "element")

    def visit(self, prefix: str, cls: str, depth: int, path_classes: frozenset[str]) -> None:
        for ref in _references(self.m, cls):
            url = f"{prefix}/{ref.name}"
            # cross-references are listed but not descended into; cycles stop descent
            descend = ref.containment and ref.target not in path_classes
            if not ref.many:
                self.element(url, ref.target, ref.containment)
                if descend:
                    self.visit(url, ref.target, depth, path_classes | {ref.target})
                continue
            for method in CONTAINMENT_METHODS if ref.containment else CROSS_METHODS:
                self.row(method, url, ref.target, "collection")
            self.element(f"{url}?index={{index}}", ref.target, ref.containment)
            if not _identified(self.m, ref.target):
                continue
            placeholder = "{id}" if depth == 1 else f"{{id{depth}}}"
            item = f"{url}/{placeholder}"
            self.element(item, ref.target, ref.containment)
            if descend:
                self.visit(item, ref.target, depth + 1, path_classes | {ref.target})


def generate_manifest(m: Metamodel, base_url: str = "https://localhost") -> str:
    base = f"{base_url.rstrip('/')}/rest/{m.model_id}/{{instanceId}}"
    b = _Builder(m, base)
    roots = root_classes(m)
    for cls in roots:
        for method in ROOT_METHODS:
            b.row(method, base, cls, "root")
        b.visit(base, cls, 1, frozenset({cls}))
    doc = {"model": m.model_id, "rootClasses": roots, "routes": b.rows}
    return json.dumps(doc, indent=2) + "\n"
