"""Metamodel definitions: classes, attributes, references and annotations.

A metamodel is the schema every served model instance conforms to. It is
read from a small JSON document (see ``docs/formats.md``) or imported from
an Ecore XMI file (:mod:`modelrest.ecore`).
"""
from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterator

DATATYPES = ("string", "boolean", "integer", "float")
UNBOUNDED = -1

OCL_SOURCE = "OCL"
CONSTRAINTS_SOURCE = "Ecore/constraints"
ROLES_SOURCE = "Ecore/roles"

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class MetamodelError(ValueError):
    """A metamodel document is malformed or violates a well-formedness rule."""

    def __init__(self, message: str, position: tuple[int, int] | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (line {position[0]}, column {position[1]})"
        super().__init__(message)


class UnknownClassError(KeyError):
    pass


@dataclass(frozen=True)
class AnnotationSet:
    ocl: dict[str, str] = field(default_factory=dict)
    constraints: tuple[str, ...] = ()
    roles: tuple[str, ...] = ()
    # any other annotation source, kept verbatim
    extra: dict[str, dict[str, str]] = field(default_factory=dict)

    def __hash__(self) -> int:
        return hash((tuple(self.ocl.items()), self.constraints, self.roles))


@dataclass(frozen=True)
class AttributeDef:
    name: str
    datatype: str
    many: bool = False
    identifier: bool = False
    unique: bool = False


@dataclass(frozen=True)
class ReferenceDef:
    name: str
    target: str
    containment: bool = False
    lower: int = 0
    upper: int = 1  # UNBOUNDED for "*"
    opposite: str | None = None

    @property
    def many(self) -> bool:
        return self.upper == UNBOUNDED or self.upper > 1


@dataclass(frozen=True)
class ClassDef:
    name: str
    abstract: bool = False
    supertypes: tuple[str, ...] = ()
    attributes: tuple[AttributeDef, ...] = ()
    references: tuple[ReferenceDef, ...] = ()
    annotations: AnnotationSet = field(default_factory=AnnotationSet)


@dataclass(frozen=True)
class Metamodel:
    model_id: str
    classes: tuple[ClassDef, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "_index", {c.name: c for c in self.classes})

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Metamodel):
            return NotImplemented
        return self.model_id == other.model_id and self.classes == other.classes

    def __hash__(self) -> int:
        return hash((self.model_id, tuple(c.name for c in self.classes)))

    def get(self, name: str) -> ClassDef:
        try:
            return self._index[name]  # type: ignore[attr-defined]
        except KeyError:
            raise UnknownClassError(name) from None

    def __contains__(self, name: object) -> bool:
        return name in self._index  # type: ignore[attr-defined]

    def ancestors(self, name: str) -> list[ClassDef]:
        """The class itself followed by its supertypes, nearest first (BFS)."""
        seen: list[str] = []
        queue = deque([name])
        while queue:
            current = queue.popleft()
            if current in seen:
                continue
            seen.append(current)
            queue.extend(self.get(current).supertypes)
        return [self.get(n) for n in seen]

    def _linearized(self, name: str) -> list[ClassDef]:
        # supertypes first (depth-first, in declaration order), then the class
        out: list[ClassDef] = []

        def visit(n: str) -> None:
            c = self.get(n)
            for s in c.supertypes:
                visit(s)
            if c not in out:
                out.append(c)

        visit(name)
        return out

    def all_attributes(self, name: str) -> list[AttributeDef]:
        return [a for c in self._linearized(name) for a in c.attributes]

    def all_references(self, name: str) -> list[ReferenceDef]:
        return [r for c in self._linearized(name) for r in c.references]

    def features(self, name: str) -> list[AttributeDef | ReferenceDef]:
        """All features in declaration order: inherited classes first."""
        out: list[AttributeDef | ReferenceDef] = []
        for c in self._linearized(name):
            out.extend(c.attributes)
            out.extend(c.references)
        return out

    def feature(self, class_name: str, feature: str) -> AttributeDef | ReferenceDef | None:
        for f in self.features(class_name):
            if f.name == feature:
                return f
        return None

    def owner_of(self, class_name: str, feature: str) -> ClassDef | None:
        for c in self._linearized(class_name):
            if any(f.name == feature for f in (*c.attributes, *c.references)):
                return c
        return None

    def class_for_key(self, key: str) -> ClassDef | None:
        for c in self.classes:
            if key_name(c.name) == key:
                return c
        return None


def key_name(class_name: str) -> str:
    """Wire key of a class: its name with the first letter lowered."""
    return class_name[:1].lower() + class_name[1:]


def is_subtype(child: str, ancestor: str, m: Metamodel) -> bool:
    m.get(ancestor)
    return any(c.name == ancestor for c in m.ancestors(child))


def concrete_subtypes(name: str, m: Metamodel) -> list[ClassDef]:
    m.get(name)
    return [c for c in m.classes if not c.abstract and is_subtype(c.name, name, m)]


def effective_identifier(c: ClassDef, m: Metamodel) -> str | None:
    """Name of the attribute used to address instances of ``c`` by value.

    Precedence: identifier flag, then an attribute called ``id``, then one
    called ``name``, then the first attribute flagged unique. Every rule
    searches the class and then its supertypes, nearest first.
    """
    chain = m.ancestors(c.name)
    rules = (
        lambda a: a.identifier,
        lambda a: a.name == "id",
        lambda a: a.name == "name",
        lambda a: a.unique,
    )
    for rule in rules:
        for cls in chain:
            for a in cls.attributes:
                if rule(a) and not a.many:
                    return a.name
    return None


# -- parsing -----------------------------------------------------------------

def parse_metamodel(text: str) -> Metamodel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MetamodelError(f"syntax error: {exc.msg}", (exc.lineno, exc.colno)) from None
    return metamodel_from_dict(doc)


def _expect(obj: Any, kind: type, where: str) -> Any:
    if not isinstance(obj, kind) or (kind is int and isinstance(obj, bool)):
        raise MetamodelError(f"{where}: expected {kind.__name__}")
    return obj


_KEYS = {
    "document": {"model", "classes"},
    "class": {"name", "abstract", "supertypes", "attributes", "references", "annotations"},
    "attribute": {"name", "type", "many", "identifier", "unique"},
    "reference": {"name", "target", "containment", "lower", "upper", "opposite"},
}


def _known_keys(d: dict, kind: str, where: str) -> None:
    unknown = sorted(set(d) - _KEYS[kind])
    if unknown:
        raise MetamodelError(f"{where}: unknown {kind} key(s) {', '.join(map(repr, unknown))}")


def _flag(d: dict, key: str, where: str) -> bool:
    return _expect(d.get(key, False), bool, f"{where}.{key}")


def _parse_annotations(doc: dict, where: str) -> AnnotationSet:
    doc = _expect(doc, dict, where)
    ocl: dict[str, str] = {}
    constraints: tuple[str, ...] = ()
    roles: tuple[str, ...] = ()
    extra: dict[str, dict[str, str]] = {}
    for source, value in doc.items():
        if source == OCL_SOURCE:
            for name, text in _expect(value, dict, f"{where}.OCL").items():
                ocl[name] = _expect(text, str, f"{where}.OCL.{name}")
        elif source in (CONSTRAINTS_SOURCE, ROLES_SOURCE):
            items = tuple(_expect(v, str, f"{where}.{source}") for v in _expect(value, list, f"{where}.{source}"))
            if source == CONSTRAINTS_SOURCE:
                constraints = items
            else:
                roles = items
        else:
            details = _expect(value, dict, f"{where}.{source}")
            extra[source] = {k: _expect(v, str, f"{where}.{source}.{k}") for k, v in details.items()}
    return AnnotationSet(ocl=ocl, constraints=constraints, roles=roles, extra=extra)


def metamodel_from_dict(doc: Any) -> Metamodel:
    doc = _expect(doc, dict, "document")
    _known_keys(doc, "document", "document")
    model_id = _expect(doc.get("model"), str, "model")
    classes = []
    for i, cdoc in enumerate(_expect(doc.get("classes", []), list, "classes")):
        cdoc = _expect(cdoc, dict, f"classes[{i}]")
        name = _expect(cdoc.get("name"), str, f"classes[{i}].name")
        where = f"class {name}"
        _known_keys(cdoc, "class", where)
        attrs = []
        for adoc in _expect(cdoc.get("attributes", []), list, f"{where}.attributes"):
            adoc = _expect(adoc, dict, f"{where}.attributes")
            _known_keys(adoc, "attribute", f"{where}.attribute {adoc.get('name')}")
            attrs.append(AttributeDef(
                name=_expect(adoc.get("name"), str, f"{where}.attribute.name"),
                datatype=_expect(adoc.get("type"), str, f"{where}.attribute.type"),
                many=_flag(adoc, "many", where),
                identifier=_flag(adoc, "identifier", where),
                unique=_flag(adoc, "unique", where),
            ))
        refs = []
        for rdoc in _expect(cdoc.get("references", []), list, f"{where}.references"):
            rdoc = _expect(rdoc, dict, f"{where}.references")
            _known_keys(rdoc, "reference", f"{where}.reference {rdoc.get('name')}")
            upper = rdoc.get("upper", 1)
            if upper in ("*", None) or upper == UNBOUNDED:
                upper = UNBOUNDED
            opposite = rdoc.get("opposite")
            refs.append(ReferenceDef(
                name=_expect(rdoc.get("name"), str, f"{where}.reference.name"),
                target=_expect(rdoc.get("target"), str, f"{where}.reference.target"),
                containment=_flag(rdoc, "containment", where),
                lower=_expect(rdoc.get("lower", 0), int, f"{where}.reference.lower"),
                upper=_expect(upper, int, f"{where}.reference.upper"),
                opposite=None if opposite is None else _expect(opposite, str, f"{where}.reference.opposite"),
            ))
        classes.append(ClassDef(
            name=name,
            abstract=_flag(cdoc, "abstract", where),
            supertypes=tuple(_expect(s, str, f"{where}.supertypes") for s in _expect(cdoc.get("supertypes", []), list, f"{where}.supertypes")),
            attributes=tuple(attrs),
            references=tuple(refs),
            annotations=_parse_annotations(cdoc.get("annotations", {}), f"{where}.annotations"),
        ))
    m = Metamodel(model_id=model_id, classes=tuple(classes))
    check_metamodel(m)
    return m


def check_metamodel(m: Metamodel) -> None:
    """Raise :class:`MetamodelError` on the first well-formedness violation."""
    if not m.model_id or "/" in m.model_id or m.model_id in (".", ".."):
        raise MetamodelError(f"invalid model id {m.model_id!r}")
    names: set[str] = set()
    keys: dict[str, str] = {}
    for c in m.classes:
        if not _NAME_RE.match(c.name):
            raise MetamodelError(f"invalid class name {c.name!r}")
        if c.name in names:
            raise MetamodelError(f"duplicate class {c.name}")
        names.add(c.name)
        k = key_name(c.name)
        if k in keys:
            raise MetamodelError(f"key name collision: {keys[k]} and {c.name}")
        keys[k] = c.name
    for c in m.classes:
        for s in c.supertypes:
            if s not in names:
                raise MetamodelError(f"unknown supertype {s} of {c.name}")
    _check_acyclic(m)
    for c in m.classes:
        seen: dict[str, str] = {}
        for owner in m._linearized(c.name):
            for f in (*owner.attributes, *owner.references):
                if not _NAME_RE.match(f.name):
                    raise MetamodelError(f"invalid feature name {owner.name}.{f.name}")
                if f.name in seen and seen[f.name] != owner.name:
                    raise MetamodelError(f"duplicate feature {f.name} in {c.name}")
                if f.name in seen and owner is c:
                    raise MetamodelError(f"duplicate feature {f.name} in {c.name}")
                seen[f.name] = owner.name
        for a in c.attributes:
            if a.datatype not in DATATYPES:
                raise MetamodelError(f"unknown datatype {a.datatype} of {c.name}.{a.name}")
            if a.identifier and (a.many or a.datatype not in ("string", "integer")):
                raise MetamodelError(f"identifier {c.name}.{a.name} must be a single string or integer")
        for r in c.references:
            where = f"{c.name}.{r.name}"
            if r.target not in names:
                raise MetamodelError(f"unknown reference target {r.target} of {where}")
            if r.lower < 0:
                raise MetamodelError(f"negative lower bound on {where}")
            if r.upper != UNBOUNDED and (r.upper < 1 or r.lower > r.upper):
                raise MetamodelError(f"invalid bounds on {where}")
            if r.opposite is not None:
                opp = m.feature(r.target, r.opposite)
                if not isinstance(opp, ReferenceDef):
                    raise MetamodelError(f"unknown opposite {r.target}.{r.opposite} of {where}")
                if opp.opposite != r.name or not is_subtype(c.name, opp.target, m):
                    raise MetamodelError(f"opposite of {where} is not reciprocal")
                if r.containment and opp.containment:
                    raise MetamodelError(f"containment opposites {where} and {r.target}.{r.opposite}")
                if opp.containment and r.many:
                    raise MetamodelError(f"container reference {where} must be single-valued")
        ann = c.annotations
        for name in ann.constraints:
            if name not in ann.ocl:
                raise MetamodelError(f"constraint {name} of {c.name} has no OCL entry")


def _check_acyclic(m: Metamodel) -> None:
    state: dict[str, int] = {}

    def visit(n: str) -> None:
        state[n] = 1
        for s in m.get(n).supertypes:
            if state.get(s) == 1:
                raise MetamodelError(f"supertype cycle through {s}")
            if s not in state:
                visit(s)
        state[n] = 2

    for c in m.classes:
        if c.name not in state:
            visit(c.name)


# -- emitting ----------------------------------------------------------------

def metamodel_to_dict(m: Metamodel) -> dict[str, Any]:
    classes = []
    for c in m.classes:
        cd: dict[str, Any] = {"name": c.name}
        if c.abstract:
            cd["abstract"] = True
        if c.supertypes:
            cd["supertypes"] = list(c.supertypes)
        if c.attributes:
            cd["attributes"] = []
            for a in c.attributes:
                ad: dict[str, Any] = {"name": a.name, "type": a.datatype}
                for flag in ("many", "identifier", "unique"):
                    if getattr(a, flag):
                        ad[flag] = True
                cd["attributes"].append(ad)
        if c.references:
            cd["references"] = []
            for r in c.references:
                rd: dict[str, Any] = {"name": r.name, "target": r.target}
                if r.containment:
                    rd["containment"] = True
                if r.lower:
                    rd["lower"] = r.lower
                if r.upper != 1:
                    rd["upper"] = "*" if r.upper == UNBOUNDED else r.upper
                if r.opposite:
                    rd["opposite"] = r.opposite
                cd["references"].append(rd)
        ann: dict[str, Any] = {}
        if c.annotations.ocl:
            ann[OCL_SOURCE] = dict(c.annotations.ocl)
        if c.annotations.constraints:
            ann[CONSTRAINTS_SOURCE] = list(c.annotations.constraints)
        if c.annotations.roles:
            ann[ROLES_SOURCE] = list(c.annotations.roles)
        ann.update({k: dict(v) for k, v in c.annotations.extra.items()})
        if ann:
            cd["annotations"] = ann
        classes.append(cd)
    return {"model": m.model_id, "classes": classes}


def dump_metamodel(m: Metamodel) -> str:
    return json.dumps(metamodel_to_dict(m), indent=2, ensure_ascii=False) + "\n"


def iter_containments(m: Metamodel) -> Iterator[tuple[ClassDef, ReferenceDef]]:
    for c in m.classes:
        for r in c.references:
            if r.containment:
                yield c, r


def container_reference(m: Metamodel, class_name: str, ref: ReferenceDef) -> bool:
    """True if ``ref`` is the opposite of a containment (a parent pointer)."""
    if ref.opposite is None:
        return False
    opp = m.feature(ref.target, ref.opposite)
    return isinstance(opp, ReferenceDef) and opp.containment
