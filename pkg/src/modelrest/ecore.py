"""Import metamodels from Ecore XMI documents.

Only the structural subset is understood: one ``EPackage`` holding
``EClass`` classifiers with ``EAttribute``/``EReference`` features,
supertypes given as ``#//Name`` fragments, and ``eAnnotations``. Anything
else (operations, enums, custom datatypes, derived features, generics,
subpackages) is rejected with an ``unsupported construct`` error rather
than being dropped.
"""
from __future__ import annotations

import re
import xml.etree.ElementTree as ET

from .metamodel import (
    CONSTRAINTS_SOURCE,
    OCL_SOURCE,
    ROLES_SOURCE,
    UNBOUNDED,
    AnnotationSet,
    AttributeDef,
    ClassDef,
    Metamodel,
    MetamodelError,
    ReferenceDef,
    check_metamodel,
)

XSI = "http://www.w3.org/2001/XMLSchema-instance"
ECORE_NS = "http://www.eclipse.org/emf/2002/Ecore"

_DATATYPES = {
    "EString": "string",
    "EBoolean": "boolean", "EBooleanObject": "boolean",
    "EInt": "integer", "EIntegerObject": "integer", "ELong": "integer",
    "ELongObject": "integer", "EShort": "integer", "EShortObject": "integer",
    "EByte": "integer", "EByteObject": "integer", "EBigInteger": "integer",
    "EFloat": "float", "EFloatObject": "float", "EDouble": "float",
    "EDoubleObject": "float", "EBigDecimal": "float",
}

# annotation sources as written by OCLinEcore tooling, mapped onto ours
_OCL_SOURCES = {OCL_SOURCE, ECORE_NS + "/OCL", ECORE_NS + "/OCL/Pivot"}

_FALSE, _TRUE = "false", "true"


class UnsupportedConstruct(MetamodelError):
    def __init__(self, construct: str, path: str):
        self.construct = construct
        self.path = path
        super().__init__(f"unsupported construct: {construct} at {path}")


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _xsi_type(el: ET.Element) -> str | None:
    t = el.get(f"{{{XSI}}}type")
    return t.split(":", 1)[-1] if t else None


def _bool(el: ET.Element, name: str, default: bool = False) -> bool:
    value = el.get(name)
    if value is None:
        return default
    return value == _TRUE


def _fragment_name(ref: str, path: str) -> str:
    # "#//Name", "ecore:EClass #//Name", or "Family.ecore#//Name"
    ref = ref.split()[-1]
    m = re.fullmatch(r"[^#]*#//([A-Za-z_][A-Za-z0-9_]*)", ref)
    if not m:
        raise UnsupportedConstruct(f"type reference {ref!r}", path)
    return m.group(1)


def _feature_fragment(ref: str, path: str) -> tuple[str, str]:
    m = re.fullmatch(r"[^#]*#//([A-Za-z_][A-Za-z0-9_]*)/([A-Za-z_][A-Za-z0-9_]*)", ref.split()[-1])
    if not m:
        raise UnsupportedConstruct(f"opposite reference {ref!r}", path)
    return m.group(1), m.group(2)


def _datatype(el: ET.Element, path: str) -> str:
    etype = el.get("eType")
    if etype is None:
        raise MetamodelError(f"attribute without eType at {path}")
    m = re.search(r"Ecore#//(\w+)$", etype)
    if not m or m.group(1) not in _DATATYPES:
        raise UnsupportedConstruct(f"datatype {etype.split()[-1]}", path)
    return _DATATYPES[m.group(1)]


def _bound(el: ET.Element, name: str, default: int) -> int:
    raw = el.get(name)
    if raw is None:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise MetamodelError(f"invalid {name} {raw!r}") from None
    # -2 is Ecore's "unspecified" and behaves like unbounded
    return UNBOUNDED if value < 0 else value


def _annotation_names(details: list[tuple[str, str]], key: str) -> tuple[str, ...]:
    names: list[str] = []
    for k, v in details:
        if k == key:
            names.extend(n for n in re.split(r"[\s,]+", v) if n)
        else:
            names.append(k)
    return tuple(names)


def _annotations(cls_el: ET.Element, path: str) -> AnnotationSet:
    ocl: dict[str, str] = {}
    constraints: tuple[str, ...] = ()
    roles: tuple[str, ...] = ()
    extra: dict[str, dict[str, str]] = {}
    for ann in cls_el.findall("eAnnotations"):
        source = ann.get("source", "")
        details = []
        for child in ann:
            if _local(child.tag) != "details":
                raise UnsupportedConstruct(f"eAnnotations/{_local(child.tag)}", f"{path}/eAnnotations")
            details.append((child.get("key", ""), child.get("value", "")))
        if source in _OCL_SOURCES:
            ocl.update(details)
        elif source == CONSTRAINTS_SOURCE:
            constraints = _annotation_names(details, "constraints")
        elif source == ECORE_NS and any(k == "constraints" for k, _ in details):
            constraints = _annotation_names([d for d in details if d[0] == "constraints"], "constraints")
        elif source == ROLES_SOURCE:
            roles = _annotation_names(details, "roles")
        else:
            extra[source] = dict(details)
    return AnnotationSet(ocl=ocl, constraints=constraints, roles=roles, extra=extra)


def import_ecore_xmi(text: str | bytes) -> Metamodel:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MetamodelError(f"XML syntax error: {exc}", exc.position) from None

    if _local(root.tag) == "XMI":
        packages = [c for c in root if _local(c.tag) == "EPackage"]
        if len(packages) != 1:
            raise UnsupportedConstruct("multiple packages", "/XMI")
        root = packages[0]
    if _local(root.tag) != "EPackage":
        raise UnsupportedConstruct(_local(root.tag), "/")
    pkg_name = root.get("name")
    if not pkg_name:
        raise MetamodelError("EPackage without name")
    base = f"/{pkg_name}"

    classes: list[ClassDef] = []
    for child in root:
        tag = _local(child.tag)
        if tag == "eAnnotations":
            continue
        if tag == "eSubpackages":
            raise UnsupportedConstruct("eSubpackages", f"{base}/{child.get('name')}")
        if tag != "eClassifiers":
            raise UnsupportedConstruct(tag, base)
        kind = _xsi_type(child)
        name = child.get("name", "")
        path = f"{base}/{name}"
        if kind != "EClass":
            raise UnsupportedConstruct(kind or "untyped classifier", path)
        classes.append(_import_class(child, name, path))

    m = Metamodel(model_id=pkg_name, classes=tuple(classes))
    check_metamodel(m)
    return m


def _import_class(el: ET.Element, name: str, path: str) -> ClassDef:
    if el.get("instanceClassName") or el.get("instanceTypeName"):
        raise UnsupportedConstruct("instanceClassName", path)
    supertypes = tuple(_fragment_name(s, path) for s in (el.get("eSuperTypes") or "").split())
    attrs: list[AttributeDef] = []
    refs: list[ReferenceDef] = []
    for child in el:
        tag = _local(child.tag)
        if tag == "eAnnotations":
            continue
        fname = child.get("name", "")
        fpath = f"{path}/{fname}"
        if tag == "eOperations":
            raise UnsupportedConstruct("EOperation", fpath)
        if tag in ("eGenericSuperTypes", "eTypeParameters"):
            raise UnsupportedConstruct("generics", path)
        if tag != "eStructuralFeatures":
            raise UnsupportedConstruct(tag, path)
        for flag in ("derived", "transient", "volatile"):
            if _bool(child, flag):
                raise UnsupportedConstruct(f"{flag} feature", fpath)
        if any(_local(g.tag) == "eGenericType" for g in child):
            raise UnsupportedConstruct("generics", fpath)
        kind = _xsi_type(child)
        lower = _bound(child, "lowerBound", 0)
        upper = _bound(child, "upperBound", 1)
        if kind == "EAttribute":
            attrs.append(AttributeDef(
                name=fname,
                datatype=_datatype(child, fpath),
                many=upper == UNBOUNDED or upper > 1,
                identifier=_bool(child, "iD"),
                unique=_bool(child, "unique"),
            ))
        elif kind == "EReference":
            etype = child.get("eType")
            if etype is None:
                raise MetamodelError(f"reference without eType at {fpath}")
            opposite = child.get("eOpposite")
            refs.append(ReferenceDef(
                name=fname,
                target=_fragment_name(etype, fpath),
                containment=_bool(child, "containment"),
                lower=lower,
                upper=upper,
                opposite=_feature_fragment(opposite, fpath)[1] if opposite else None,
            ))
        else:
            raise UnsupportedConstruct(kind or "untyped feature", fpath)
    return ClassDef(
        name=name,
        abstract=_bool(el, "abstract") or _bool(el, "interface"),
        supertypes=supertypes,
        attributes=tuple(attrs),
        references=tuple(refs),
        annotations=_annotations(el, path),
    )
