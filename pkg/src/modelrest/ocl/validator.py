"""Invariant collection and whole-instance checking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

from ..instance import ModelInstance, fragment_path, identifier_index
from ..metamodel import Metamodel, MetamodelError, effective_identifier, is_subtype
from .ast import Node
from .evaluator import NULL, OclEvaluationError, evaluate
from .parser import OclError, parse_ocl


@dataclass(frozen=True)
class Invariant:
    name: str
    context: str
    source: str
    ast: Node
    active: bool


@dataclass(frozen=True)
class Violation:
    invariant: str
    context: str
    eid: str
    # set when the invariant could not be evaluated rather than being false
    error: str | None = None


class ViolationReport(list):
    """List of :class:`Violation`; empty when every active check holds."""

    def names(self) -> list[str]:
        return list(dict.fromkeys(v.invariant for v in self))

    def to_json(self, i: ModelInstance) -> list[dict]:
        """Elements are named by their XMI fragment in ``i``."""
        ids = identifier_index(i)
        out = []
        for v in self:
            d = {"invariant": v.invariant, "context": v.context,
                 "element": fragment_path(i, i.elements[v.eid], ids)}
            if v.error:
                d["error"] = v.error
            out.append(d)
        return out


class InvariantError(MetamodelError):
    def __init__(self, cls: str, name: str, cause: OclError):
        self.cls = cls
        self.name = name
        super().__init__(f"invariant {cls}.{name}: {cause}")


def collect_invariants(m: Metamodel) -> dict[str, list[Invariant]]:
    """Parse every OCL annotation; fail on the first bad expression."""
    out: dict[str, list[Invariant]] = {}
    for c in m.classes:
        active = set(c.annotations.constraints)
        invs = []
        for name, text in c.annotations.ocl.items():
            try:
                ast = parse_ocl(text, c.name, m)
            except OclError as exc:
                raise InvariantError(c.name, name, exc) from None
            invs.append(Invariant(name, c.name, text, ast, name in active))
        out[c.name] = invs
    return out


def applicable(m: Metamodel, invariants: dict[str, list[Invariant]], cls: str) -> Iterator[Invariant]:
    for context, invs in invariants.items():
        if is_subtype(cls, context, m):
            for inv in invs:
                if inv.active:
                    yield inv


def check_instance(i: ModelInstance, invariants: dict[str, list[Invariant]]) -> ViolationReport:
    report = ViolationReport()
    if not i.validation_active:
        return report
    m = i.metamodel
    for e in i.walk():
        for ref in m.all_references(e.cls):
            n = len(i.ref_eids(e, ref))
            if n < ref.lower:
                report.append(Violation(f"{ref.name}.lowerBound", e.cls, e.eid))
            if ref.upper != -1 and n > ref.upper:
                report.append(Violation(f"{ref.name}.upperBound", e.cls, e.eid))
            if ref.containment and ref.many:
                _check_unique_ids(i, e, ref.name, report)
        for inv in applicable(m, invariants, e.cls):
            try:
                result = evaluate(inv.ast, e, i)
            except OclEvaluationError as exc:
                report.append(Violation(inv.name, inv.context, e.eid, str(exc)))
                continue
            if result is NULL:
                report.append(Violation(inv.name, inv.context, e.eid, "invariant is undefined"))
            elif result is not True:
                report.append(Violation(inv.name, inv.context, e.eid))
    return report


def _check_unique_ids(i: ModelInstance, owner, ref_name: str, report: ViolationReport) -> None:
    m = i.metamodel
    seen: set[tuple[str, str]] = set()
    for eid in owner.refs.get(ref_name, ()):
        e = i.elements[eid]
        ident = effective_identifier(m.get(e.cls), m)
        if ident is None or not m.feature(e.cls, ident).unique:
            continue
        key = i.identifier_of(e)
        if key is None:
            continue
        if (ident, key) in seen:
            report.append(Violation(f"{ident}.unique", e.cls, e.eid))
        seen.add((ident, key))


class Validator:
    """Compiled invariants of one metamodel, callable on its instances."""

    def __init__(self, m: Metamodel):
        self.metamodel = m
        self.invariants = collect_invariants(m)

    def __call__(self, i: ModelInstance) -> ViolationReport:
        return check_instance(i, self.invariants)
