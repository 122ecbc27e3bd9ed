"""Typed syntax tree for the OCL subset."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any


@dataclass(frozen=True)
class OclType:
    kind: str  # Boolean | Integer | Real | String | Class | Collection
    name: str | None = None  # class name for Class
    elem: "OclType | None" = None  # element type for Collection

    def __str__(self) -> str:
        if self.kind == "Class":
            return str(self.name)
        if self.kind == "Collection":
            return f"Collection({self.elem})"
        return self.kind

    @property
    def numeric(self) -> bool:
        return self.kind in ("Integer", "Real")


BOOLEAN = OclType("Boolean")
INTEGER = OclType("Integer")
REAL = OclType("Real")
STRING = OclType("String")


def class_type(name: str) -> OclType:
    return OclType("Class", name=name)


def collection_of(elem: OclType) -> OclType:
    return OclType("Collection", elem=elem)


@dataclass(frozen=True)
class Node:
    pos: int


@dataclass(frozen=True)
class Literal(Node):
    value: Any
    type: OclType


@dataclass(frozen=True)
class SelfRef(Node):
    type: OclType


@dataclass(frozen=True)
class Var(Node):
    name: str
    type: OclType


@dataclass(frozen=True)
class Nav(Node):
    """``source.feature``; over a collection source this is an implicit collect."""
    source: Node
    feature: str
    is_reference: bool
    many: bool
    type: OclType


@dataclass(frozen=True)
class CollectionOp(Node):
    """``source->op(args)`` for size, isEmpty, notEmpty, includes."""
    source: Node
    op: str
    args: tuple[Node, ...]
    type: OclType


@dataclass(frozen=True)
class Iterate(Node):
    """``source->op(var | body)`` for forAll, exists, select."""
    source: Node
    op: str
    var: str
    body: Node
    type: OclType


@dataclass(frozen=True)
class Binary(Node):
    op: str
    left: Node
    right: Node
    type: OclType


@dataclass(frozen=True)
class Unary(Node):
    op: str  # "not" | "-"
    operand: Node
    type: OclType
