"""Evaluation of typed OCL expressions over model instances.

Unset single-valued features evaluate to :data:`NULL`. Navigating from
``NULL`` yields ``NULL`` (or an empty collection for multi-valued
features); ``->`` operations treat ``NULL`` as an empty collection;
``=`` is true only between two ``NULL`` values, every other comparison
involving ``NULL`` is false; arithmetic, negation and boolean connectives
on ``NULL`` raise :class:`OclEvaluationError`, as do division by zero and
any Real result that is not finite.
"""
from __future__ import annotations

import math
from typing import Any

from ..instance import Element, ModelInstance
from ..metamodel import ReferenceDef
from .ast import Binary, CollectionOp, Iterate, Literal, Nav, Node, SelfRef, Unary, Var


class _Null:
    _instance = None

    def __new__(cls) -> "_Null":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "null"

    def __bool__(self) -> bool:
        raise TypeError("null has no truth value")


NULL = _Null()


class OclEvaluationError(Exception):
    pass


def _feature_value(i: ModelInstance, e: Element, node: Nav) -> Any:
    if node.is_reference:
        ref = i.metamodel.feature(e.cls, node.feature)
        assert isinstance(ref, ReferenceDef)
        targets = i.ref_values(e, ref)
        if node.many:
            return targets
        return targets[0] if targets else NULL
    value = e.attrs.get(node.feature)
    if node.many:
        return list(value) if value is not None else []
    return NULL if value is None else value


def _as_collection(value: Any) -> list:
    if isinstance(value, list):
        return value
    if value is NULL:
        return []
    return [value]


def _equal(a: Any, b: Any) -> bool:
    if isinstance(a, Element) or isinstance(b, Element):
        return a is b or (isinstance(a, Element) and isinstance(b, Element) and a.eid == b.eid)
    return a == b


def _truth(value: Any, what: str) -> bool:
    if value is NULL or not isinstance(value, bool):
        raise OclEvaluationError(f"{what} is undefined")
    return value


class _Evaluator:
    def __init__(self, i: ModelInstance, self_element: Element):
        self.i = i
        self.env: dict[str, Any] = {}
        self.self_element = self_element

    def eval(self, node: Node) -> Any:
        method = getattr(self, "_" + type(node).__name__)
        return method(node)

    def _Literal(self, node: Literal) -> Any:
        return node.value

    def _SelfRef(self, node: SelfRef) -> Any:
        return self.self_element

    def _Var(self, node: Var) -> Any:
        return self.env[node.name]

    def _Nav(self, node: Nav) -> Any:
        source = self.eval(node.source)
        if isinstance(source, list):
            out: list = []
            for x in source:
                v = _feature_value(self.i, x, node)
                if isinstance(v, list):
                    out.extend(v)
                elif v is not NULL:
                    out.append(v)
            return out
        if source is NULL:
            return [] if node.many else NULL
        return _feature_value(self.i, source, node)

    def _CollectionOp(self, node: CollectionOp) -> Any:
        items = _as_collection(self.eval(node.source))
        if node.op == "size":
            return len(items)
        if node.op == "isEmpty":
            return not items
        if node.op == "notEmpty":
            return bool(items)
        needle = self.eval(node.args[0])
        if needle is NULL:
            return False
        return any(_equal(x, needle) for x in items)

    def _Iterate(self, node: Iterate) -> Any:
        items = _as_collection(self.eval(node.source))
        saved = self.env.get(node.var, _MISSING)
        kept = []
        try:
            for x in items:
                self.env[node.var] = x
                r = _truth(self.eval(node.body), f"{node.op} body")
                if node.op == "forAll" and not r:
                    return False
                if node.op == "exists" and r:
                    return True
                if node.op == "select" and r:
                    kept.append(x)
        finally:
            if saved is _MISSING:
                self.env.pop(node.var, None)
            else:
                self.env[node.var] = saved
        if node.op == "select":
            return kept
        return node.op == "forAll"

    def _Unary(self, node: Unary) -> Any:
        v = self.eval(node.operand)
        if node.op == "not":
            return not _truth(v, "operand of not")
        if v is NULL:
            raise OclEvaluationError("negation of null")
        return -v

    def _Binary(self, node: Binary) -> Any:
        op = node.op
        if op in ("and", "or", "implies"):
            left = _truth(self.eval(node.left), f"left operand of {op}")
            if op == "and" and not left:
                return False
            if op == "or" and left:
                return True
            if op == "implies" and not left:
                return True
            return _truth(self.eval(node.right), f"right operand of {op}")
        left = self.eval(node.left)
        right = self.eval(node.right)
        if op in ("=", "<>"):
            if left is NULL or right is NULL:
                return op == "=" and left is NULL and right is NULL
            same = _equal(left, right)
            return same if op == "=" else not same
        if op in ("<", "<=", ">", ">="):
            if left is NULL or right is NULL:
                return False
            if op == "<":
                return left < right
            if op == "<=":
                return left <= right
            if op == ">":
                return left > right
            return left >= right
        if left is NULL or right is NULL:
            raise OclEvaluationError(f"arithmetic on null in '{op}'")
        try:
            if op == "+":
                result = left + right
            elif op == "-":
                result = left - right
            elif op == "*":
                result = left * right
            elif right == 0:
                raise OclEvaluationError("division by zero")
            else:
                result = left / right
        except OverflowError as exc:
            raise OclEvaluationError(f"numeric overflow in '{op}'") from exc
        if isinstance(result, float) and not math.isfinite(result):
            raise OclEvaluationError(f"numeric overflow in '{op}'")
        return result


_MISSING = object()


def evaluate(x: Node, e: Element, i: ModelInstance) -> Any:
    """Evaluate ``x`` with ``self`` bound to ``e``.

    Collections come back as Python lists, objects as :class:`Element`.
    """
    return _Evaluator(i, e).eval(x)
