"""Recursive-descent parser and type checker for the OCL subset.

The accepted grammar is published in ``docs/ocl.md``. Parsing and type
checking happen in one pass: every node is built with its static type,
navigation is resolved against the context class (inherited features
included), and ill-typed input is rejected with the offending position.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

from ..metamodel import AttributeDef, Metamodel, ReferenceDef
from .ast import (
    BOOLEAN,
    INTEGER,
    REAL,
    STRING,
    Binary,
    CollectionOp,
    Iterate,
    Literal,
    Nav,
    Node,
    OclType,
    SelfRef,
    Unary,
    Var,
    class_type,
    collection_of,
)


class OclError(ValueError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} at position {position}")


class OclSyntaxError(OclError):
    pass


class OclTypeError(OclError):
    pass


KEYWORDS = {"self", "true", "false", "and", "or", "not", "implies"}
SIMPLE_OPS = {"size", "isEmpty", "notEmpty", "includes"}
ITERATORS = {"forAll", "exists", "select"}

_DATATYPE_TYPES = {"string": STRING, "integer": INTEGER, "float": REAL, "boolean": BOOLEAN}

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<str>'(?:[^'\\]|\\.)*')
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>->|<=|>=|<>|[=<>+\-*/().|,])
""", re.VERBOSE)

_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", "'": "'"}


@dataclass(frozen=True)
class Token:
    kind: str  # num | str | ident | kw | op | end
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos] == "'":
                raise OclSyntaxError("unterminated string literal", pos)
            raise OclSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            value = m.group()
            if kind == "ident" and value in KEYWORDS:
                kind = "kw"
            tokens.append(Token(kind, value, pos))
        pos = m.end()
    tokens.append(Token("end", "", len(text)))
    return tokens


def _unescape(raw: str, pos: int) -> str:
    out = []
    i = 1
    while i < len(raw) - 1:
        ch = raw[i]
        if ch == "\\":
            nxt = raw[i + 1]
            if nxt not in _ESCAPES:
                raise OclSyntaxError(f"unknown escape \\{nxt}", pos + i)
            out.append(_ESCAPES[nxt])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _feature_type(f: AttributeDef | ReferenceDef) -> OclType:
    if isinstance(f, AttributeDef):
        t = _DATATYPE_TYPES[f.datatype]
    else:
        t = class_type(f.target)
    return collection_of(t) if f.many else t


def _comparable(a: OclType, b: OclType) -> bool:
    if a.numeric and b.numeric:
        return True
    if a.kind == "Class" and b.kind == "Class":
        return True
    return a.kind == b.kind and a.kind in ("Boolean", "String")


class _Parser:
    def __init__(self, text: str, context: str, m: Metamodel):
        self.tokens = tokenize(text)
        self.i = 0
        self.context = context
        self.m = m
        self.scope: list[tuple[str, OclType]] = []

    # -- token helpers

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def at(self, *texts: str) -> bool:
        t = self.tok
        return t.kind in ("op", "kw") and t.text in texts

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise OclSyntaxError(f"expected {text!r}, found {self.tok.text or 'end of input'!r}", self.tok.pos)
        return self.advance()

    # -- grammar

    def parse(self) -> Node:
        node = self.implies_expr()
        if self.tok.kind != "end":
            raise OclSyntaxError(f"unexpected {self.tok.text!r}", self.tok.pos)
        return node

    def _boolean(self, node: Node, op: str) -> None:
        if node.type != BOOLEAN:
            raise OclTypeError(f"'{op}' needs Boolean operands, got {node.type}", node.pos)

    def implies_expr(self) -> Node:
        left = self.or_expr()
        while self.at("implies"):
            op = self.advance()
            right = self.or_expr()
            self._boolean(left, "implies")
            self._boolean(right, "implies")
            left = Binary(op.pos, "implies", left, right, BOOLEAN)
        return left

    def or_expr(self) -> Node:
        left = self.and_expr()
        while self.at("or"):
            op = self.advance()
            right = self.and_expr()
            self._boolean(left, "or")
            self._boolean(right, "or")
            left = Binary(op.pos, "or", left, right, BOOLEAN)
        return left

    def and_expr(self) -> Node:
        left = self.eq_expr()
        while self.at("and"):
            op = self.advance()
            right = self.eq_expr()
            self._boolean(left, "and")
            self._boolean(right, "and")
            left = Binary(op.pos, "and", left, right, BOOLEAN)
        return left

    def eq_expr(self) -> Node:
        left = self.rel_expr()
        if self.at("=", "<>"):
            op = self.advance()
            right = self.rel_expr()
            if not _comparable(left.type, right.type):
                raise OclTypeError(f"cannot compare {left.type} with {right.type}", op.pos)
            return Binary(op.pos, op.text, left, right, BOOLEAN)
        return left

    def rel_expr(self) -> Node:
        left = self.add_expr()
        if self.at("<", "<=", ">", ">="):
            op = self.advance()
            right = self.add_expr()
            ok = (left.type.numeric and right.type.numeric) or (left.type == STRING and right.type == STRING)
            if not ok:
                raise OclTypeError(f"cannot order {left.type} and {right.type}", op.pos)
            return Binary(op.pos, op.text, left, right, BOOLEAN)
        return left

    def _arith(self, op: Token, left: Node, right: Node) -> Node:
        if not (left.type.numeric and right.type.numeric):
            raise OclTypeError(f"'{op.text}' needs numeric operands, got {left.type} and {right.type}", op.pos)
        if op.text == "/" or REAL in (left.type, right.type):
            t = REAL
        else:
            t = INTEGER
        return Binary(op.pos, op.text, left, right, t)

    def add_expr(self) -> Node:
        left = self.mul_expr()
        while self.at("+", "-"):
            op = self.advance()
            left = self._arith(op, left, self.mul_expr())
        return left

    def mul_expr(self) -> Node:
        left = self.unary()
        while self.at("*", "/"):
            op = self.advance()
            left = self._arith(op, left, self.unary())
        return left

    def unary(self) -> Node:
        if self.at("not"):
            op = self.advance()
            operand = self.unary()
            self._boolean(operand, "not")
            return Unary(op.pos, "not", operand, BOOLEAN)
        if self.at("-"):
            op = self.advance()
            operand = self.unary()
            if not operand.type.numeric:
                raise OclTypeError(f"cannot negate {operand.type}", op.pos)
            return Unary(op.pos, "-", operand, operand.type)
        return self.postfix()

    def postfix(self) -> Node:
        node = self.primary()
        while True:
            if self.at("."):
                self.advance()
                node = self.navigate(node, self.identifier())
            elif self.at("->"):
                self.advance()
                node = self.arrow(node)
            else:
                return node

    def identifier(self) -> Token:
        t = self.tok
        if t.kind != "ident":
            raise OclSyntaxError(f"expected a name, found {t.text or 'end of input'!r}", t.pos)
        return self.advance()

    def navigate(self, source: Node, name: Token) -> Node:
        st = source.type
        owner = st.elem if st.kind == "Collection" else st
        if owner is None or owner.kind != "Class":
            raise OclTypeError(f"cannot navigate '{name.text}' from {st}", name.pos)
        f = self.m.feature(owner.name, name.text)
        if f is None:
            raise OclTypeError(f"{owner.name} has no feature '{name.text}'", name.pos)
        ft = _feature_type(f)
        if st.kind == "Collection":
            # implicit collect flattens nested collections
            ft = ft if ft.kind == "Collection" else collection_of(ft)
        return Nav(name.pos, source, name.text, isinstance(f, ReferenceDef), f.many, ft)

    def arrow(self, source: Node) -> Node:
        name = self.identifier()
        st = source.type if source.type.kind == "Collection" else collection_of(source.type)
        self.expect("(")
        if name.text in ITERATORS:
            var = self.identifier()
            self.expect("|")
            self.scope.append((var.text, st.elem))
            try:
                body = self.implies_expr()
            finally:
                self.scope.pop()
            self.expect(")")
            if body.type != BOOLEAN:
                raise OclTypeError(f"{name.text} body must be Boolean, got {body.type}", body.pos)
            t = st if name.text == "select" else BOOLEAN
            return Iterate(name.pos, source, name.text, var.text, body, t)
        if name.text not in SIMPLE_OPS:
            raise OclTypeError(f"unknown collection operation '{name.text}'", name.pos)
        args: list[Node] = []
        if not self.at(")"):
            args.append(self.implies_expr())
            while self.at(","):
                self.advance()
                args.append(self.implies_expr())
        self.expect(")")
        if name.text == "includes":
            if len(args) != 1:
                raise OclTypeError("includes takes one argument", name.pos)
            if not _comparable(st.elem, args[0].type):
                raise OclTypeError(f"cannot look for {args[0].type} in {st}", args[0].pos)
            return CollectionOp(name.pos, source, "includes", tuple(args), BOOLEAN)
        if args:
            raise OclTypeError(f"{name.text} takes no arguments", name.pos)
        t = INTEGER if name.text == "size" else BOOLEAN
        return CollectionOp(name.pos, source, name.text, (), t)

    def primary(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self.advance()
            if any(c in t.text for c in ".eE"):
                value = float(t.text)
                if not math.isfinite(value):
                    raise OclSyntaxError(f"number {t.text} out of range", t.pos)
                return Literal(t.pos, value, REAL)
            return Literal(t.pos, int(t.text), INTEGER)
        if t.kind == "str":
            self.advance()
            return Literal(t.pos, _unescape(t.text, t.pos), STRING)
        if t.kind == "kw" and t.text in ("true", "false"):
            self.advance()
            return Literal(t.pos, t.text == "true", BOOLEAN)
        if t.kind == "kw" and t.text == "self":
            self.advance()
            return SelfRef(t.pos, class_type(self.context))
        if t.kind == "ident":
            self.advance()
            for name, vt in reversed(self.scope):
                if name == t.text:
                    return Var(t.pos, name, vt)
            # bare feature name: implicit self
            return self.navigate(SelfRef(t.pos, class_type(self.context)), t)
        if self.at("("):
            self.advance()
            node = self.implies_expr()
            self.expect(")")
            return node
        raise OclSyntaxError(f"unexpected {t.text or 'end of input'!r}", t.pos)


def parse_ocl(text: str, context: str, m: Metamodel, *, invariant: bool = True) -> Node:
    """Parse ``text`` in the context of class ``context``.

    With ``invariant`` set, the expression must be Boolean.
    """
    m.get(context)
    node = _Parser(text, context, m).parse()
    if invariant and node.type != BOOLEAN:
        raise OclTypeError(f"invariant must be Boolean, got {node.type}", 0)
    return node
