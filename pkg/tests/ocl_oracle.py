"""Independent reference for the OCL subset.

Expressions are generated as plain tuples, rendered to concrete syntax for
the real parser, and interpreted here directly over the element table. The
interpreter shares no code with ``modelrest.ocl``: it reads ``attrs`` and
``refs`` itself and re-implements the null, short-circuit and error rules.

Node shapes::

    ("lit", value, type)        ("self",)              ("var", name)
    ("nav", source, feature, type, feature_is_many)
    ("not", x)                  ("neg", x, type)
    ("bin", op, left, right, type)
    ("cop", op, source, arg_or_None)
    ("iter", op, source, var, body, type)

Types: "Boolean" | "Integer" | "Real" | "String" | ("Class", name) | ("Coll", elem).
"""
from __future__ import annotations

import math
import random

from modelrest.metamodel import AttributeDef, Metamodel

PRIMS = {"string": "String", "integer": "Integer", "float": "Real", "boolean": "Boolean"}
MAX_DEPTH = 5


def feature_type(f):
    t = PRIMS[f.datatype] if isinstance(f, AttributeDef) else ("Class", f.target)
    return ("Coll", t) if f.many else t


def depth_of(x) -> int:
    subs = [p for p in x[1:] if isinstance(p, tuple) and p and isinstance(p[0], str)
            and p[0] in ("lit", "self", "var", "nav", "not", "neg", "bin", "cop", "iter")]
    return 1 + max((depth_of(p) for p in subs), default=0)


# -- generation --------------------------------------------------------------

class ExprGen:
    """Type-directed random generator of well-typed expressions."""

    def __init__(self, m: Metamodel, rng: random.Random):
        self.m = m
        self.rng = rng
        # (source type, feature, result type) for every possible navigation
        self.navs = []
        for c in m.classes:
            for f in m.features(c.name):
                ft = feature_type(f)
                self.navs.append((("Class", c.name), f, ft))
                coll = ft if ft[0] == "Coll" else ("Coll", ft)
                self.navs.append((("Coll", ("Class", c.name)), f, coll))
        self.coll_types = sorted({r for _, _, r in self.navs if r[0] == "Coll"}, key=repr)

    def expression(self, ctx: str, depth: int = MAX_DEPTH):
        for _ in range(50):
            x = self.gen("Boolean", depth, [], ctx)
            if x is not None:
                return x
        raise RuntimeError("no expression generated")

    def gen(self, t, depth: int, scope, ctx: str):
        makers = self._leaves(t, scope, ctx)
        if depth > 1:
            makers += self._compound(t, depth - 1, scope, ctx)
        self.rng.shuffle(makers)
        # prefer compound forms most of the time so depth gets exercised
        for make in makers[:6]:
            x = make()
            if x is not None:
                return x
        return None

    def _leaves(self, t, scope, ctx):
        rng = self.rng
        out = []
        if t == "Boolean":
            out.append(lambda: ("lit", rng.random() < 0.5, "Boolean"))
        elif t == "Integer":
            out.append(lambda: ("lit", rng.randint(0, 12), "Integer"))
        elif t == "Real":
            out.append(lambda: ("lit", rng.choice([0.5, 1.25, 2.0, 30.5, 1e3, 0.0, 1e300]), "Real"))
        elif t == "String":
            out.append(lambda: ("lit", rng.choice(["", "Homer", "a'b", "Snowball II", "x\\y", "Lisa"]), "String"))
        if t == ("Class", ctx):
            out.append(lambda: ("self",))
        for name, vt in scope:
            if vt == t:
                out.append(lambda name=name: ("var", name))
        return out

    def _compound(self, t, d, scope, ctx):
        rng = self.rng
        g = lambda tt, sc=scope: self.gen(tt, d, sc, ctx)  # noqa: E731
        out = []

        def nav(src_t, f, res_t):
            def make():
                src = g(src_t)
                return None if src is None else ("nav", src, f.name, res_t, f.many)
            return make

        def binary(op, lt, rt, res):
            def make():
                a = g(lt)
                b = g(rt) if a is not None else None
                return None if b is None else ("bin", op, a, b, res)
            return make

        def iterate(op, ct, res):
            def make():
                src = g(ct)
                if src is None:
                    return None
                var = f"v{len(scope)}"
                body = self.gen("Boolean", d, scope + [(var, ct[1])], ctx)
                return None if body is None else ("iter", op, src, var, body, res)
            return make

        def coll_op(op):
            def make():
                ct = rng.choice(self.coll_types)
                src = g(ct)
                if src is None:
                    return None
                if op != "includes":
                    return ("cop", op, src, None)
                arg = g(ct[1])
                return None if arg is None else ("cop", op, src, arg)
            return make

        def arrow_on_single(op):
            # ->op applied to a single value (wrapped as a one-element collection)
            def make():
                st = rng.choice(["Integer", "Real", "String", "Boolean", ("Class", rng.choice(self.m.classes).name)])
                src = g(st)
                return None if src is None else ("cop", op, src, None)
            return make

        for src_t, f, res_t in self.navs:
            if res_t == t:
                out.append(nav(src_t, f, res_t))
        if t == "Boolean":
            for op in ("and", "or", "implies"):
                out.append(binary(op, "Boolean", "Boolean", "Boolean"))
            out.append(lambda: (lambda a: None if a is None else ("not", a))(g("Boolean")))
            for op in ("=", "<>", "<", "<=", ">", ">="):
                lt = rng.choice(["Integer", "Real", "String"])
                rt = lt if lt == "String" else rng.choice(["Integer", "Real"])
                out.append(binary(op, lt, rt, "Boolean"))
            for op in ("=", "<>"):
                classes = [c.name for c in self.m.classes]
                out.append(binary(op, ("Class", rng.choice(classes)), ("Class", rng.choice(classes)), "Boolean"))
                out.append(binary(op, "Boolean", "Boolean", "Boolean"))
            for op in ("isEmpty", "notEmpty", "includes"):
                out.append(coll_op(op))
            out.append(arrow_on_single(rng.choice(["isEmpty", "notEmpty"])))
            for op in ("forAll", "exists"):
                out.append(iterate(op, rng.choice(self.coll_types), "Boolean"))
        elif t == "Integer":
            for op in ("+", "-", "*"):
                out.append(binary(op, "Integer", "Integer", "Integer"))
            out.append(lambda: (lambda a: None if a is None else ("neg", a, "Integer"))(g("Integer")))
            out.append(coll_op("size"))
            out.append(lambda: (lambda x: None if x is None else ("cop", "size", x, None))(g("Integer")))
        elif t == "Real":
            for op in ("+", "-", "*"):
                lt, rt = rng.choice([("Real", "Real"), ("Integer", "Real"), ("Real", "Integer")])
                out.append(binary(op, lt, rt, "Real"))
            out.append(binary("/", rng.choice(["Integer", "Real"]), rng.choice(["Integer", "Real"]), "Real"))
            out.append(lambda: (lambda a: None if a is None else ("neg", a, "Real"))(g("Real")))
        elif t[0] == "Coll":
            out.append(iterate("select", t, t))
        return out


# -- rendering ---------------------------------------------------------------

def _quote(s: str) -> str:
    return "'" + s.replace("\\", "\\\\").replace("'", "\\'") + "'"


def render(x) -> str:
    kind = x[0]
    if kind == "lit":
        v, t = x[1], x[2]
        if t == "Boolean":
            return "true" if v else "false"
        return _quote(v) if t == "String" else repr(v)
    if kind == "self":
        return "self"
    if kind == "var":
        return x[1]
    if kind == "nav":
        return f"({render(x[1])}).{x[2]}" if x[1][0] not in ("self", "var", "nav") else f"{render(x[1])}.{x[2]}"
    if kind == "not":
        return f"not ({render(x[1])})"
    if kind == "neg":
        return f"-({render(x[1])})"
    if kind == "bin":
        return f"({render(x[2])}) {x[1]} ({render(x[3])})"
    if kind == "cop":
        arg = render(x[3]) if x[3] is not None else ""
        return f"({render(x[2])})->{x[1]}({arg})"
    if kind == "iter":
        return f"({render(x[2])})->{x[1]}({x[3]} | {render(x[4])})"
    raise ValueError(kind)


# -- interpretation ----------------------------------------------------------

class OracleError(Exception):
    pass


class _Undef:
    def __repr__(self) -> str:
        return "UNDEF"


UNDEF = _Undef()


class Oracle:
    def __init__(self, i):
        self.i = i
        self.m = i.metamodel

    def feature(self, e, name):
        f = self.m.feature(e.cls, name)
        if isinstance(f, AttributeDef):
            v = e.attrs.get(name)
            if f.many:
                return list(v) if v else []
            return UNDEF if v is None else v
        targets = [self.i.elements[x] for x in e.refs.get(name, [])]
        if f.many:
            return targets
        return targets[0] if targets else UNDEF

    @staticmethod
    def as_list(v):
        if v is UNDEF:
            return []
        return v if isinstance(v, list) else [v]

    @staticmethod
    def same(a, b):
        ea, eb = hasattr(a, "eid"), hasattr(b, "eid")
        if ea or eb:
            return ea and eb and a.eid == b.eid
        return a == b

    @staticmethod
    def boolean(v):
        if v is True or v is False:
            return v
        raise OracleError("not a boolean")

    def run(self, x, me, env):
        kind = x[0]
        if kind == "lit":
            return x[1]
        if kind == "self":
            return me
        if kind == "var":
            return env[x[1]]
        if kind == "nav":
            src = self.run(x[1], me, env)
            if isinstance(src, list):
                out = []
                for s in src:
                    v = self.feature(s, x[2])
                    if isinstance(v, list):
                        out.extend(v)
                    elif v is not UNDEF:
                        out.append(v)
                return out
            if src is UNDEF:
                return [] if x[4] else UNDEF
            return self.feature(src, x[2])
        if kind == "not":
            return not self.boolean(self.run(x[1], me, env))
        if kind == "neg":
            v = self.run(x[1], me, env)
            if v is UNDEF:
                raise OracleError("negating undef")
            return -v
        if kind == "cop":
            items = self.as_list(self.run(x[2], me, env))
            op = x[1]
            if op == "size":
                return len(items)
            if op == "isEmpty":
                return len(items) == 0
            if op == "notEmpty":
                return len(items) > 0
            needle = self.run(x[3], me, env)
            return needle is not UNDEF and any(self.same(a, needle) for a in items)
        if kind == "iter":
            op = x[1]
            kept = []
            for it in self.as_list(self.run(x[2], me, env)):
                r = self.boolean(self.run(x[4], me, {**env, x[3]: it}))
                if op == "forAll" and not r:
                    return False
                if op == "exists" and r:
                    return True
                if r:
                    kept.append(it)
            return kept if op == "select" else op == "forAll"
        if kind == "bin":
            return self.binary(x, me, env)
        raise ValueError(kind)

    def binary(self, x, me, env):
        op = x[1]
        if op in ("and", "or", "implies"):
            a = self.boolean(self.run(x[2], me, env))
            if op == "and" and not a:
                return False
            if op == "or" and a:
                return True
            if op == "implies" and not a:
                return True
            return self.boolean(self.run(x[3], me, env))
        a = self.run(x[2], me, env)
        b = self.run(x[3], me, env)
        if op == "=":
            if a is UNDEF or b is UNDEF:
                return a is UNDEF and b is UNDEF
            return self.same(a, b)
        if op == "<>":
            return a is not UNDEF and b is not UNDEF and not self.same(a, b)
        if op in ("<", "<=", ">", ">="):
            if a is UNDEF or b is UNDEF:
                return False
            return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[op]
        if a is UNDEF or b is UNDEF:
            raise OracleError("arithmetic on undef")
        if op == "/" and b == 0:
            raise OracleError("division by zero")
        try:
            r = {"+": lambda: a + b, "-": lambda: a - b, "*": lambda: a * b, "/": lambda: a / b}[op]()
        except OverflowError:
            raise OracleError("overflow") from None
        if isinstance(r, float) and not math.isfinite(r):
            raise OracleError("overflow")
        return r

    def evaluate(self, x, me):
        try:
            return normalize(self.run(x, me, {}))
        except OracleError:
            return ("ERR",)


def normalize(v):
    if v is UNDEF or repr(v) == "null":
        return ("NULL",)
    if hasattr(v, "eid"):
        return ("E", v.eid)
    if isinstance(v, list):
        return ("L",) + tuple(normalize(x) for x in v)
    if isinstance(v, bool):
        return ("B", v)
    if isinstance(v, int):
        return ("I", v)
    if isinstance(v, float):
        return ("F", repr(v))
    return ("S", v)
