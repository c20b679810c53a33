"""Parsing of math expressions into differentiable scalar graphs.

The grammar (exact):

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := unary ('^' factor)?
    unary  := '-' unary | atom
    atom   := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'

Builtins: sin, cos, tan, exp, log, sqrt, abs, atan2(y, x), min, max and the
constant pi. ``^`` is right-associative; constant integer exponents are
evaluated by repeated multiplication, other exponents through the power
chain rule (positive base required).

Evaluation returns exact values, gradients and Hessians via forward-mode
jet arithmetic (:mod:`fluxsym.jets`), never finite differences. A central
finite-difference check (:func:`fd_check`) is provided as a test oracle.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .chart import ChartDomain
from .fields import Field
from .jets import DomainError, Jet, jet_atan2, jet_max, jet_min

__all__ = [
    "ChartDomain",
    "DomainError",
    "ExprSyntaxError",
    "Jet2",
    "ScalarGraph",
    "UnknownIdentifier",
    "eval_jet2",
    "fd_check",
    "parse",
]


class ExprSyntaxError(ValueError):
    def __init__(self, position: int, expected, found: str = ""):
        self.position = position
        self.expected = set(expected)
        self.found = found
        exp = ", ".join(sorted(self.expected))
        super().__init__(
            f"syntax error at position {position}: expected {exp}"
            + (f", found {found!r}" if found else "")
        )


class UnknownIdentifier(ValueError):
    def __init__(self, name: str, position: int = -1):
        self.name = name
        self.position = position
        super().__init__(f"unknown identifier {name!r}")


# -- AST -------------------------------------------------------------------


class Num:
    __slots__ = ("value",)

    def __init__(self, value: float):
        self.value = float(value)


class Coord:
    __slots__ = ("index", "name")

    def __init__(self, index: int, name: str):
        self.index = index
        self.name = name


class Param:
    __slots__ = ("name",)

    def __init__(self, name: str):
        self.name = name


class Bin:
    __slots__ = ("op", "a", "b")

    def __init__(self, op: str, a, b):
        self.op = op
        self.a = a
        self.b = b


class Neg:
    __slots__ = ("a",)

    def __init__(self, a):
        self.a = a


class Pow:
    __slots__ = ("base", "exponent", "const_exp")

    def __init__(self, base, exponent, const_exp):
        self.base = base
        self.exponent = exponent
        self.const_exp = const_exp  # float when the exponent folds to a constant


class Call:
    __slots__ = ("name", "args")

    def __init__(self, name: str, args):
        self.name = name
        self.args = args


_UNARY_FNS = {
    "sin": (lambda j: j.sin(), math.sin),
    "cos": (lambda j: j.cos(), math.cos),
    "tan": (lambda j: j.tan(), math.tan),
    "exp": (lambda j: j.exp(), math.exp),
    "log": (lambda j: j.log(), math.log),
    "sqrt": (lambda j: j.sqrt(), math.sqrt),
    "abs": (lambda j: j.absolute(), abs),
}

_BINARY_FNS = {
    "atan2": (jet_atan2, math.atan2),
    "min": (jet_min, min),
    "max": (jet_max, max),
}

BUILTIN_NAMES = set(_UNARY_FNS) | set(_BINARY_FNS) | {"pi"}


# -- tokenizer ---------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(src: str):
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None or m.end() == pos:
            stripped = src[pos:].lstrip()
            if not stripped:
                break
            bad_at = len(src) - len(stripped)
            raise ExprSyntaxError(bad_at, {"number", "identifier", "operator"}, src[bad_at])
        if m.group("num") is not None:
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.group("ident") is not None:
            tokens.append(("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str, chart: ChartDomain, params: dict):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0
        self.chart = chart
        self.params = params

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, text, pos = self.peek()
        if kind == "op" and text == op:
            return self.take()
        raise ExprSyntaxError(pos, {op}, text)

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(pos, {"end of input", "operator"}, text)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.take()
                node = Bin(text, node, self.term())
            else:
                return node

    def term(self):
        node = self.factor()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.take()
                node = Bin(text, node, self.factor())
            else:
                return node

    def factor(self):
        base = self.unary()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.take()
            exponent = self.factor()
            return Pow(base, exponent, _fold_const(exponent, self.params))
        return base

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Neg(self.unary())
        return self.atom()

    def atom(self):
        kind, text, pos = self.take()
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        if kind == "num":
            return Num(float(text))
        if kind == "ident":
            nxt_kind, nxt_text, _ = self.peek()
            if nxt_kind == "op" and nxt_text == "(":
                if text not in _UNARY_FNS and text not in _BINARY_FNS:
                    raise UnknownIdentifier(text, pos)
                self.take()
                args = [self.expr()]
                while True:
                    k, t, _ = self.peek()
                    if k == "op" and t == ",":
                        self.take()
                        args.append(self.expr())
                    else:
                        break
                self.expect_op(")")
                if text in _UNARY_FNS and len(args) != 1:
                    raise ExprSyntaxError(pos, {f"{text} takes 1 argument"})
                if text in _BINARY_FNS and len(args) != 2:
                    raise ExprSyntaxError(pos, {f"{text} takes 2 arguments"})
                return Call(text, args)
            if text == "pi":
                return Num(math.pi)
            if text in self.chart.names:
                return Coord(self.chart.names.index(text), text)
            if text in self.params:
                return Param(text)
            raise UnknownIdentifier(text, pos)
        raise ExprSyntaxError(pos, {"number", "identifier", "'('", "'-'"}, text)


def _fold_const(node, params):
    """Value of a coordinate-free subtree, or None."""
    try:
        return _const_value(node, params)
    except ValueError:
        return None


def _const_value(node, params):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Param):
        return float(params[node.name])
    if isinstance(node, Neg):
        return -_const_value(node.a, params)
    if isinstance(node, Bin):
        a = _const_value(node.a, params)
        b = _const_value(node.b, params)
        return {"+": a + b, "-": a - b, "*": a * b, "/": a / b}[node.op]
    if isinstance(node, Pow):
        return _const_value(node.base, params) ** _const_value(node.exponent, params)
    if isinstance(node, Call):
        args = [_const_value(a, params) for a in node.args]
        if node.name in _UNARY_FNS:
            return _UNARY_FNS[node.name][1](args[0])
        return _BINARY_FNS[node.name][1](*args)
    raise ValueError("not constant")


# -- evaluation ---------------------------------------------------------------


def _eval_node(node, pts, order, params):
    n = pts.shape[0]
    if isinstance(node, Num):
        return Jet.const(node.value, n, order)
    if isinstance(node, Coord):
        return Jet.coord(pts, node.index, order)
    if isinstance(node, Param):
        return Jet.const(params[node.name], n, order)
    if isinstance(node, Neg):
        return -_eval_node(node.a, pts, order, params)
    if isinstance(node, Bin):
        a = _eval_node(node.a, pts, order, params)
        b = _eval_node(node.b, pts, order, params)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        return a / b
    if isinstance(node, Pow):
        base = _eval_node(node.base, pts, order, params)
        e = node.const_exp
        if e is not None:
            k = round(e)
            if abs(e - k) < 1e-12 and abs(k) <= 128:
                return base.powi(int(k))
            return base.powf(e)
        exponent = _eval_node(node.exponent, pts, order, params)
        return (exponent * base.log()).exp()
    if isinstance(node, Call):
        args = [_eval_node(a, pts, order, params) for a in node.args]
        if node.name in _UNARY_FNS:
            return _UNARY_FNS[node.name][0](args[0])
        return _BINARY_FNS[node.name][0](*args)
    raise TypeError(f"bad AST node {node!r}")


def _compile_node(node, params):
    if isinstance(node, Num):
        v = node.value
        return lambda x, y, z: v
    if isinstance(node, Coord):
        return [lambda x, y, z: x, lambda x, y, z: y, lambda x, y, z: z][node.index]
    if isinstance(node, Param):
        v = float(params[node.name])
        return lambda x, y, z: v
    if isinstance(node, Neg):
        f = _compile_node(node.a, params)
        return lambda x, y, z: -f(x, y, z)
    if isinstance(node, Bin):
        fa = _compile_node(node.a, params)
        fb = _compile_node(node.b, params)
        return {
            "+": lambda x, y, z: fa(x, y, z) + fb(x, y, z),
            "-": lambda x, y, z: fa(x, y, z) - fb(x, y, z),
            "*": lambda x, y, z: fa(x, y, z) * fb(x, y, z),
            "/": lambda x, y, z: fa(x, y, z) / fb(x, y, z),
        }[node.op]
    if isinstance(node, Pow):
        fb = _compile_node(node.base, params)
        e = node.const_exp
        if e is not None:
            k = round(e)
            if abs(e - k) < 1e-12 and abs(k) <= 128:
                k = int(k)
                return lambda x, y, z: fb(x, y, z) ** k
            return lambda x, y, z: fb(x, y, z) ** e
        fe = _compile_node(node.exponent, params)
        return lambda x, y, z: fb(x, y, z) ** fe(x, y, z)
    if isinstance(node, Call):
        fns = [_compile_node(a, params) for a in node.args]
        if node.name in _UNARY_FNS:
            g = _UNARY_FNS[node.name][1]
            f0 = fns[0]
            return lambda x, y, z: g(f0(x, y, z))
        g = _BINARY_FNS[node.name][1]
        f0, f1 = fns
        return lambda x, y, z: g(f0(x, y, z), f1(x, y, z))
    raise TypeError(f"bad AST node {node!r}")


# -- printing -----------------------------------------------------------------

_LEVEL_EXPR, _LEVEL_TERM, _LEVEL_FACTOR, _LEVEL_UNARY, _LEVEL_ATOM = 1, 2, 3, 4, 5


def _fmt_num(v: float) -> str:
    return repr(v)


def _unparse(node):
    """Return (text, grammar level) for a node."""
    if isinstance(node, Num):
        if node.value < 0:
            return f"({_fmt_num(node.value)})", _LEVEL_ATOM
        return _fmt_num(node.value), _LEVEL_ATOM
    if isinstance(node, (Coord, Param)):
        return node.name if isinstance(node, Param) else node.name, _LEVEL_ATOM
    if isinstance(node, Neg):
        t, lv = _unparse(node.a)
        if lv < _LEVEL_UNARY:
            t = f"({t})"
        return f"-{t}", _LEVEL_UNARY
    if isinstance(node, Bin):
        own = _LEVEL_EXPR if node.op in "+-" else _LEVEL_TERM
        ta, la = _unparse(node.a)
        tb, lb = _unparse(node.b)
        if la < own:
            ta = f"({ta})"
        if lb < own + 1:
            tb = f"({tb})"
        return f"{ta} {node.op} {tb}", own
    if isinstance(node, Pow):
        tb, lb = _unparse(node.base)
        te, le = _unparse(node.exponent)
        if lb < _LEVEL_UNARY:
            tb = f"({tb})"
        if le < _LEVEL_FACTOR:
            te = f"({te})"
        return f"{tb}^{te}", _LEVEL_FACTOR
    if isinstance(node, Call):
        args = ", ".join(_unparse(a)[0] for a in node.args)
        return f"{node.name}({args})", _LEVEL_ATOM
    raise TypeError(f"bad AST node {node!r}")


# -- public types -------------------------------------------------------------


@dataclass
class Jet2:
    """Value, gradient and symmetric Hessian at a single point."""

    value: float
    grad: np.ndarray
    hess: np.ndarray


class ScalarGraph(Field):
    """Immutable differentiable scalar field parsed from an expression."""

    def __init__(self, ast, chart: ChartDomain, params: dict, source_text: str = ""):
        self.ast = ast
        self.chart = chart
        self.params = dict(params)
        self._source_text = source_text

    def jet(self, pts: np.ndarray, order: int) -> Jet:
        pts = self.chart.wrap(np.atleast_2d(np.asarray(pts, dtype=float)))
        return _eval_node(self.ast, pts, order, self.params)

    def compile(self):
        fn = _compile_node(self.ast, self.params)
        chart = self.chart
        wraps = [
            (i, chart.period[i]) for i in range(3) if chart.periodic[i]
        ]
        if not wraps:
            return fn

        def wrapped(x, y, z):
            p = [x, y, z]
            for i, per in wraps:
                p[i] = p[i] % per
            return fn(p[0], p[1], p[2])

        return wrapped

    def source(self) -> str:
        return _unparse(self.ast)[0]

    def with_params(self, **updates) -> "ScalarGraph":
        params = dict(self.params)
        for k, v in updates.items():
            if k not in params:
                raise UnknownIdentifier(k)
            params[k] = float(v)
        return ScalarGraph(self.ast, self.chart, params, self._source_text)

    def __repr__(self):
        return f"ScalarGraph({self.source()!r})"


def parse(src: str, chart: ChartDomain, params: dict | None = None) -> ScalarGraph:
    """Parse an expression over the chart coordinates into a ScalarGraph."""
    params = {k: float(v) for k, v in (params or {}).items()}
    clash = set(params) & (set(chart.names) | BUILTIN_NAMES)
    if clash:
        raise ValueError(f"parameter names clash with coordinates/builtins: {clash}")
    ast = _Parser(src, chart, params).parse()
    return ScalarGraph(ast, chart, params, src)


def constant(value: float, chart: ChartDomain) -> ScalarGraph:
    return ScalarGraph(Num(float(value)), chart, {}, repr(float(value)))


def eval_jet2(g: ScalarGraph, p) -> Jet2:
    """Value, gradient, Hessian at a point, exact to round-off."""
    j = g.jet(np.asarray(p, dtype=float).reshape(1, 3), 2)
    h = j.h[0]
    return Jet2(value=float(j.v[0]), grad=j.g[0].copy(), hess=0.5 * (h + h.T))


def fd_check(g: ScalarGraph, p, h: float = 1e-5) -> float:
    """Max relative deviation of the AD gradient/Hessian from central
    finite differences (gradient from values, Hessian from AD gradients)."""
    if h <= 0:
        raise ValueError("step must be positive")
    p = np.asarray(p, dtype=float)
    ad = eval_jet2(g, p)

    def val(q):
        return float(g.jet(q.reshape(1, 3), 0).v[0])

    def grad(q):
        return g.jet(q.reshape(1, 3), 1).g[0]

    worst = 0.0
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd_g = (val(p + e) - val(p - e)) / (2.0 * h)
        denom = max(1.0, abs(ad.grad[i]), abs(fd_g))
        worst = max(worst, abs(ad.grad[i] - fd_g) / denom)
        fd_h = (grad(p + e) - grad(p - e)) / (2.0 * h)
        for jdx in range(3):
            denom = max(1.0, abs(ad.hess[i, jdx]), abs(fd_h[jdx]))
            worst = max(worst, abs(ad.hess[i, jdx] - fd_h[jdx]) / denom)
    return worst
