"""Polynomial rate expressions with a smooth cutoff node.

Rates are trees built from constants, symbol references, sums, products,
nonnegative integer powers and a cutoff node ``cutoff(k)`` that evaluates
``theta((|x| + |y|) / k)``.  ``theta`` is the quintic smoothstep

    theta(r) = 1                                 r <= 1
    theta(r) = 1 - s^3 (10 - 15 s + 6 s^2)       s = r - 1, 1 < r < 2
    theta(r) = 0                                 r >= 2

which is C^2, so rates and their first two x-derivatives stay continuous.

Trees evaluate on scalars or numpy arrays alike.  ``compile_tape`` lowers a
list of trees to a postfix program consumed by the numba kernels in
``msgn._kernels``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


# ---------------------------------------------------------------------------
# smoothstep cutoff

def theta(r):
    s = np.clip(np.asarray(r, dtype=float) - 1.0, 0.0, 1.0)
    out = 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)
    return out if np.ndim(out) else float(out)


def theta_d1(r):
    s = np.clip(np.asarray(r, dtype=float) - 1.0, 0.0, 1.0)
    out = -30.0 * s**2 * (1.0 - s) ** 2
    return out if np.ndim(out) else float(out)


def theta_d2(r):
    s = np.clip(np.asarray(r, dtype=float) - 1.0, 0.0, 1.0)
    out = -60.0 * s * (s - 1.0) * (2.0 * s - 1.0)
    return out if np.ndim(out) else float(out)


def _norm(values: Mapping, names: Sequence[str]):
    if not names:
        return 0.0
    acc = 0.0
    for n in names:
        acc = acc + np.asarray(values[n], dtype=float) ** 2
    return np.sqrt(acc)


# ---------------------------------------------------------------------------
# expression nodes

class RateExpr:
    """Base class for rate expression nodes."""

    def evaluate(self, values: Mapping):
        raise NotImplementedError

    def diff(self, name: str) -> "RateExpr":
        raise NotImplementedError

    def symbols(self) -> frozenset:
        raise NotImplementedError

    # precedence used by the printer: 0 sum, 1 product, 2 power, 3 atom
    _prec = 3

    def _wrap(self, prec: int) -> str:
        s = str(self)
        return f"({s})" if self._prec < prec else s

    def __add__(self, other):
        return make_sum([self, _lift(other)])

    def __mul__(self, other):
        return make_prod([self, _lift(other)])


def _lift(v) -> RateExpr:
    return v if isinstance(v, RateExpr) else Const(float(v))


def _fmt_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


@dataclass(frozen=True)
class Const(RateExpr):
    value: float

    def evaluate(self, values):
        return self.value

    def diff(self, name):
        return ZERO

    def symbols(self):
        return frozenset()

    def __str__(self):
        s = _fmt_number(self.value)
        return s

    @property
    def _prec(self):
        return 3 if self.value >= 0 else 0


@dataclass(frozen=True)
class Sym(RateExpr):
    name: str

    def evaluate(self, values):
        return values[self.name]

    def diff(self, name):
        return ONE if name == self.name else ZERO

    def symbols(self):
        return frozenset([self.name])

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Sum(RateExpr):
    terms: tuple
    _prec = 0

    def evaluate(self, values):
        acc = self.terms[0].evaluate(values)
        for t in self.terms[1:]:
            acc = acc + t.evaluate(values)
        return acc

    def diff(self, name):
        return make_sum([t.diff(name) for t in self.terms])

    def symbols(self):
        return frozenset().union(*(t.symbols() for t in self.terms))

    def __str__(self):
        parts = [str(self.terms[0])]
        for t in self.terms[1:]:
            neg = _negated(t)
            if neg is not None:
                parts.append(" - " + neg._wrap(1))
            else:
                parts.append(" + " + t._wrap(1))
        return "".join(parts)


def _negated(t: RateExpr):
    """Return u when t == -1 * u (for printing ``a - u``), else None."""
    if isinstance(t, Const) and t.value < 0:
        return Const(-t.value)
    if isinstance(t, Prod) and isinstance(t.factors[0], Const) and t.factors[0].value < 0:
        c = -t.factors[0].value
        rest = list(t.factors[1:])
        return make_prod(rest if c == 1.0 else [Const(c)] + rest)
    return None


@dataclass(frozen=True)
class Prod(RateExpr):
    factors: tuple
    _prec = 1

    def evaluate(self, values):
        acc = self.factors[0].evaluate(values)
        for f in self.factors[1:]:
            acc = acc * f.evaluate(values)
        return acc

    def diff(self, name):
        terms = []
        for i, f in enumerate(self.factors):
            df = f.diff(name)
            if is_zero(df):
                continue
            terms.append(make_prod(list(self.factors[:i]) + [df] + list(self.factors[i + 1:])))
        return make_sum(terms)

    def symbols(self):
        return frozenset().union(*(f.symbols() for f in self.factors))

    def __str__(self):
        f0 = self.factors[0]
        if isinstance(f0, Const) and f0.value == -1.0 and len(self.factors) > 1:
            return "-" + make_prod(list(self.factors[1:]))._wrap(2)
        return "*".join(f._wrap(2) for f in self.factors)


@dataclass(frozen=True)
class Pow(RateExpr):
    base: RateExpr
    exponent: int
    _prec = 2

    def __post_init__(self):
        if int(self.exponent) != self.exponent or self.exponent < 0:
            raise ValueError(f"power exponent must be a nonnegative integer, got {self.exponent}")

    def evaluate(self, values):
        return self.base.evaluate(values) ** self.exponent

    def diff(self, name):
        db = self.base.diff(name)
        if is_zero(db):
            return ZERO
        return make_prod([Const(float(self.exponent)), make_pow(self.base, self.exponent - 1), db])

    def symbols(self):
        return self.base.symbols()

    def __str__(self):
        return f"{self.base._wrap(3)}^{self.exponent}"


@dataclass(frozen=True)
class Cutoff(RateExpr):
    """theta((|x| + |y|)/k), or one of its partial derivatives in x.

    ``wrt`` lists the continuous species differentiated so far (at most two,
    theta being only C^2).
    """

    k: float
    xnames: tuple
    ynames: tuple
    wrt: tuple = ()

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("cutoff scale must be positive")
        if len(self.wrt) > 2:
            raise ValueError("cutoff is only twice differentiable")

    def evaluate(self, values):
        xn = _norm(values, self.xnames)
        yn = _norm(values, self.ynames)
        r = (xn + yn) / self.k
        if not self.wrt:
            return theta(r)
        safe = np.where(xn > 0, xn, 1.0)
        xi = np.asarray(values[self.wrt[0]], dtype=float)
        dri = np.where(xn > 0, xi / (self.k * safe), 0.0)
        if len(self.wrt) == 1:
            out = theta_d1(r) * dri
        else:
            xj = np.asarray(values[self.wrt[1]], dtype=float)
            drj = np.where(xn > 0, xj / (self.k * safe), 0.0)
            delta = 1.0 if self.wrt[0] == self.wrt[1] else 0.0
            drij = np.where(xn > 0, (delta - xi * xj / safe**2) / (self.k * safe), 0.0)
            out = theta_d2(r) * dri * drj + theta_d1(r) * drij
        return out if np.ndim(out) else float(out)

    def diff(self, name):
        if name not in self.xnames:
            return ZERO
        if len(self.wrt) == 2:
            raise ValueError("third derivative of the cutoff is not continuous")
        return Cutoff(self.k, self.xnames, self.ynames, self.wrt + (name,))

    def symbols(self):
        return frozenset(self.xnames) | frozenset(self.ynames)

    def __str__(self):
        if not self.wrt:
            return f"cutoff({_fmt_number(self.k)})"
        return f"cutoff_d({_fmt_number(self.k)}, {', '.join(self.wrt)})"


ZERO = Const(0.0)
ONE = Const(1.0)


def is_zero(e: RateExpr) -> bool:
    return isinstance(e, Const) and e.value == 0.0


def make_sum(terms) -> RateExpr:
    flat, c = [], 0.0
    for t in terms:
        if isinstance(t, Sum):
            for u in t.terms:
                if isinstance(u, Const):
                    c += u.value
                else:
                    flat.append(u)
        elif isinstance(t, Const):
            c += t.value
        else:
            flat.append(t)
    if c != 0.0:
        flat.append(Const(c))
    if not flat:
        return ZERO
    if len(flat) == 1:
        return flat[0]
    return Sum(tuple(flat))


def make_prod(factors) -> RateExpr:
    flat, c = [], 1.0
    for f in factors:
        items = f.factors if isinstance(f, Prod) else (f,)
        for u in items:
            if isinstance(u, Const):
                c *= u.value
            else:
                flat.append(u)
    if c == 0.0:
        return ZERO
    if not flat:
        return Const(c)
    if c != 1.0:
        flat.insert(0, Const(c))
    if len(flat) == 1:
        return flat[0]
    return Prod(tuple(flat))


def make_pow(base: RateExpr, p: int) -> RateExpr:
    if p == 0:
        return ONE
    if p == 1:
        return base
    if isinstance(base, Const):
        return Const(base.value**p)
    return Pow(base, p)


# ---------------------------------------------------------------------------
# expression parser

class ExprSyntaxError(ValueError):
    def __init__(self, msg: str, col: int):
        super().__init__(msg)
        self.msg = msg
        self.col = col


def _tokenize(text: str):
    toks, i = [], 0
    while i < len(text):
        c = text[i]
        if c.isspace():
            i += 1
        elif c.isdigit() or (c == "." and i + 1 < len(text) and text[i + 1].isdigit()):
            j = i
            while j < len(text) and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < len(text) and text[j] in "eE":
                k = j + 1
                if k < len(text) and text[k] in "+-":
                    k += 1
                if k < len(text) and text[k].isdigit():
                    j = k
                    while j < len(text) and text[j].isdigit():
                        j += 1
            toks.append(("num", text[i:j], i))
            i = j
        elif c.isalpha() or c == "_":
            j = i
            while j < len(text) and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(("name", text[i:j], i))
            i = j
        elif text.startswith("**", i):
            toks.append(("op", "^", i))
            i += 2
        elif c in "+-*/^(),;":
            toks.append(("op", c, i))
            i += 1
        else:
            raise ExprSyntaxError(f"unexpected character {c!r}", i)
    toks.append(("end", "", len(text)))
    return toks


class _ExprParser:
    def __init__(self, text, xnames, ynames):
        self.toks = _tokenize(text)
        self.pos = 0
        self.xnames = tuple(xnames)
        self.ynames = tuple(ynames)

    def peek(self):
        return self.toks[self.pos]

    def take(self):
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def expect(self, value):
        tok = self.take()
        if tok[1] != value:
            raise ExprSyntaxError(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok[2])
        return tok

    def parse(self):
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExprSyntaxError(f"unexpected {tok[1]!r}", tok[2])
        return e

    def expr(self):
        terms = [self.term()]
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            t = self.term()
            terms.append(t if op == "+" else make_prod([Const(-1.0), t]))
        return make_sum(terms)

    def term(self):
        factors = [self.unary()]
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            if op == "*":
                factors.append(self.unary())
            else:
                tok = self.peek()
                if tok[0] != "num":
                    raise ExprSyntaxError("division is only allowed by a numeric literal", tok[2])
                self.take()
                v = float(tok[1])
                if v == 0:
                    raise ExprSyntaxError("division by zero", tok[2])
                factors.append(Const(1.0 / v))
        return make_prod(factors)

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return make_prod([Const(-1.0), self.unary()])
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            tok = self.take()
            if tok[0] != "num" or not tok[1].isdigit():
                raise ExprSyntaxError("exponent must be a nonnegative integer literal", tok[2])
            return make_pow(base, int(tok[1]))
        return base

    def atom(self):
        tok = self.take()
        kind, val, col = tok
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if val in ("cutoff", "cutoff_d") and self.peek()[1] == "(":
                return self.cutoff(val)
            return Sym(val)
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ExprSyntaxError(f"unexpected {val or 'end of input'!r}", col)

    def cutoff(self, fname):
        self.expect("(")
        tok = self.take()
        if tok[0] != "num":
            raise ExprSyntaxError("cutoff scale must be a numeric literal", tok[2])
        k = float(tok[1])
        if not k > 0:
            raise ExprSyntaxError("cutoff scale must be positive", tok[2])
        wrt = []
        while fname == "cutoff_d" and self.peek()[1] == ",":
            self.take()
            nt = self.take()
            if nt[0] != "name" or nt[1] not in self.xnames:
                raise ExprSyntaxError("cutoff_d differentiates by continuous species only", nt[2])
            wrt.append(nt[1])
        self.expect(")")
        return Cutoff(k, self.xnames, self.ynames, tuple(wrt))


def parse_expr(text: str, xnames=(), ynames=()) -> RateExpr:
    """Parse a rate expression; species names are needed to resolve ``cutoff``."""
    return _ExprParser(text, xnames, ynames).parse()


# ---------------------------------------------------------------------------
# postfix tape for the numba kernels

OP_CONST, OP_X, OP_Y, OP_ADD, OP_MUL, OP_POW, OP_CUT = range(7)


@dataclass(frozen=True)
class Tape:
    ops: np.ndarray     # int64[L]
    iargs: np.ndarray   # int64[L, 3]
    fargs: np.ndarray   # float64[L]
    starts: np.ndarray  # int64[P + 1], program p is ops[starts[p]:starts[p+1]]
    depth: int

    @property
    def n_programs(self) -> int:
        return len(self.starts) - 1


def compile_tape(exprs: Sequence[RateExpr], xnames, ynames, params: Mapping[str, float]) -> Tape:
    xi = {n: i for i, n in enumerate(xnames)}
    yi = {n: i for i, n in enumerate(ynames)}
    ops, iargs, fargs, starts = [], [], [], [0]
    depth = 1

    def emit(op, f=0.0, a=-1, b=-1, c=-1):
        ops.append(op)
        fargs.append(f)
        iargs.append((a, b, c))

    def walk(e) -> int:
        # returns the stack depth needed for e
        if isinstance(e, Const):
            emit(OP_CONST, e.value)
            return 1
        if isinstance(e, Sym):
            if e.name in xi:
                emit(OP_X, a=xi[e.name])
            elif e.name in yi:
                emit(OP_Y, a=yi[e.name])
            else:
                emit(OP_CONST, float(params[e.name]))
            return 1
        if isinstance(e, (Sum, Prod)):
            items = e.terms if isinstance(e, Sum) else e.factors
            op = OP_ADD if isinstance(e, Sum) else OP_MUL
            need = walk(items[0])
            for k, item in enumerate(items[1:]):
                need = max(need, 1 + walk(item))
                emit(op)
            return need
        if isinstance(e, Pow):
            need = walk(e.base)
            emit(OP_POW, a=e.exponent)
            return need
        if isinstance(e, Cutoff):
            w = [xi[n] for n in e.wrt] + [-1] * (2 - len(e.wrt))
            emit(OP_CUT, e.k, a=len(e.wrt), b=w[0], c=w[1])
            return 1
        raise TypeError(f"unknown node {e!r}")

    for e in exprs:
        depth = max(depth, walk(e))
        starts.append(len(ops))
    return Tape(
        ops=np.asarray(ops, dtype=np.int64),
        iargs=np.asarray(iargs, dtype=np.int64).reshape(-1, 3),
        fargs=np.asarray(fargs, dtype=np.float64),
        starts=np.asarray(starts, dtype=np.int64),
        depth=depth + 1,
    )
