"""Reaction networks with a continuous and a discrete scale.

A network has ``n`` continuous species (concentrations ``x``) and ``d``
discrete species (counts ``y``).  Each reaction is either continuous
(class ``C``: moves ``x`` by ``h/N`` at rate ``N * lambda``) or discrete
(class ``D``: moves ``x`` by ``h/N`` and ``y`` by ``e`` at rate ``mu``).

The text format is line oriented; see ``docs/network_format.md``::

    species continuous: P
    species discrete: G
    param k1 = 2.0
    domain G = 0..1
    reaction prod class=C h=[+1] e=[0] rate = k1*G
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .expr import (
    Const,
    Cutoff,
    ExprSyntaxError,
    RateExpr,
    Tape,
    compile_tape,
    make_prod,
    parse_expr,
)

DEFAULT_X_BOX = (0.0, 10.0)
DEFAULT_Y_BOX = (0, 10)
N_DOMAIN_SAMPLES = 1000


class NetworkError(ValueError):
    """Base class for malformed networks."""


class NetworkSyntaxError(NetworkError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {msg}")
        self.line = line
        self.col = col


class UndeclaredSymbolError(NetworkError):
    pass


class StoichiometryError(NetworkError):
    pass


class NegativeRateError(NetworkError):
    pass


class RateBoundError(NetworkError):
    pass


@dataclass(frozen=True)
class Reaction:
    id: str
    cls: str  # "C" or "D"
    h: tuple
    e: tuple
    rate: RateExpr

    @property
    def discrete(self) -> bool:
        return self.cls == "D"


class HybridState:
    """State (x, y) with x real and y integer, both componentwise >= 0."""

    __slots__ = ("x", "y")

    def __init__(self, x, y=()):
        x = np.array(x, dtype=float).reshape(-1)
        y_arr = np.asarray(y)
        if y_arr.size and not np.all(np.equal(np.mod(y_arr, 1), 0)):
            raise ValueError("discrete components must be integers")
        y = np.array(y_arr, dtype=np.int64).reshape(-1)
        if np.any(x < 0) or not np.all(np.isfinite(x)):
            raise ValueError(f"continuous components must be finite and >= 0, got {x}")
        if np.any(y < 0):
            raise ValueError(f"discrete components must be >= 0, got {y}")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __setattr__(self, name, value):
        raise AttributeError("HybridState is immutable")

    def __reduce__(self):
        return (HybridState, (self.x.copy(), self.y.copy()))

    def __repr__(self):
        return f"HybridState(x={self.x.tolist()}, y={self.y.tolist()})"

    def __eq__(self, other):
        return (
            isinstance(other, HybridState)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )

    def norm(self) -> float:
        return float(np.linalg.norm(self.x) + np.linalg.norm(self.y))


@dataclass(frozen=True)
class ReactionNetwork:
    continuous: tuple
    discrete: tuple
    params: Mapping[str, float]
    reactions: tuple
    rate_bound: Optional[float] = None
    domain: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "continuous", tuple(self.continuous))
        object.__setattr__(self, "discrete", tuple(self.discrete))
        object.__setattr__(self, "reactions", tuple(self.reactions))
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "domain", dict(self.domain))
        self._check_structure()

    # -- structure -------------------------------------------------------

    def _check_structure(self):
        names = list(self.continuous) + list(self.discrete) + list(self.params)
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise NetworkError(f"duplicate names: {sorted(dup)}")
        ids = [r.id for r in self.reactions]
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise NetworkError(f"duplicate reaction ids: {sorted(dup)}")
        declared = set(names)
        n, d = self.n, self.d
        for r in self.reactions:
            missing = r.rate.symbols() - declared
            if missing:
                raise UndeclaredSymbolError(
                    f"reaction {r.id!r} uses undeclared symbol(s) {sorted(missing)}"
                )
            if r.cls not in ("C", "D"):
                raise StoichiometryError(f"reaction {r.id!r}: class must be C or D")
            if len(r.h) != n or len(r.e) != d:
                raise StoichiometryError(
                    f"reaction {r.id!r}: h has length {len(r.h)} (expected {n}), "
                    f"e has length {len(r.e)} (expected {d})"
                )
            if r.cls == "C" and any(r.e):
                raise StoichiometryError(f"reaction {r.id!r}: continuous reactions need e = 0")
            if not any(r.h) and not any(r.e):
                raise StoichiometryError(f"reaction {r.id!r}: h and e are both zero")
        for name, (lo, hi) in self.domain.items():
            if name not in self.continuous and name not in self.discrete:
                raise UndeclaredSymbolError(f"domain given for unknown species {name!r}")
            if not lo <= hi or lo < 0:
                raise NetworkError(f"bad domain for {name!r}: {lo}..{hi}")
        if self.rate_bound is not None and not self.rate_bound > 0:
            raise NetworkError("rate bound must be positive")

    @property
    def n(self) -> int:
        return len(self.continuous)

    @property
    def d(self) -> int:
        return len(self.discrete)

    @property
    def reaction_ids(self) -> tuple:
        return tuple(r.id for r in self.reactions)

    def index(self, rid: str) -> int:
        for i, r in enumerate(self.reactions):
            if r.id == rid:
                return i
        raise KeyError(f"unknown reaction {rid!r}")

    def reaction(self, rid: str) -> Reaction:
        return self.reactions[self.index(rid)]

    @cached_property
    def continuous_idx(self) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.reactions) if not r.discrete], dtype=np.int64)

    @cached_property
    def discrete_idx(self) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.reactions) if r.discrete], dtype=np.int64)

    @cached_property
    def H(self) -> np.ndarray:
        """Continuous stoichiometry, shape (R, n)."""
        return np.array([r.h for r in self.reactions], dtype=np.int64).reshape(len(self.reactions), self.n)

    @cached_property
    def E(self) -> np.ndarray:
        """Discrete stoichiometry, shape (R, d)."""
        return np.array([r.e for r in self.reactions], dtype=np.int64).reshape(len(self.reactions), self.d)

    @cached_property
    def is_discrete(self) -> np.ndarray:
        return np.array([r.discrete for r in self.reactions], dtype=bool)

    @cached_property
    def tape(self) -> Tape:
        return compile_tape([r.rate for r in self.reactions], self.continuous, self.discrete, self.params)

    @cached_property
    def gradient_exprs(self) -> tuple:
        """d lambda_r / d x_j for continuous reactions, flattened row-major (c, j)."""
        return tuple(
            self.reactions[r].rate.diff(xn) for r in self.continuous_idx for xn in self.continuous
        )

    @cached_property
    def grad_tape(self) -> Tape:
        return compile_tape(self.gradient_exprs, self.continuous, self.discrete, self.params)

    @cached_property
    def tiebreak(self) -> np.ndarray:
        """Rank of each reaction id in lexicographic order."""
        order = sorted(range(len(self.reactions)), key=lambda i: self.reactions[i].id)
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order))
        return rank

    # -- evaluation ------------------------------------------------------

    def _values(self, s: HybridState) -> dict:
        self._check_state(s)
        vals = dict(self.params)
        vals.update(zip(self.continuous, s.x.tolist()))
        vals.update(zip(self.discrete, s.y.tolist()))
        return vals

    def _check_state(self, s: HybridState):
        if len(s.x) != self.n or len(s.y) != self.d:
            raise ValueError(
                f"state has dimensions ({len(s.x)}, {len(s.y)}), network expects ({self.n}, {self.d})"
            )

    def values_batch(self, x: np.ndarray, y: np.ndarray) -> dict:
        """Symbol table for vectorised evaluation; x is (m, n), y is (m, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y))
        vals = dict(self.params)
        for i, name in enumerate(self.continuous):
            vals[name] = x[:, i]
        for i, name in enumerate(self.discrete):
            vals[name] = y[:, i].astype(float)
        return vals

    def rates_batch(self, x, y) -> np.ndarray:
        """All reaction rates at m states, shape (m, R); x is clamped at 0."""
        x = np.maximum(np.atleast_2d(np.asarray(x, dtype=float)), 0.0)
        m = x.shape[0]
        vals = self.values_batch(x, y)
        out = np.empty((m, len(self.reactions)))
        for i, r in enumerate(self.reactions):
            out[:, i] = np.broadcast_to(r.rate.evaluate(vals), (m,))
        return out

    def drift_batch(self, x, y) -> np.ndarray:
        rates = self.rates_batch(x, y)
        ci = self.continuous_idx
        return rates[:, ci] @ self.H[ci].astype(float)


# ---------------------------------------------------------------------------
# operations

def eval_rate(net: ReactionNetwork, rid: str, s: HybridState) -> float:
    """Value of the rate of reaction ``rid`` at ``s``."""
    r = net.reaction(rid)
    return float(r.rate.evaluate(net._values(s)))


def drift(net: ReactionNetwork, s: HybridState) -> np.ndarray:
    """F(x, y) = sum over continuous reactions of h_r * lambda_r(x, y)."""
    vals = net._values(s)
    out = np.zeros(net.n)
    for r in net.reactions:
        if not r.discrete:
            out += np.asarray(r.h, dtype=float) * float(r.rate.evaluate(vals))
    return out


def rate_gradient(net: ReactionNetwork, rid: str) -> tuple:
    """Symbolic partial derivatives of the rate of ``rid`` in each continuous species."""
    r = net.reaction(rid)
    return tuple(r.rate.diff(xn) for xn in net.continuous)


def drift_jacobian(net: ReactionNetwork, s: HybridState) -> np.ndarray:
    vals = net._values(s)
    jac = np.zeros((net.n, net.n))
    for r in net.reactions:
        if r.discrete:
            continue
        h = np.asarray(r.h, dtype=float)
        grad = np.array([float(r.rate.diff(xn).evaluate(vals)) for xn in net.continuous])
        jac += np.outer(h, grad)
    return jac


def diffusion_matrix(net: ReactionNetwork, s: HybridState) -> np.ndarray:
    """sigma with sigma[i, c] = h_c^i sqrt(lambda_c(s)), columns in continuous-reaction order."""
    vals = net._values(s)
    cols = []
    for r in net.reactions:
        if r.discrete:
            continue
        lam = float(r.rate.evaluate(vals))
        if lam < 0:
            raise NegativeRateError(f"rate of {r.id!r} is negative ({lam}) at {s}")
        cols.append(np.asarray(r.h, dtype=float) * np.sqrt(lam))
    if not cols:
        return np.zeros((net.n, 0))
    return np.column_stack(cols)


def truncate_rates(net: ReactionNetwork, k: float, samples: int = 4000, seed: int = 0) -> ReactionNetwork:
    """Multiply every rate by theta(|z|/k); the result declares a sampled rate bound.

    The bound is the largest rate found by sampling states with |z| <= 2k
    (beyond that every truncated rate vanishes).
    """
    if not k > 0:
        raise ValueError("truncation level must be positive")
    cut = Cutoff(float(k), net.continuous, net.discrete)
    reactions = tuple(replace(r, rate=make_prod([cut, r.rate])) for r in net.reactions)
    out = ReactionNetwork(net.continuous, net.discrete, net.params, reactions, None, net.domain)
    bound = _sample_max_rate(out, 2.0 * k, samples, seed)
    return replace(out, rate_bound=max(bound, 1e-300))


def _sample_max_rate(net: ReactionNetwork, radius: float, samples: int, seed: int) -> float:
    """Largest rate over the states with |z| <= radius inside the declared domain.

    Random sampling locates the peaks; the best few are then polished by a
    bounded quasi-Newton search in x with y held fixed.
    """
    if not net.reactions:
        return 0.0
    rng = np.random.default_rng(seed)
    n, d = net.n, net.d
    # split the radius budget between |x| and |y| so the sampled set covers |z| <= radius
    share = rng.random(samples)
    xdir = np.abs(rng.standard_normal((samples, n))) if n else np.zeros((samples, 0))
    if n:
        xdir /= np.linalg.norm(xdir, axis=1, keepdims=True)
    x = xdir * (share * radius)[:, None] * rng.random(samples)[:, None] ** (1.0 / max(n, 1))
    ylo = np.array([int(net.domain.get(nm, (0, radius))[0]) for nm in net.discrete], dtype=np.int64)
    yhi = np.array([int(min(radius, net.domain.get(nm, (0, radius))[1])) for nm in net.discrete], dtype=np.int64)
    y = rng.integers(ylo, yhi + 1, size=(samples, d)) if d else np.zeros((samples, 0), dtype=np.int64)
    xlo = np.array([net.domain.get(nm, (0.0, radius))[0] for nm in net.continuous])
    xhi = np.array([min(radius, net.domain.get(nm, (0.0, radius))[1]) for nm in net.continuous])
    x = np.clip(x, xlo, xhi) if n else x
    keep = (np.linalg.norm(x, axis=1) + np.linalg.norm(y, axis=1)) <= radius
    x, y = x[keep], y[keep]
    rates = net.rates_batch(x, y)
    if not rates.size:
        return 0.0
    best = float(rates.max())
    if n:
        peak = rates.max(axis=1)
        for a in np.argsort(peak)[::-1][:8]:
            r = int(np.argmax(rates[a]))
            ya = y[a : a + 1]

            def neg(xv, r=r, ya=ya):
                return -float(net.rates_batch(xv[None, :], ya)[0, r])

            res = minimize(neg, x[a], method="L-BFGS-B", bounds=list(zip(xlo, xhi)))
            best = max(best, -float(res.fun))
    return best


def sample_box(net: ReactionNetwork, samples: int = N_DOMAIN_SAMPLES, seed: int = 0, box=None):
    """Random states over the declared domain box (default x in [0,10], y in {0..10})."""
    box = dict(box or {})
    rng = np.random.default_rng(seed)
    x = np.empty((samples, net.n))
    y = np.empty((samples, net.d), dtype=np.int64)
    for i, name in enumerate(net.continuous):
        lo, hi = box.get(name, net.domain.get(name, DEFAULT_X_BOX))
        x[:, i] = rng.uniform(lo, hi, samples)
    for i, name in enumerate(net.discrete):
        lo, hi = box.get(name, net.domain.get(name, DEFAULT_Y_BOX))
        y[:, i] = rng.integers(int(lo), int(hi) + 1, samples)
    return x, y


def check_rates(net: ReactionNetwork, samples: int = N_DOMAIN_SAMPLES, seed: int = 0, box=None):
    """Randomised domain check: rates finite, nonnegative, and below the declared bound."""
    if not net.reactions:
        return
    x, y = sample_box(net, samples, seed, box)
    vals = net.values_batch(x, y)
    for r in net.reactions:
        v = np.broadcast_to(np.asarray(r.rate.evaluate(vals), dtype=float), (samples,))
        if not np.all(np.isfinite(v)):
            raise NegativeRateError(f"rate of {r.id!r} is not finite on the sampled domain")
        bad = np.flatnonzero(v < 0)
        if bad.size:
            i = bad[0]
            raise NegativeRateError(
                f"rate of {r.id!r} is negative ({v[i]:.6g}) at x={x[i].tolist()}, y={y[i].tolist()}"
            )
        if net.rate_bound is not None and v.max() > net.rate_bound * (1 + 1e-12):
            i = int(np.argmax(v))
            raise RateBoundError(
                f"rate of {r.id!r} reaches {v[i]:.6g} > declared bound {net.rate_bound}"
            )


# ---------------------------------------------------------------------------
# text format

_VEC = re.compile(r"^\[\s*([^\]]*)\]$")


def _parse_vec(text: str, line: int, col: int) -> tuple:
    m = _VEC.match(text.strip())
    if not m:
        raise NetworkSyntaxError(f"expected an integer vector like [+1, 0], got {text!r}", line, col)
    body = m.group(1).strip()
    if not body:
        return ()
    out = []
    for part in body.split(","):
        part = part.strip()
        try:
            out.append(int(part))
        except ValueError:
            raise NetworkSyntaxError(f"bad integer {part!r} in vector", line, col) from None
    return tuple(out)


def _fmt_vec(v) -> str:
    return "[" + ", ".join(f"{c:+d}" if c else "0" for c in v) + "]"


_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def parse_network(text: str, validate: bool = True, box=None) -> ReactionNetwork:
    """Parse a network description and run all structural and domain checks."""
    continuous, discrete, params, domain = [], [], {}, {}
    reactions = []
    bound = None
    seen_reaction = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.lstrip()
        base = len(line) - len(stripped) + 1
        head = stripped.split(None, 1)[0]

        if head == "species":
            m = re.match(r"species\s+(continuous|discrete)\s*:\s*(.*)$", stripped)
            if not m:
                raise NetworkSyntaxError("expected 'species continuous: A, B' or 'species discrete: ...'", lineno, base)
            if seen_reaction:
                raise NetworkSyntaxError("species must be declared before reactions", lineno, base)
            names = [s.strip() for s in m.group(2).split(",") if s.strip()]
            for nm in names:
                if not _NAME.match(nm):
                    raise NetworkSyntaxError(f"bad species name {nm!r}", lineno, base + stripped.find(nm))
            (continuous if m.group(1) == "continuous" else discrete).extend(names)
        elif head == "param":
            m = re.match(r"param\s+([A-Za-z_]\w*)\s*=\s*(\S+)\s*$", stripped)
            if not m:
                raise NetworkSyntaxError("expected 'param name = value'", lineno, base)
            try:
                params[m.group(1)] = float(m.group(2))
            except ValueError:
                raise NetworkSyntaxError(f"bad number {m.group(2)!r}", lineno, base + m.start(2)) from None
        elif head == "domain":
            m = re.match(r"domain\s+([A-Za-z_]\w*)\s*=\s*(\S+)\s*\.\.\s*(\S+)\s*$", stripped)
            if not m:
                raise NetworkSyntaxError("expected 'domain name = lo..hi'", lineno, base)
            try:
                domain[m.group(1)] = (float(m.group(2)), float(m.group(3)))
            except ValueError:
                raise NetworkSyntaxError("bad domain bounds", lineno, base + m.start(2)) from None
        elif head == "bound":
            m = re.match(r"bound\s+(\S+)\s*$", stripped)
            try:
                bound = float(m.group(1)) if m else None
            except ValueError:
                bound = None
            if bound is None:
                raise NetworkSyntaxError("expected 'bound <positive number>'", lineno, base)
        elif head == "reaction":
            seen_reaction = True
            reactions.append(_parse_reaction(stripped, lineno, base, continuous, discrete))
        else:
            raise NetworkSyntaxError(f"unknown directive {head!r}", lineno, base)

    net = ReactionNetwork(tuple(continuous), tuple(discrete), params, tuple(reactions), bound, domain)
    if validate:
        check_rates(net, box=box)
    return net


def _parse_reaction(stripped: str, lineno: int, base: int, continuous, discrete) -> Reaction:
    m = re.match(r"reaction\s+([A-Za-z_]\w*)\s+(.*?)\brate\s*=\s*(.*)$", stripped)
    if not m:
        raise NetworkSyntaxError("expected 'reaction <id> class=C|D h=[..] e=[..] rate = <expr>'", lineno, base)
    rid = m.group(1)
    attrs_text = m.group(2)
    attrs = {}
    for am in re.finditer(r"(\w+)\s*=\s*(\[[^\]]*\]|\S+)", attrs_text):
        attrs[am.group(1)] = (am.group(2), base + m.start(2) + am.start(2))
    leftovers = re.sub(r"(\w+)\s*=\s*(\[[^\]]*\]|\S+)", "", attrs_text).strip()
    if leftovers:
        raise NetworkSyntaxError(f"unexpected text {leftovers!r}", lineno, base + m.start(2))
    unknown = set(attrs) - {"class", "h", "e"}
    if unknown:
        raise NetworkSyntaxError(f"unknown reaction attribute(s) {sorted(unknown)}", lineno, base + m.start(2))
    if "class" not in attrs:
        raise NetworkSyntaxError(f"reaction {rid!r} needs class=C or class=D", lineno, base)
    cls, ccol = attrs["class"]
    if cls not in ("C", "D"):
        raise NetworkSyntaxError(f"class must be C or D, got {cls!r}", lineno, ccol)
    h = _parse_vec(attrs["h"][0], lineno, attrs["h"][1]) if "h" in attrs else (0,) * len(continuous)
    e = _parse_vec(attrs["e"][0], lineno, attrs["e"][1]) if "e" in attrs else (0,) * len(discrete)
    rate_col = base + m.start(3)
    try:
        rate = parse_expr(m.group(3), continuous, discrete)
    except ExprSyntaxError as exc:
        raise NetworkSyntaxError(exc.msg, lineno, rate_col + exc.col) from None
    if cls == "C" and any(e):
        raise StoichiometryError(f"line {lineno}: continuous reaction {rid!r} must have e = 0")
    return Reaction(rid, cls, h, e, rate)


def serialize_network(net: ReactionNetwork) -> str:
    lines = []
    if net.continuous:
        lines.append("species continuous: " + ", ".join(net.continuous))
    if net.discrete:
        lines.append("species discrete: " + ", ".join(net.discrete))
    for name, v in net.params.items():
        lines.append(f"param {name} = {v!r}")
    for name, (lo, hi) in net.domain.items():
        lines.append(f"domain {name} = {lo!r}..{hi!r}")
    if net.rate_bound is not None:
        lines.append(f"bound {net.rate_bound!r}")
    for r in net.reactions:
        lines.append(
            f"reaction {r.id} class={r.cls} h={_fmt_vec(r.h)} e={_fmt_vec(r.e)} rate = {r.rate}"
        )
    return "\n".join(lines) + "\n"


def load_network(path) -> ReactionNetwork:
    with open(path) as fh:
        return parse_network(fh.read())


def summary(net: ReactionNetwork) -> dict:
    return {
        "n": net.n,
        "d": net.d,
        "R_C": int(len(net.continuous_idx)),
        "R_D": int(len(net.discrete_idx)),
        "rate_bound": net.rate_bound,
    }
