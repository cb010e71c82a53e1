"""Fluctuations V^N = sqrt(N) (X^N - X) of a coupled pair and their limiting SDE.

The decomposition

    V^N_t = V^N_0 + U^N_t + sqrt(N) gamma^N_t + int_0^t grad_x F(X, Y^N) V^N ds + zeta^N_t + xi^N_t

is assembled term by term.  U^N and gamma^N are exact: they only need the
accepted point counts and the compensators, which the jump simulator
integrates exactly.  The three integral terms are computed by Simpson's
rule on the union of grid times and the event times of both paths.  On each
of those intervals Z^N and Y are constant and X is a smooth flow, evaluated
by cubic Hermite interpolation.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .jump_sim import simulate_scaled
from .network import HybridState, ReactionNetwork
from .paths import PathRecord, SimulationError, uniform_grid
from .pdmp_sim import DEFAULT_RTOL, simulate_pdmp

SDE_RESOLUTION = 2**12
DIVERGENCE_LIMIT = 1e12


class SdeDivergence(SimulationError):
    """Euler-Maruyama iterate left the ball of radius 1e12."""


# ---------------------------------------------------------------------------
# batched drift and Jacobian


def _drift_rows(net: ReactionNetwork, x, y) -> np.ndarray:
    tp = net.tape
    rates = K.eval_batch(tp.ops, tp.iargs, tp.fargs, tp.starts, tp.depth,
                         np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(y, dtype=np.int64))
    ci = net.continuous_idx
    return rates[:, ci] @ net.H[ci].astype(float)


def _jacobian_rows(net: ReactionNetwork, x, y) -> np.ndarray:
    """grad_x F at m states, shape (m, n, n)."""
    n = net.n
    ci = net.continuous_idx
    m = len(x)
    if len(ci) == 0:
        return np.zeros((m, n, n))
    gt = net.grad_tape
    g = K.eval_batch(gt.ops, gt.iargs, gt.fargs, gt.starts, gt.depth,
                     np.ascontiguousarray(x, dtype=float), np.ascontiguousarray(y, dtype=np.int64))
    g = g.reshape(m, len(ci), n)
    return np.einsum("ci,mcj->mij", net.H[ci].astype(float), g)


# ---------------------------------------------------------------------------
# decomposition


@dataclass
class FluctuationDecomposition:
    t: np.ndarray                 # (G,)
    N: float
    V: np.ndarray                 # (G, n)
    U: np.ndarray                 # (G, n)  sqrt(N) M^N
    sqrtN_gamma: np.ndarray       # (G, n)
    zeta: np.ndarray              # (G, n)
    xi: np.ndarray                # (G, n)
    drift_integral: np.ndarray    # (G, n)
    qv: np.ndarray                # (G, n, n)
    quad_error: np.ndarray        # (G, n) accumulated |Simpson - trapezoid|
    flow_tol: float               # allowance for the flow integrator error, already scaled by sqrt(N)
    sup_M: float                  # sup_t |M^N_t| over all event times
    sup_gamma: float
    sup_err: float                # sup_t |Z^N - Z|, |z| = |x| + |y|
    sup_err_x: float
    sup_err_y: float
    y_equal: bool                 # discrete event lists identical
    comp_N: np.ndarray            # (R,) integral of lambda_r(Z^N) over [0, T]
    comp: np.ndarray              # (R,) integral of lambda_r(Z) over [0, T]
    species: tuple = ()
    jump: Optional[PathRecord] = field(default=None, repr=False)
    pdmp: Optional[PathRecord] = field(default=None, repr=False)

    def residual(self) -> np.ndarray:
        """V^N minus the sum of its terms, at every grid time."""
        rhs = self.V[0] + self.U + self.sqrtN_gamma + self.drift_integral + self.zeta + self.xi
        return self.V - rhs

    def tolerance(self) -> np.ndarray:
        return 10.0 * self.quad_error + self.flow_tol

    def identity_holds(self) -> bool:
        return bool(np.all(np.abs(self.residual()) <= self.tolerance()))

    def write_csv(self, path, header_lines=()):
        n = self.V.shape[1]
        names = list(self.species) if len(self.species) == n else [str(i + 1) for i in range(n)]
        cols = ["t"]
        for key in ("VN", "UN", "sqrtN_gamma", "zeta", "xi", "drift_integral"):
            cols += [f"{key}_{s}" for s in names]
        pairs = [(i, j) for i in range(n) for j in range(i, n)]
        cols += [f"qv_{names[i]}_{names[j]}" for i, j in pairs]
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            blocks = (self.V, self.U, self.sqrtN_gamma, self.zeta, self.xi, self.drift_integral)
            for g in range(len(self.t)):
                row = [self.t[g]]
                for b in blocks:
                    row += list(b[g])
                row += [self.qv[g, i, j] for i, j in pairs]
                w.writerow([repr(float(v)) for v in row])


def _event_table(net: ReactionNetwork, p: PathRecord):
    """Counts and compensators just after each event of a jump path (plus time 0)."""
    R = len(net.reactions)
    E = p.n_events
    t = np.concatenate([[0.0], p.event_t])
    xs = np.vstack([p.x0[None, :], p.event_x]) if E else p.x0[None, :]
    ys = np.vstack([p.y0[None, :], p.event_y]) if E else p.y0[None, :]
    rates = net.rates_batch(xs, ys)
    counts = np.zeros((E + 1, R))
    if E:
        counts[np.arange(1, E + 1), p.event_r] = 1.0
        counts = np.cumsum(counts, axis=0)
    comp = np.zeros((E + 1, R))
    if E:
        comp[1:] = np.cumsum(rates[:-1] * np.diff(t)[:, None], axis=0)
    return t, counts, comp, rates


def _sup_martingales(net, p, N):
    """sup over [0, T] of |M^N| and |gamma^N|; both are extremal at event times."""
    t, counts, comp, rates = _event_table(net, p)
    ci, di = net.continuous_idx, net.discrete_idx
    H = net.H.astype(float)
    comp_T = comp[-1] + rates[-1] * (p.T - t[-1])
    comp_all = np.vstack([comp, comp_T[None, :]])
    right = np.vstack([counts, counts[-1:]])
    left = np.vstack([counts[:1], counts])  # counts before each time
    sup_M = 0.0
    for c in (right, left):
        M = (c[:, ci] - N * comp_all[:, ci]) @ H[ci] / N
        sup_M = max(sup_M, float(np.max(np.linalg.norm(M, axis=1))))
    gam = counts[:, di] @ H[di] / N
    sup_g = float(np.max(np.linalg.norm(gam, axis=1))) if len(di) else 0.0
    return sup_M, sup_g, comp_T


def coupled_fluctuation(
    net: ReactionNetwork,
    N: float,
    z0N: HybridState,
    z0: HybridState,
    T: float,
    seed: int,
    replica: int = 0,
    grid=None,
    full: bool = True,
    tol: float = DEFAULT_RTOL,
) -> FluctuationDecomposition:
    """Simulate Z^N and Z on shared streams and decompose V^N on ``grid``."""
    grid = uniform_grid(T) if grid is None else np.asarray(grid, dtype=float)
    jp = simulate_scaled(net, N, z0N, T, seed, replica, grid=grid)
    pp = simulate_pdmp(net, z0, T, seed, replica, tol=tol, grid=grid)
    return decompose(net, jp, pp, full=full, tol=tol)


def decompose(net: ReactionNetwork, jp: PathRecord, pp: PathRecord, full: bool = True,
              tol: float = DEFAULT_RTOL) -> FluctuationDecomposition:
    """Decomposition of V^N for a coupled pair of paths sharing one grid."""
    N = float(jp.N)
    rN = math.sqrt(N)
    T = jp.T
    grid = jp.grid_t
    n = net.n
    ci, di = net.continuous_idx, net.discrete_idx
    H = net.H.astype(float)

    # exact terms on the grid
    V = rN * (jp.grid_x - pp.grid_x)
    cnt = jp.grid_counts.astype(float)
    U = rN * ((cnt[:, ci] - N * jp.grid_comp[:, ci]) @ H[ci]) / N
    sg = rN * (cnt[:, di] @ H[di]) / N
    qv = np.einsum("gc,ci,cj->gij", cnt[:, ci], H[ci], H[ci]) / N

    # nodes: grid, events of both paths
    nodes = np.unique(np.concatenate([grid, jp.event_t, pp.event_t]))
    nodes = nodes[(nodes >= 0) & (nodes <= T)]
    a, b = nodes[:-1], nodes[1:]
    mid = 0.5 * (a + b)
    xN = jp.x_at(a)
    yN = jp.y_at(a)
    y = pp.y_at(a)
    xs = pp.x_at(np.concatenate([a, mid, b])).reshape(3, len(a), n)

    def integrands(x):
        FN = _drift_rows(net, xN, yN)
        Fmix = _drift_rows(net, x, yN)
        Flim = _drift_rows(net, x, y)
        Vs = rN * (xN - x)
        drift_term = np.einsum("mij,mj->mi", _jacobian_rows(net, x, yN), Vs)
        zeta = rN * (FN - Fmix) - drift_term
        xi = rN * (Fmix - Flim)
        return drift_term, zeta, xi, Vs

    fa = integrands(xs[0])
    fm = integrands(xs[1])
    fb = integrands(xs[2])
    w = (b - a)[:, None]
    simpson = [w * (p + 4 * q + r) / 6.0 for p, q, r in zip(fa[:3], fm[:3], fb[:3])]
    trap = [w * (p + r) / 2.0 for p, r in zip(fa[:3], fb[:3])]
    est = sum(np.abs(s - t) for s, t in zip(simpson, trap))

    # cumulative integrals, read off at the grid nodes
    pos = np.searchsorted(nodes, grid)
    cum = [np.vstack([np.zeros((1, n)), np.cumsum(s, axis=0)])[pos] for s in simpson]
    err = np.vstack([np.zeros((1, n)), np.cumsum(est, axis=0)])[pos]

    # sup errors over right values and left limits at every node
    dx_a = np.linalg.norm(xN - xs[0], axis=1)
    dx_b = np.linalg.norm(xN - xs[2], axis=1)
    dy = np.linalg.norm((yN - y).astype(float), axis=1)
    end_x = float(np.linalg.norm(jp.grid_x[-1] - pp.grid_x[-1]))
    end_y = float(np.linalg.norm((jp.grid_y[-1] - pp.grid_y[-1]).astype(float)))
    sup_err = max(float(np.max(np.maximum(dx_a, dx_b) + dy)) if len(a) else 0.0, end_x + end_y)
    sup_x = max(float(np.max(np.maximum(dx_a, dx_b))) if len(a) else 0.0, end_x)
    sup_y = max(float(np.max(dy)) if len(a) else 0.0, end_y)

    te_N, re_N = jp.discrete_events()
    te, re = pp.discrete_events()
    y_equal = bool(np.array_equal(te_N, te) and np.array_equal(re_N, re))

    sup_M, sup_g, comp_N = _sup_martingales(net, jp, N)
    xmax = float(np.max(np.abs(pp.grid_x))) if pp.grid_x.size else 0.0
    flow_tol = rN * 100.0 * tol * (1.0 + xmax) * max(T, 1.0)

    return FluctuationDecomposition(
        t=grid, N=N, V=V, U=U, sqrtN_gamma=sg,
        zeta=cum[1], xi=cum[2], drift_integral=cum[0], qv=qv,
        quad_error=err, flow_tol=flow_tol,
        sup_M=sup_M, sup_gamma=sup_g, sup_err=sup_err, sup_err_x=sup_x, sup_err_y=sup_y,
        y_equal=y_equal, comp_N=comp_N, comp=pp.grid_comp[-1].copy(),
        species=tuple(net.continuous),
        jump=jp if full else None, pdmp=pp if full else None,
    )


def quadratic_variation(dec: FluctuationDecomposition, i: int, j: int, t: float) -> float:
    """[U^N_i, U^N_j]_t at a grid time t (indices are 0-based)."""
    n = dec.qv.shape[1]
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"species index out of range 0..{n - 1}")
    g = int(np.searchsorted(dec.t, t))
    if g >= len(dec.t) or not math.isclose(dec.t[g], t, rel_tol=0, abs_tol=1e-12 * max(1.0, abs(t))):
        raise ValueError(f"t={t} is not a grid time")
    return float(dec.qv[g, i, j])


# ---------------------------------------------------------------------------
# limiting SDE


@dataclass
class SdePath:
    t: np.ndarray          # (G,)
    V: np.ndarray          # (G, n)
    dB: np.ndarray         # (G-1, C) Brownian increments, one column per continuous reaction
    theta: np.ndarray      # (G, C) random clocks
    reaction_ids: tuple = ()


def simulate_limit_sde(net: ReactionNetwork, zpath: PathRecord, v0, grid=None, seed: int = 0,
                       dB: Optional[np.ndarray] = None) -> SdePath:
    """Euler-Maruyama for dV = sigma(Z) dB + grad_x F(Z) V dt along a PDMP path.

    Default grid: 2**12 uniform steps on [0, T].  ``dB`` overrides the
    Gaussian increments (rows are steps, columns continuous reactions).
    """
    grid = uniform_grid(zpath.T, SDE_RESOLUTION) if grid is None else np.asarray(grid, dtype=float)
    if grid[0] < 0 or grid[-1] > zpath.T * (1 + 1e-12) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be increasing and inside [0, T] of the path")
    v0 = np.asarray(v0, dtype=float).reshape(-1)
    if len(v0) != net.n or not np.all(np.isfinite(v0)):
        raise ValueError("v0 must be a finite vector of length n")
    ci = net.continuous_idx
    C = len(ci)
    G = len(grid)
    if dB is None:
        rng = np.random.default_rng(seed)
        dB = rng.standard_normal((G - 1, C)) * np.sqrt(np.diff(grid))[:, None]
    else:
        dB = np.asarray(dB, dtype=float).reshape(G - 1, C)
    zx = np.ascontiguousarray(zpath.x_at(grid))
    zy = np.ascontiguousarray(zpath.y_at(grid).astype(np.int64))
    tp, gt = net.tape, net.grad_tape
    V = np.zeros((G, net.n))
    theta = np.zeros((G, C))
    status = K.sde_em(
        grid, zx, zy, dB, v0,
        tp.ops, tp.iargs, tp.fargs, tp.starts, gt.ops, gt.iargs, gt.fargs, gt.starts,
        max(tp.depth, gt.depth, 1), net.H.astype(float), ci, V, theta,
    )
    if status == K.DIVERGED:
        raise SdeDivergence(f"|V| exceeded {DIVERGENCE_LIMIT:g}; refine the grid")
    return SdePath(t=grid, V=V, dB=dB, theta=theta, reaction_ids=tuple(net.reaction_ids[r] for r in ci))
