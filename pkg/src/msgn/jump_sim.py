"""Exact simulation of the scaled jump process Z^N = (X^N, Y^N) by thinning.

Every reaction r owns the Poisson random measure ``stream(seed, replica, r)``.
A point (s, u) of it fires r when ``u <= N lambda_r(Z^N(s-))`` (continuous
reactions) or ``u <= mu_r(Z^N(s-))`` (discrete reactions).  Points are only
materialised up to a per-reaction level that is kept above the current rate:
either the declared bound (``N L`` or ``L``) or twice the current rate,
raised whenever a jump pushes the rate past it.  Any level above the rate
gives the same path, because the random field does not depend on which
levels were queried.
"""
from __future__ import annotations

import math

import numpy as np

from . import _kernels as K
from .network import HybridState, ReactionNetwork
from .paths import EventCapExceeded, PathRecord, SimulationError, uniform_grid
from .prm import PRMStream, next_point, stream

DEFAULT_MAX_EVENTS = 10**7


def _check_inputs(net: ReactionNetwork, z0: HybridState, T: float):
    if len(z0.x) != net.n or len(z0.y) != net.d:
        raise ValueError(
            f"initial state has dimensions ({len(z0.x)}, {len(z0.y)}), network expects ({net.n}, {net.d})"
        )
    if not T > 0:
        raise ValueError("horizon T must be positive")


def _candidates(streams, tops, j, t_from, t_end, tiebreak, subset):
    ss, uu, rr = [], [], []
    for r in subset:
        if not tops[r] > 0:
            continue
        s, u = streams[r].window_points(j, tops[r])
        m = (s > t_from) & (s <= t_end)
        ss.append(s[m])
        uu.append(u[m])
        rr.append(np.full(int(m.sum()), r, dtype=np.int64))
    if not ss:
        return np.empty(0), np.empty(0), np.empty(0, dtype=np.int64)
    s = np.concatenate(ss)
    u = np.concatenate(uu)
    r = np.concatenate(rr)
    order = np.lexsort((tiebreak[r], s))
    return s[order], u[order], r[order]


class _Buffers:
    """Growable event storage handed to the kernels."""

    def __init__(self, n, d, cap=1024):
        self.t = np.empty(cap)
        self.r = np.empty(cap, dtype=np.int64)
        self.u = np.empty(cap)
        self.x = np.empty((cap, n))
        self.y = np.empty((cap, d), dtype=np.int64)

    def grow(self):
        cap = 2 * len(self.t)
        for name in ("t", "r", "u", "x", "y"):
            old = getattr(self, name)
            new = np.empty((cap,) + old.shape[1:], dtype=old.dtype)
            new[: len(old)] = old
            setattr(self, name, new)

    def trim(self, m):
        return self.t[:m].copy(), self.r[:m].copy(), self.u[:m].copy(), self.x[:m].copy(), self.y[:m].copy()


def simulate_scaled(
    net: ReactionNetwork,
    N: float,
    z0: HybridState,
    T: float,
    seed: int,
    replica: int = 0,
    grid=None,
    max_events: int = DEFAULT_MAX_EVENTS,
    base_level: float = 1.0,
    window: float = 1.0,
    engine: str = "kernel",
) -> PathRecord:
    """Simulate Z^N on [0, T] from z0, driven by the streams of (seed, replica).

    ``grid`` is an array of sample times (default: uniform with step T/256).
    ``engine="python"`` runs a slow reference loop built on ``prm.next_point``;
    both engines return the same events.
    """
    _check_inputs(net, z0, T)
    if not N > 0:
        raise ValueError("scale N must be positive")
    grid = uniform_grid(T) if grid is None else np.asarray(grid, dtype=float)
    streams = [stream(seed, replica, rid, base_level, window) for rid in net.reaction_ids]
    if engine == "python":
        return _simulate_reference(net, float(N), z0, T, streams, grid, max_events)
    if engine != "kernel":
        raise ValueError(f"unknown engine {engine!r}")
    return _simulate_kernel(net, float(N), z0, T, streams, grid, max_events, seed, replica)


def _simulate_kernel(net, N, z0, T, streams, grid, max_events, seed, replica):
    n, d, R = net.n, net.d, len(net.reactions)
    tape = net.tape
    stack = np.empty(tape.depth)
    isd = net.is_discrete
    scale = np.where(isd, 1.0, N)
    H, E = net.H, net.E
    x0 = z0.x.astype(float).copy()
    nx = np.zeros(n, dtype=np.int64)
    y = z0.y.astype(np.int64).copy()
    xc = np.maximum(x0, 0.0)
    rates = np.zeros(R)
    if R:
        K.eval_all(tape.ops, tape.iargs, tape.fargs, tape.starts, xc, y, stack, rates)
    comp = np.zeros(R)
    counts = np.zeros(R, dtype=np.int64)
    top = np.zeros(R)
    scal = np.zeros(1)
    ints = np.zeros(3, dtype=np.int64)
    buf = _Buffers(n, d)
    G = len(grid)
    g_x = np.zeros((G, n))
    g_y = np.zeros((G, d), dtype=np.int64)
    g_J = np.zeros(G, dtype=np.int64)
    g_comp = np.zeros((G, R))
    g_counts = np.zeros((G, R), dtype=np.int64)
    bound = net.rate_bound
    everything = range(R)

    def level(r):
        need = scale[r] * bound if bound is not None and scale[r] * rates[r] <= scale[r] * bound else 2.0 * scale[r] * rates[r]
        return streams[r].strip_top(streams[r].strip_for(need))

    w = streams[0].window if R else 1.0
    nwin = max(1, math.ceil(T / w - 1e-12))
    for j in range(nwin):
        t_end = min((j + 1) * w, T)
        for r in everything:
            top[r] = level(r)
        cs, cu, cr = _candidates(streams, top, j, scal[0], t_end, net.tiebreak, everything)
        idx = 0
        while True:
            status, idx = K.jump_window(
                cs, cu, cr, idx, t_end,
                tape.ops, tape.iargs, tape.fargs, tape.starts, stack,
                H, E, scale, isd, N, x0,
                nx, y, xc, rates, comp, counts, top, scal, ints,
                buf.t, buf.r, buf.u, buf.x, buf.y, max_events,
                grid, g_x, g_y, g_J, g_comp, g_counts,
            )
            if status == K.DONE:
                break
            if status == K.NEED_LEVEL:
                for r in everything:
                    if scale[r] * rates[r] > top[r]:
                        top[r] = streams[r].strip_top(streams[r].strip_for(2.0 * scale[r] * rates[r]))
                cs, cu, cr = _candidates(streams, top, j, scal[0], t_end, net.tiebreak, everything)
                idx = 0
            elif status == K.BUFFER_FULL:
                buf.grow()
            elif status == K.EVENT_CAP:
                raise EventCapExceeded(
                    f"more than {max_events} events before t={cs[idx]:.6g} (seed={seed}, replica={replica})"
                )
            else:
                raise SimulationError(f"unexpected kernel status {status}")
    m = int(ints[K.I_NEV])
    et, er, eu, ex, ey = buf.trim(m)
    return PathRecord(
        kind="jump",
        continuous=net.continuous,
        discrete=net.discrete,
        reaction_ids=net.reaction_ids,
        is_discrete=isd,
        x0=x0,
        y0=z0.y.astype(np.int64).copy(),
        T=float(T),
        N=N,
        event_t=et,
        event_r=er,
        event_u=eu,
        event_x=ex,
        event_y=ey,
        grid_t=grid,
        grid_x=g_x,
        grid_y=g_y,
        grid_J=g_J,
        grid_comp=g_comp,
        grid_counts=g_counts,
        meta={"seed": seed, "replica": replica},
    )


def _simulate_reference(net, N, z0, T, streams, grid, max_events):
    """Event-by-event loop over ``next_point``; deliberately simple and slow."""
    n, d, R = net.n, net.d, len(net.reactions)
    isd = net.is_discrete
    scale = np.where(isd, 1.0, N)
    x0 = z0.x.astype(float).copy()
    nx = np.zeros(n, dtype=np.int64)
    y = z0.y.astype(np.int64).copy()

    def rates_at():
        x = x0 + nx / N
        return net.rates_batch(x[None, :], y[None, :])[0]

    def level(r, lam):
        need = 3.0 * scale[r] * lam
        return streams[r].strip_top(streams[r].strip_for(need))

    rates = rates_at()
    top = np.array([level(r, rates[r]) for r in range(R)])
    pending = [next_point(streams[r], 0.0, top[r], T) for r in range(R)]
    comp = np.zeros(R)
    counts = np.zeros(R, dtype=np.int64)
    jd = 0
    t_last = 0.0
    ev = []
    G = len(grid)
    g_x = np.zeros((G, n))
    g_y = np.zeros((G, d), dtype=np.int64)
    g_J = np.zeros(G, dtype=np.int64)
    g_comp = np.zeros((G, R))
    g_counts = np.zeros((G, R), dtype=np.int64)
    g = 0

    def record_until(t, inclusive):
        nonlocal g
        while g < G and (grid[g] < t or (inclusive and grid[g] <= t)):
            g_x[g] = x0 + nx / N
            g_y[g] = y
            g_J[g] = jd
            g_comp[g] = comp + rates * (grid[g] - t_last)
            g_counts[g] = counts
            g += 1

    while True:
        live = [(p[0], net.tiebreak[r], r) for r, p in enumerate(pending) if p is not None]
        if not live:
            break
        s, _, r = min(live)
        u = pending[r][1]
        if u <= scale[r] * rates[r]:
            if len(ev) >= max_events:
                raise EventCapExceeded(f"more than {max_events} events before t={s:.6g}")
            record_until(s, False)
            comp += rates * (s - t_last)
            t_last = s
            nx += net.H[r]
            y += net.E[r]
            counts[r] += 1
            jd += int(isd[r])
            ev.append((s, r, u, x0 + nx / N, y.copy()))
            rates = rates_at()
            for q in range(R):
                if scale[q] * rates[q] > top[q]:
                    top[q] = level(q, rates[q])
                    if q != r:
                        pending[q] = next_point(streams[q], s, top[q], T)
        pending[r] = next_point(streams[r], s, top[r], T)
    record_until(T, True)
    if ev:
        et = np.array([e[0] for e in ev])
        er = np.array([e[1] for e in ev], dtype=np.int64)
        eu = np.array([e[2] for e in ev])
        ex = np.array([e[3] for e in ev]).reshape(-1, n)
        ey = np.array([e[4] for e in ev], dtype=np.int64).reshape(-1, d)
    else:
        et, eu = np.empty(0), np.empty(0)
        er = np.empty(0, dtype=np.int64)
        ex, ey = np.empty((0, n)), np.empty((0, d), dtype=np.int64)
    return PathRecord(
        kind="jump", continuous=net.continuous, discrete=net.discrete, reaction_ids=net.reaction_ids,
        is_discrete=isd, x0=x0, y0=z0.y.astype(np.int64).copy(), T=float(T), N=N,
        event_t=et, event_r=er, event_u=eu, event_x=ex, event_y=ey,
        grid_t=grid, grid_x=g_x, grid_y=g_y, grid_J=g_J, grid_comp=g_comp, grid_counts=g_counts,
        meta={"engine": "python"},
    )
