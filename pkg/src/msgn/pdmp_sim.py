"""The limiting PDMP Z = (X, Y): x' = F(x, y) between jumps of y.

Jumps of y are thinned from the same discrete-reaction streams that drive
``jump_sim``: a point (s, u) of stream r fires when ``u <= mu_r(Z(s-))``.
The flow is integrated with an embedded Dormand-Prince 5(4) pair that stops
exactly at every candidate time, so rates are evaluated at the true left
limit.  Since mu_r moves with x between jumps, every accepted step re-checks
the rates against the materialised level; a rate above it rolls the step back,
raises the level to twice the rate and replays the step.
"""
from __future__ import annotations

import math

import numpy as np

from . import _kernels as K
from .jump_sim import _Buffers, _candidates, _check_inputs
from .network import HybridState, ReactionNetwork
from .paths import EventCapExceeded, IntegratorFailure, PathRecord, SimulationError, uniform_grid
from .prm import stream

DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-10
MAX_STEP = 0.1


class _Flow:
    """Work arrays for the compiled integrator."""

    def __init__(self, net: ReactionNetwork):
        self.net = net
        self.tape = net.tape
        self.stack = np.empty(self.tape.depth)
        R = len(net.reactions)
        m = net.n + R
        self.work = np.zeros((9, m))
        self.xc = np.zeros(net.n)
        self.rates = np.zeros(R)
        self.cidx = net.continuous_idx
        self.disc = net.discrete_idx


def integrate_flow(
    net: ReactionNetwork,
    s0: HybridState,
    t0: float,
    t1: float,
    tol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> HybridState:
    """Follow x' = F(x, y) with y frozen from time t0 to t1.

    ``tol`` and ``atol`` are targets for the returned state; the step
    controller runs ten times tighter so the accumulated error stays inside.
    """
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    if len(s0.x) != net.n or len(s0.y) != net.d:
        raise ValueError("state dimensions do not match the network")
    if t1 == t0:
        return s0
    fl = _Flow(net)
    tp = fl.tape
    u = np.concatenate([s0.x.astype(float), np.zeros(len(net.reactions))])
    y = s0.y.astype(np.int64).copy()
    scal = np.array([t0, min(MAX_STEP, t1 - t0)])
    status, t = K.advance(
        u, float(t0), float(t1), y, net.n, tp.ops, tp.iargs, tp.fargs, tp.starts, fl.stack,
        net.H, fl.cidx, fl.xc, fl.rates, fl.work, scal, 0.1 * tol, 0.1 * atol, MAX_STEP,
        False, np.zeros(len(net.reactions)), fl.disc,
    )
    if status == K.UNDERFLOW:
        raise IntegratorFailure(f"step size underflow at t={t:.6g}")
    x = u[: net.n]
    if np.any(x < 0):
        # the flow is meant to keep the orthant; tiny negative round-off is clipped
        if np.min(x) < -1e-9 * (1 + np.max(np.abs(x))):
            raise IntegratorFailure(f"flow left the nonnegative orthant: x={x}")
        x = np.maximum(x, 0.0)
    return HybridState(x, y)


def simulate_pdmp(
    net: ReactionNetwork,
    z0: HybridState,
    T: float,
    seed: int,
    replica: int = 0,
    tol: float = DEFAULT_RTOL,
    grid=None,
    atol: float = DEFAULT_ATOL,
    max_events: int = 10**7,
    base_level: float = 1.0,
    window: float = 1.0,
) -> PathRecord:
    """Simulate the PDMP on [0, T] sharing the discrete streams of (seed, replica)."""
    _check_inputs(net, z0, T)
    grid = uniform_grid(T) if grid is None else np.asarray(grid, dtype=float)
    n, d, R = net.n, net.d, len(net.reactions)
    fl = _Flow(net)
    tp = fl.tape
    disc = fl.disc
    streams = {int(r): stream(seed, replica, net.reactions[r].id, base_level, window) for r in disc}
    u = np.concatenate([z0.x.astype(float), np.zeros(R)])
    y = z0.y.astype(np.int64).copy()
    rates = fl.rates
    xc = np.maximum(z0.x.astype(float), 0.0)
    if R:
        K.eval_all(tp.ops, tp.iargs, tp.fargs, tp.starts, xc, y, fl.stack, rates)
    top = np.zeros(R)
    scal = np.array([0.0, min(MAX_STEP, T)])
    ints = np.zeros(3, dtype=np.int64)
    buf = _Buffers(n, d, 64)
    G = len(grid)
    g_x = np.zeros((G, n))
    g_y = np.zeros((G, d), dtype=np.int64)
    g_J = np.zeros(G, dtype=np.int64)
    g_comp = np.zeros((G, R))
    bound = net.rate_bound

    def level(r, lam):
        need = bound if bound is not None and lam <= bound else 2.0 * lam
        st = streams[r]
        return st.strip_top(st.strip_for(need))

    nwin = max(1, math.ceil(T / window - 1e-12))
    empty = (np.empty(0), np.empty(0), np.empty(0, dtype=np.int64))
    for j in range(nwin):
        t_end = min((j + 1) * window, T)
        for r in disc:
            top[r] = level(r, rates[r])
        cands = _candidates(streams, top, j, scal[0], t_end, net.tiebreak, disc) if len(disc) else empty
        idx = 0
        while True:
            cs, cu, cr = cands
            status, idx = K.pdmp_window(
                cs, cu, cr, idx, t_end,
                tp.ops, tp.iargs, tp.fargs, tp.starts, fl.stack, net.H, net.E, fl.cidx, disc, n,
                u, y, fl.xc, rates, top, scal, ints, fl.work, tol, atol, MAX_STEP,
                buf.t, buf.r, buf.u, buf.x, buf.y, max_events,
                grid, g_x, g_y, g_J, g_comp,
            )
            if status == K.DONE:
                break
            if status == K.NEED_LEVEL:
                for r in disc:
                    if rates[r] > top[r]:
                        top[r] = level(r, rates[r])
                cands = _candidates(streams, top, j, scal[0], t_end, net.tiebreak, disc)
                idx = 0
            elif status == K.BUFFER_FULL:
                buf.grow()
            elif status == K.EVENT_CAP:
                raise EventCapExceeded(f"more than {max_events} discrete events (seed={seed}, replica={replica})")
            elif status == K.UNDERFLOW:
                raise IntegratorFailure(f"step size underflow at t={scal[0]:.6g} (seed={seed}, replica={replica})")
            else:
                raise SimulationError(f"unexpected kernel status {status}")
    m = int(ints[K.I_NEV])
    et, er, eu, ex, ey = buf.trim(m)
    return PathRecord(
        kind="pdmp",
        continuous=net.continuous,
        discrete=net.discrete,
        reaction_ids=net.reaction_ids,
        is_discrete=net.is_discrete,
        x0=z0.x.astype(float).copy(),
        y0=z0.y.astype(np.int64).copy(),
        T=float(T),
        N=None,
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
        meta={"seed": seed, "replica": replica, "drift": net.drift_batch},
    )
