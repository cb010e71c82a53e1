"""Compiled inner loops.

Rate expressions reach these kernels as postfix tapes (see ``expr.compile_tape``),
so every kernel is compiled once and cached on disk rather than per network.
Kernels mutate the state arrays they are given and report back through an
integer status; the Python drivers in ``jump_sim``/``pdmp_sim`` own all
allocation and random-field access.
"""
import math

import numpy as np
from numba import njit

DONE = 0
NEED_LEVEL = 1
BUFFER_FULL = 2
EVENT_CAP = 3
UNDERFLOW = 4
DIVERGED = 5

# scalar slots of the int state vector
I_NEV, I_GRID, I_JDISC = 0, 1, 2


@njit(cache=True)
def cutoff_value(x, y, k, order, i, j):
    xn2 = 0.0
    for a in range(x.shape[0]):
        xn2 += x[a] * x[a]
    yn2 = 0.0
    for a in range(y.shape[0]):
        yn2 += float(y[a]) * float(y[a])
    xn = math.sqrt(xn2)
    r = (xn + math.sqrt(yn2)) / k
    s = min(max(r - 1.0, 0.0), 1.0)
    if order == 0:
        return 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    if xn == 0.0:
        return 0.0
    t1 = -30.0 * s * s * (1.0 - s) * (1.0 - s)
    dri = x[i] / (k * xn)
    if order == 1:
        return t1 * dri
    t2 = -60.0 * s * (s - 1.0) * (2.0 * s - 1.0)
    drj = x[j] / (k * xn)
    delta = 1.0 if i == j else 0.0
    drij = (delta - x[i] * x[j] / xn2) / (k * xn)
    return t2 * dri * drj + t1 * drij


@njit(cache=True)
def eval_prog(p, ops, iargs, fargs, starts, x, y, stack):
    sp = 0
    for q in range(starts[p], starts[p + 1]):
        op = ops[q]
        if op == 0:
            stack[sp] = fargs[q]
            sp += 1
        elif op == 1:
            stack[sp] = x[iargs[q, 0]]
            sp += 1
        elif op == 2:
            stack[sp] = float(y[iargs[q, 0]])
            sp += 1
        elif op == 3:
            sp -= 1
            stack[sp - 1] += stack[sp]
        elif op == 4:
            sp -= 1
            stack[sp - 1] *= stack[sp]
        elif op == 5:
            b = stack[sp - 1]
            acc = 1.0
            for _ in range(iargs[q, 0]):
                acc *= b
            stack[sp - 1] = acc
        else:
            stack[sp] = cutoff_value(x, y, fargs[q], iargs[q, 0], iargs[q, 1], iargs[q, 2])
            sp += 1
    return stack[0]


@njit(cache=True)
def eval_all(ops, iargs, fargs, starts, x, y, stack, out):
    for p in range(starts.shape[0] - 1):
        out[p] = eval_prog(p, ops, iargs, fargs, starts, x, y, stack)


@njit(cache=True)
def eval_batch(ops, iargs, fargs, starts, depth, X, Y):
    """Programs evaluated at m states (rows of X, Y); X is clamped at 0."""
    m = X.shape[0]
    P = starts.shape[0] - 1
    out = np.empty((m, P))
    stack = np.empty(depth)
    xc = np.empty(X.shape[1])
    for a in range(m):
        for i in range(X.shape[1]):
            xc[i] = max(X[a, i], 0.0)
        for p in range(P):
            out[a, p] = eval_prog(p, ops, iargs, fargs, starts, xc, Y[a], stack)
    return out


# ---------------------------------------------------------------------------
# scaled jump process


@njit(cache=True)
def _jump_grid_record(g, t, x0, nx, N, y, rates, comp, counts, tl, ints,
                      g_x, g_y, g_J, g_comp, g_counts):
    for i in range(x0.shape[0]):
        g_x[g, i] = x0[i] + nx[i] / N
    for i in range(y.shape[0]):
        g_y[g, i] = y[i]
    g_J[g] = ints[I_JDISC]
    for q in range(rates.shape[0]):
        g_comp[g, q] = comp[q] + rates[q] * (t - tl)
        g_counts[g, q] = counts[q]


@njit(cache=True)
def jump_window(cand_s, cand_u, cand_r, start, t_end,
                ops, iargs, fargs, starts, stack,
                H, E, scale, isd, N, x0,
                nx, y, xc, rates, comp, counts, top, scal, ints,
                ev_t, ev_r, ev_u, ev_x, ev_y, max_events,
                grid, g_x, g_y, g_J, g_comp, g_counts):
    """Thin the time-ordered candidates ``cand_*[start:]`` of one time window.

    Candidates are accepted when ``u <= scale[r] * rate_r(Z(s-))``.  Returns
    (status, next candidate index).  NEED_LEVEL is raised as soon as some
    ``scale * rate`` exceeds the materialised level ``top``.
    """
    n = x0.shape[0]
    R = rates.shape[0]
    G = grid.shape[0]
    idx = start
    while idx < cand_s.shape[0]:
        s = cand_s[idx]
        while ints[I_GRID] < G and grid[ints[I_GRID]] < s:
            g = ints[I_GRID]
            _jump_grid_record(g, grid[g], x0, nx, N, y, rates, comp, counts, scal[0], ints,
                              g_x, g_y, g_J, g_comp, g_counts)
            ints[I_GRID] += 1
        r = cand_r[idx]
        if cand_u[idx] <= scale[r] * rates[r]:
            if ints[I_NEV] >= max_events:
                return EVENT_CAP, idx
            if ints[I_NEV] >= ev_t.shape[0]:
                return BUFFER_FULL, idx
            dt = s - scal[0]
            for q in range(R):
                comp[q] += rates[q] * dt
            scal[0] = s
            for i in range(n):
                nx[i] += H[r, i]
            for i in range(y.shape[0]):
                y[i] += E[r, i]
            counts[r] += 1
            if isd[r]:
                ints[I_JDISC] += 1
            k = ints[I_NEV]
            ev_t[k] = s
            ev_r[k] = r
            ev_u[k] = cand_u[idx]
            for i in range(n):
                xi = x0[i] + nx[i] / N
                ev_x[k, i] = xi
                xc[i] = max(xi, 0.0)
            for i in range(y.shape[0]):
                ev_y[k, i] = y[i]
            ints[I_NEV] += 1
            eval_all(ops, iargs, fargs, starts, xc, y, stack, rates)
            for q in range(R):
                if scale[q] * rates[q] > top[q]:
                    return NEED_LEVEL, idx + 1
        idx += 1
    while ints[I_GRID] < G and grid[ints[I_GRID]] <= t_end:
        g = ints[I_GRID]
        _jump_grid_record(g, grid[g], x0, nx, N, y, rates, comp, counts, scal[0], ints,
                          g_x, g_y, g_J, g_comp, g_counts)
        ints[I_GRID] += 1
    return DONE, idx


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4) flow integration

A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = 9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
E1 = 71.0 / 57600.0
E3 = -71.0 / 16695.0
E4 = 71.0 / 1920.0
E5 = -17253.0 / 339200.0
E6 = 22.0 / 525.0
E7 = -1.0 / 40.0


@njit(cache=True)
def flow_rhs(u, y, n, ops, iargs, fargs, starts, stack, H, cidx, xc, rates, out):
    """d/dt of [x, integral of every rate]; rates use max(x, 0)."""
    for i in range(n):
        xc[i] = max(u[i], 0.0)
    eval_all(ops, iargs, fargs, starts, xc, y, stack, rates)
    for i in range(n):
        out[i] = 0.0
    for c in range(cidx.shape[0]):
        r = cidx[c]
        for i in range(n):
            out[i] += H[r, i] * rates[r]
    for q in range(rates.shape[0]):
        out[n + q] = rates[q]


@njit(cache=True)
def dp_step(u, t, h, y, n, ops, iargs, fargs, starts, stack, H, cidx, xc, rates,
            k1, k2, k3, k4, k5, k6, k7, tmp, unew, rtol, atol):
    """One Dormand-Prince step from (t, u); returns the scaled RMS error (k1 = f(u) on entry)."""
    m = u.shape[0]
    for i in range(m):
        tmp[i] = u[i] + h * A21 * k1[i]
    flow_rhs(tmp, y, n, ops, iargs, fargs, starts, stack, H, cidx, xc, rates, k2)
    for i in range(m):
        tmp[i] = u[i] + h * (A31 * k1[i] + A32 * k2[i])
    flow_rhs(tmp, y, n, ops, iargs, fargs, starts, stack, H, cidx, xc, rates, k3)
    for i in range(m):
        tmp[i] = u[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
    flow_rhs(tmp, y, n, ops, iargs, fargs, starts, stack, H, cidx, xc, rates, k4)
    for i in range(m):
        tmp[i] = u[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
    flow_rhs(tmp, y, n, ops, iargs, fargs, starts, stack, H, cidx, xc, rates, k5)
    for i in range(m):
        tmp[i] = u[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
    flow_rhs(tmp, y, n, ops, iargs, fargs, starts, stack, H, cidx, xc, rates, k6)
    for i in range(m):
        unew[i] = u[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
    flow_rhs(unew, y, n, ops, iargs, fargs, starts, stack, H, cidx, xc, rates, k7)
    err = 0.0
    for i in range(m):
        e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
        sc = atol + rtol * max(abs(u[i]), abs(unew[i]))
        err += (e / sc) ** 2
    return math.sqrt(err / m)


@njit(cache=True)
def advance(u, t, t_tgt, y, n, ops, iargs, fargs, starts, stack, H, cidx, xc, rates,
            work, scal, rtol, atol, hmax, check, top, disc):
    """Integrate u from t to exactly t_tgt with y frozen.

    ``scal[1]`` carries the proposed step size between calls.  When ``check``
    is set, every accepted step re-evaluates the discrete rates; a rate above
    its level ``top`` rolls the step back and returns (NEED_LEVEL, t_prev)
    with ``rates`` holding the offending values.  Returns (status, t).
    """
    m = u.shape[0]
    k1 = work[0]
    k2 = work[1]
    k3 = work[2]
    k4 = work[3]
    k5 = work[4]
    k6 = work[5]
    k7 = work[6]
    tmp = work[7]
    unew = work[8]
    while t < t_tgt:
        flow_rhs(u, y, n, ops, iargs, fargs, starts, stack, H, cidx, xc, rates, k1)
        h = min(scal[1], hmax)
        last = False
        if h >= t_tgt - t:
            h = t_tgt - t
            last = True
        err = dp_step(u, t, h, y, n, ops, iargs, fargs, starts, stack, H, cidx, xc, rates,
                      k1, k2, k3, k4, k5, k6, k7, tmp, unew, rtol, atol)
        if err <= 1.0:
            # rates now hold the values at unew (last stage is evaluated there)
            if check:
                for q in range(disc.shape[0]):
                    r = disc[q]
                    if rates[r] > top[r]:
                        return NEED_LEVEL, t
            fac = 5.0 if err == 0.0 else min(5.0, 0.9 * err ** -0.2)
            if not last or fac < 1.0:
                scal[1] = max(h * fac, 1e-12)
            for i in range(m):
                u[i] = unew[i]
            t = t_tgt if last else t + h
        else:
            scal[1] = h * max(0.2, 0.9 * err ** -0.2)
            if scal[1] < 1e-14 * max(1.0, abs(t)):
                return UNDERFLOW, t
    flow_rhs(u, y, n, ops, iargs, fargs, starts, stack, H, cidx, xc, rates, k1)
    return DONE, t


@njit(cache=True)
def pdmp_window(cand_s, cand_u, cand_r, start, t_end,
                ops, iargs, fargs, starts, stack, H, E, cidx, disc, n,
                u, y, xc, rates, top, scal, ints, work, rtol, atol, hmax,
                ev_t, ev_r, ev_u, ev_x, ev_y, max_events,
                grid, g_x, g_y, g_J, g_comp):
    """Flow between time-ordered candidate points of the discrete reactions.

    ``u = [x, integrals of all rates]``; ``scal = [t, proposed step]``.
    """
    R = rates.shape[0]
    G = grid.shape[0]
    idx = start
    while True:
        t = scal[0]
        tgt = t_end
        kind = 0  # 0 window end, 1 candidate, 2 grid
        if idx < cand_s.shape[0] and cand_s[idx] <= tgt:
            tgt = cand_s[idx]
            kind = 1
        g = ints[I_GRID]
        if g < G and grid[g] < tgt:
            tgt = grid[g]
            kind = 2
        if tgt > t:
            status, t_new = advance(u, t, tgt, y, n, ops, iargs, fargs, starts, stack, H, cidx,
                                    xc, rates, work, scal, rtol, atol, hmax, True, top, disc)
            scal[0] = t_new
            if status != DONE:
                return status, idx
        scal[0] = tgt
        if kind == 2:
            for i in range(n):
                g_x[g, i] = u[i]
            for i in range(y.shape[0]):
                g_y[g, i] = y[i]
            g_J[g] = ints[I_JDISC]
            for q in range(R):
                g_comp[g, q] = u[n + q]
            ints[I_GRID] += 1
        elif kind == 1:
            r = cand_r[idx]
            idx += 1
            if cand_u[idx - 1] <= rates[r]:
                if ints[I_NEV] >= max_events:
                    return EVENT_CAP, idx - 1
                if ints[I_NEV] >= ev_t.shape[0]:
                    return BUFFER_FULL, idx - 1
                for i in range(y.shape[0]):
                    y[i] += E[r, i]
                ints[I_JDISC] += 1
                k = ints[I_NEV]
                ev_t[k] = tgt
                ev_r[k] = r
                ev_u[k] = cand_u[idx - 1]
                for i in range(n):
                    ev_x[k, i] = u[i]
                    xc[i] = max(u[i], 0.0)
                for i in range(y.shape[0]):
                    ev_y[k, i] = y[i]
                ints[I_NEV] += 1
                eval_all(ops, iargs, fargs, starts, xc, y, stack, rates)
                for q in range(disc.shape[0]):
                    rr = disc[q]
                    if rates[rr] > top[rr]:
                        return NEED_LEVEL, idx
        else:
            while ints[I_GRID] < G and grid[ints[I_GRID]] <= t_end:
                g = ints[I_GRID]
                for i in range(n):
                    g_x[g, i] = u[i]
                for i in range(y.shape[0]):
                    g_y[g, i] = y[i]
                g_J[g] = ints[I_JDISC]
                for q in range(R):
                    g_comp[g, q] = u[n + q]
                ints[I_GRID] += 1
            return DONE, idx


# ---------------------------------------------------------------------------
# linear SDE along a PDMP path


@njit(cache=True)
def sde_em(grid, zx, zy, dB, v0,
           ops, iargs, fargs, starts, gops, giargs, gfargs, gstarts, depth,
           H, cidx, V, theta):
    """Euler-Maruyama for dV = sigma(Z) dB + grad F(Z) V dt with Z frozen on each step.

    theta[k, c] accumulates the integral of lambda_c(Z) by the trapezoid rule.
    Returns DONE or DIVERGED.
    """
    G = grid.shape[0]
    n = v0.shape[0]
    C = cidx.shape[0]
    stack = np.empty(depth)
    xc = np.empty(n)
    rates = np.empty(starts.shape[0] - 1)
    grads = np.empty(gstarts.shape[0] - 1)
    jac = np.zeros((n, n))
    lam_prev = np.zeros(C)
    for i in range(n):
        V[0, i] = v0[i]
    for c in range(C):
        theta[0, c] = 0.0
    for k in range(G):
        for i in range(n):
            xc[i] = max(zx[k, i], 0.0)
        eval_all(ops, iargs, fargs, starts, xc, zy[k], stack, rates)
        if k > 0:
            dt = grid[k] - grid[k - 1]
            for c in range(C):
                theta[k, c] = theta[k - 1, c] + 0.5 * (lam_prev[c] + max(rates[cidx[c]], 0.0)) * dt
        for c in range(C):
            lam_prev[c] = max(rates[cidx[c]], 0.0)
        if k == G - 1:
            break
        eval_all(gops, giargs, gfargs, gstarts, xc, zy[k], stack, grads)
        for i in range(n):
            for j in range(n):
                jac[i, j] = 0.0
        for c in range(C):
            r = cidx[c]
            for i in range(n):
                for j in range(n):
                    jac[i, j] += H[r, i] * grads[c * n + j]
        dt = grid[k + 1] - grid[k]
        big = False
        for i in range(n):
            acc = V[k, i]
            for j in range(n):
                acc += jac[i, j] * V[k, j] * dt
            for c in range(C):
                acc += H[cidx[c], i] * math.sqrt(lam_prev[c]) * dB[k, c]
            V[k + 1, i] = acc
            if not abs(acc) <= 1e12:
                big = True
        if big:
            return DIVERGED
    return DONE
