"""Acceptance criteria, each run at its stated scale and tolerance.

Every test prints one ``C<k> PASS|FAIL`` line (also collected into the pytest
terminal summary) before asserting.
"""
import math
import time

import numpy as np
import pytest

from msgn import HybridState, eval_rate, integrate_flow, parse_network, rate_gradient, simulate_pdmp
from msgn.fluctuation import simulate_limit_sde
from msgn.models import TELEGRAPH, TELEGRAPH_FEEDBACK, telegraph
from msgn.paths import uniform_grid
from msgn.prm import query, stream
from msgn.stats import clt_compare, discrete_equality_probability, gof_tests, strong_error_sweep

from conftest import ACCEPTANCE_LINES
from test_jump_sim import MIXED

Z0 = HybridState([1.0], [1])
SWEEP_NS = (16, 64, 256, 1024)


def verdict(tag, ok, detail):
    line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


@pytest.fixture(scope="module")
def telegraph_sweep():
    t0 = time.perf_counter()
    rep = strong_error_sweep(parse_network(TELEGRAPH), Z0, 5.0, SWEEP_NS, 200, seed=1)
    return rep, time.perf_counter() - t0


@pytest.fixture(scope="module")
def gamma_sweep():
    # the x-dependent on-switch also moves P by one molecule, so gamma^N is not identically zero
    net = parse_network(TELEGRAPH_FEEDBACK.replace("reaction on class=D h=[0]", "reaction on class=D h=[+1]"))
    assert net.H[net.index("on"), 0] == 1
    return strong_error_sweep(net, Z0, 5.0, SWEEP_NS, 200, seed=2)


def _spread(values):
    v = np.asarray(values, dtype=float)
    if np.all(v == 0):
        return 1.0
    return float(v.max() / v.min()) if v.min() > 0 else math.inf


def test_c1_strong_rate(telegraph_sweep):
    rep, seconds = telegraph_sweep
    f = rep.fit
    errs = ", ".join(f"{r.err.value:.4g}" for r in rep.rows)
    ok = f.defined and -0.65 <= f.slope <= -0.35 and seconds <= 300 and all(r.failures == 0 for r in rep.rows)
    verdict("C1", ok, f"slope {f.slope:.4f} (CI [{f.slope_lo:.3f}, {f.slope_hi:.3f}]), errors [{errs}], "
                      f"{seconds:.0f}s")


def test_c2_martingale_and_remainder_scaling(telegraph_sweep, gamma_sweep):
    rep, _ = telegraph_sweep
    m = [r.M_scaled.value for r in rep.rows]
    g = [r.gamma_scaled.value for r in rep.rows]
    g2 = [r.gamma_scaled.value for r in gamma_sweep.rows]
    m2 = [r.M_scaled.value for r in gamma_sweep.rows]
    ratios = [_spread(v) for v in (m, g, m2, g2)]
    ok = all(q <= 2.0 for q in ratios) and any(v > 0 for v in g2)
    verdict("C2", ok, "max/min of sqrt(N) E sup|M| = %.3f, N E sup|gamma| = %.3f (identically 0); "
                      "with h != 0 on a discrete reaction: %.3f and %.3f" % tuple(ratios))


def test_c3_discrete_scale():
    fb = parse_network(TELEGRAPH_FEEDBACK)
    est = [discrete_equality_probability(fb, Z0, 5.0, N, 200, seed=3) for N in (16, 256, 4096)]
    mono = all(b.value + math.hypot(a.se, b.se) >= a.value for a, b in zip(est, est[1:]))
    indep = parse_network(TELEGRAPH)
    exact = [
        discrete_equality_probability(indep, Z0, 5.0, N, 20, seed=s).value
        for N in (16, 256, 4096) for s in range(5)
    ]
    ok = mono and est[-1].value >= 0.9 and all(v == 1.0 for v in exact)
    verdict("C3", ok, "equality fractions " + ", ".join(f"{e.value:.3f}+-{e.se:.3f}" for e in est)
            + f"; x-independent switching: {sum(v == 1.0 for v in exact)}/{len(exact)} runs exactly 1")


@pytest.fixture(scope="module")
def clt_batches():
    net = parse_network(TELEGRAPH)
    return [clt_compare(net, Z0, 2.0, 4096, 500, 5000, seed=100 + b, sde_steps=2**10) for b in range(10)]


def test_c4_clt(clt_batches, pure_birth):
    c0 = clt_batches[0]
    means = bool(np.all(c0.means_agree(3.0)))
    var = float(np.max(c0.var_rel_diff()))
    ks = [float(c.ks_p.min()) for c in clt_batches]
    passes = sum(p > 0.01 for p in ks)
    anchor = clt_compare(pure_birth, HybridState([0.0], []), 2.0, 4096, 1000, 1000, seed=7, sde_steps=16)
    pa = gof_tests(anchor.samples_N[:, 0], ("normal", 0.0, 2.0)).pvalue
    pb = gof_tests(anchor.samples_sde[:, 0], ("normal", 0.0, 2.0)).pvalue
    failures = sum(c.failures for c in clt_batches)
    ok = means and var <= 0.15 and passes >= 8 and pa > 0.01 and pb > 0.01 and failures == 0
    verdict("C4", ok, f"mean V^N {c0.mean_N[0]:.4f}+-{c0.se_N[0]:.4f} vs V {c0.mean_sde[0]:.4f}+-{c0.se_sde[0]:.4f}, "
                      f"var {c0.var_N[0]:.4f} vs {c0.var_sde[0]:.4f} ({100 * var:.1f}%), KS p>0.01 in {passes}/10, "
                      f"pure-birth anchor p = {pa:.3f} (V^N), {pb:.3f} (V)")


def test_c5_prm_law():
    counts = np.array([len(query(stream(seed, 0, "r"), 0.0, 2.0, 3.0)) for seed in range(10_000)])
    chi = gof_tests(counts, ("poisson", 6.0))
    g = np.random.default_rng(5)
    bad = 0
    for case in range(1000):
        seed = int(g.integers(2**32))
        t0 = float(g.uniform(0, 6))
        t1 = t0 + float(g.uniform(0.01, 4))
        lev = float(g.uniform(0.01, 12))
        a = t0 + float(g.uniform()) * (t1 - t0)
        b = a + float(g.uniform()) * (t1 - a)
        lv = float(g.uniform()) * lev
        inner = query(stream(seed, case, "q"), a, b, lv)
        outer = query(stream(seed, case, "q"), t0, t1, lev)
        m = (outer[:, 0] > a) & (outer[:, 0] <= b) & (outer[:, 1] <= lv)
        high = query(stream(seed, case, "q"), t0, t1, 2 * lev)
        keep = high[high[:, 1] <= lev]
        if not (np.array_equal(outer[m], inner) and np.array_equal(keep, outer)):
            bad += 1
    ok = chi.pvalue > 0.01 and bad == 0
    verdict("C5", ok, f"chi-square {chi.statistic:.2f} on {chi.dof} dof, p = {chi.pvalue:.3f}; "
                      f"{bad}/1000 nested-rectangle violations")


def test_c6_quadratic_variation():
    rep = strong_error_sweep(parse_network(TELEGRAPH), Z0, 5.0, [1024], 500, seed=6)
    r = rep.rows[0]
    gap_ok = abs(r.qv_gap.value) <= 3 * r.qv_gap.se
    rel = abs(r.qv_T.value - r.qv_limit.value) / r.qv_limit.value
    ok = gap_ok and rel <= 0.05 and r.failures == 0
    verdict("C6", ok, f"E[U,U]_T = {r.qv_T.value:.4f}, compensator {r.qv_comp.value:.4f} "
                      f"(paired gap {r.qv_gap.value:.2e} +- {r.qv_gap.se:.2e}), limit {r.qv_limit.value:.4f} "
                      f"({100 * rel:.2f}%)")


def _gradient_worst(net, rng):
    worst = 0.0
    for r in net.reactions:
        grads = rate_gradient(net, r.id)
        for _ in range(100):
            x = rng.uniform(0.05, 10, net.n)
            y = np.array([rng.integers(int(lo), int(hi) + 1) for lo, hi in
                          (net.domain.get(s, (0, 5)) for s in net.discrete)], dtype=int)
            vals = net._values(HybridState(x, y))
            for i in range(net.n):
                h = 1e-5 * max(1.0, x[i])
                up, dn = x.copy(), x.copy()
                up[i] += h
                dn[i] -= h
                fd = (eval_rate(net, r.id, HybridState(up, y)) - eval_rate(net, r.id, HybridState(dn, y))) / (2 * h)
                gv = float(grads[i].evaluate(vals))
                worst = max(worst, abs(gv - fd) / max(abs(gv), 1.0))
    return worst


def test_c7_numerics():
    g = np.random.default_rng(7)
    nets = [parse_network(TELEGRAPH), parse_network(TELEGRAPH_FEEDBACK), parse_network(MIXED)]
    grad_err = max(_gradient_worst(net, g) for net in nets)

    tel = telegraph(k1=3.0, k2=0.7)
    flow_err = 0.0
    for p0 in (0.0, 1.0, 9.0):
        for t in (0.1, 1.0, 4.0, 12.0):
            got = integrate_flow(tel, HybridState([p0], [1]), 0.0, t).x[0]
            want = 3.0 / 0.7 + (p0 - 3.0 / 0.7) * math.exp(-0.7 * t)
            flow_err = max(flow_err, abs(got - want) / abs(want))

    T = 2.0
    net = parse_network(TELEGRAPH)
    path = simulate_pdmp(net, Z0, T, seed=1)
    errs = []
    for m in (2**8, 2**9, 2**10, 2**11):
        s = simulate_limit_sde(net, path, [1.5], uniform_grid(T, m), dB=np.zeros((m, 2)))
        errs.append(abs(s.V[-1, 0] - 1.5 * math.exp(-T)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    ok = grad_err <= 1e-6 and flow_err <= 1e-8 and bool(np.all((orders >= 0.8) & (orders <= 1.2)))
    verdict("C7", ok, f"gradient vs central differences {grad_err:.2e}, flow vs closed form {flow_err:.2e}, "
                      f"EM orders {np.round(orders, 3).tolist()}")
