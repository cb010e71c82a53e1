"""Monte-Carlo harness: strong error sweeps, discrete-scale agreement, CLT comparison, GOF tests."""
from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats as sps

from .fluctuation import coupled_fluctuation, simulate_limit_sde
from .jump_sim import simulate_scaled
from .network import HybridState, ReactionNetwork
from .paths import SimulationError, uniform_grid
from .pdmp_sim import DEFAULT_RTOL, simulate_pdmp

MIN_GOF_SAMPLES = 20


# ---------------------------------------------------------------------------
# small estimators


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float
    lo: float = math.nan
    hi: float = math.nan
    count: int = 0


def mean_se(a) -> Estimate:
    a = np.asarray(a, dtype=float)
    m = len(a)
    if m == 0:
        return Estimate(math.nan, math.nan)
    se = float(np.std(a, ddof=1) / math.sqrt(m)) if m > 1 else math.nan
    return Estimate(float(np.mean(a)), se, count=m)


def proportion(successes: int, trials: int, confidence: float = 0.95) -> Estimate:
    """Sample fraction with binomial standard error and Wilson interval."""
    if trials <= 0:
        return Estimate(math.nan, math.nan)
    p = successes / trials
    ci = sps.binomtest(int(successes), int(trials)).proportion_ci(confidence, method="wilson")
    return Estimate(p, math.sqrt(p * (1 - p) / trials), float(ci.low), float(ci.high), trials)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    slope_se: float
    slope_lo: float
    slope_hi: float
    constant: float          # exp(intercept): fitted C in error ~ C N^slope
    points: int
    defined: bool = True
    reason: str = ""


def fit_rate(Ns, errors, confidence: float = 0.95) -> RateFit:
    """Least-squares line through (log N, log error) with a t-based interval for the slope."""
    Ns = np.asarray(Ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    k = len(Ns)
    if k != len(errors) or k < 2:
        raise ValueError("need at least two (N, error) pairs of equal length")
    if np.any(~np.isfinite(errors)) or np.any(errors <= 0):
        nan = math.nan
        return RateFit(nan, nan, nan, nan, nan, nan, k, False, "errors must be positive and finite")
    lx, ly = np.log(Ns), np.log(errors)
    res = sps.linregress(lx, ly)
    slope, intercept = float(res.slope), float(res.intercept)
    if k > 2:
        se = float(res.stderr)
        q = float(sps.t.ppf(0.5 + confidence / 2, k - 2))
        lo, hi = slope - q * se, slope + q * se
    else:
        se = lo = hi = math.nan
    return RateFit(slope, intercept, se, lo, hi, math.exp(intercept), k)


# ---------------------------------------------------------------------------
# replica fan-out


def _map(fn, tasks, workers: int):
    if workers is None or workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def _pair_task(args):
    net, N, z0N, z0, T, seed, replica, grid, tol = args
    try:
        d = coupled_fluctuation(net, N, z0N, z0, T, seed, replica, grid=grid, full=False, tol=tol)
    except SimulationError as exc:
        return {"replica": replica, "failed": f"{type(exc).__name__}: {exc}"}
    return {
        "replica": replica,
        "failed": "",
        "err": d.sup_err,
        "err_x": d.sup_err_x,
        "err_y": d.sup_err_y,
        "equal": d.y_equal,
        "sup_M": d.sup_M,
        "sup_gamma": d.sup_gamma,
        "identity": d.identity_holds(),
        "qv_T": float(d.qv[-1, 0, 0]) if net.n else 0.0,
        "qv_comp": _h2_weighted(net, d.comp_N),
        "qv_limit": _h2_weighted(net, d.comp),
        "V_T": d.V[-1],
    }


def _h2_weighted(net, comp):
    """sum over continuous reactions of (h_r^1)^2 times comp_r."""
    if not net.n:
        return 0.0
    ci = net.continuous_idx
    return float(np.sum(net.H[ci, 0].astype(float) ** 2 * comp[ci]))


def _equality_task(args):
    net, N, z0N, z0, T, seed, replica, tol = args
    grid = np.array([0.0, T])
    try:
        jp = simulate_scaled(net, N, z0N, T, seed, replica, grid=grid)
        pp = simulate_pdmp(net, z0, T, seed, replica, tol=tol, grid=grid)
    except SimulationError as exc:
        return replica, None, f"{type(exc).__name__}: {exc}"
    a, b = jp.discrete_events(), pp.discrete_events()
    return replica, bool(np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])), ""


def _vn_task(args):
    net, N, z0N, z0, T, seed, replica, tol = args
    grid = np.array([0.0, T])
    try:
        jp = simulate_scaled(net, N, z0N, T, seed, replica, grid=grid)
        pp = simulate_pdmp(net, z0, T, seed, replica, tol=tol, grid=grid)
    except SimulationError as exc:
        return replica, None, f"{type(exc).__name__}: {exc}"
    return replica, math.sqrt(N) * (jp.grid_x[-1] - pp.grid_x[-1]), ""


def _sde_task(args):
    net, z0, T, v0, seed, replica, steps, tol = args
    try:
        pp = simulate_pdmp(net, z0, T, seed, replica, tol=tol, grid=np.array([0.0, T]))
        sde = simulate_limit_sde(net, pp, v0, uniform_grid(T, steps), seed=[seed, 1 + abs(replica)])
    except SimulationError as exc:
        return replica, None, f"{type(exc).__name__}: {exc}"
    return replica, sde.V[-1], ""


# ---------------------------------------------------------------------------
# strong error sweep


@dataclass
class SweepRow:
    N: float
    M: int
    failures: int
    err: Estimate
    err_x: Estimate
    err_y: Estimate
    equal: Estimate
    M_scaled: Estimate       # sqrt(N) E sup|M^N|
    gamma_scaled: Estimate   # N E sup|gamma^N|
    identity_failures: int
    qv_T: Estimate = None            # E [U_1, U_1]_T
    qv_comp: Estimate = None         # E sum_r (h_r^1)^2 int lambda_r(Z^N) ds
    qv_limit: Estimate = None        # E sum_r (h_r^1)^2 int lambda_r(Z) ds
    qv_gap: Estimate = None          # E of the per-replica difference qv_T - qv_comp
    failure_messages: list = field(default_factory=list)


@dataclass
class CltBlock:
    N: float
    T: float
    M_N: int
    M_sde: int
    failures: int
    species: tuple
    mean_N: np.ndarray
    se_N: np.ndarray
    mean_sde: np.ndarray
    se_sde: np.ndarray
    var_N: np.ndarray
    var_sde: np.ndarray
    ks_stat: np.ndarray
    ks_p: np.ndarray
    samples_N: np.ndarray = field(repr=False, default=None)
    samples_sde: np.ndarray = field(repr=False, default=None)

    def means_agree(self, k: float = 3.0) -> np.ndarray:
        return np.abs(self.mean_N - self.mean_sde) <= k * np.sqrt(self.se_N**2 + self.se_sde**2)

    def var_rel_diff(self) -> np.ndarray:
        return np.abs(self.var_N - self.var_sde) / self.var_sde


@dataclass
class ConvergenceReport:
    T: float
    seed: int
    rows: list
    fit: Optional[RateFit] = None
    fit_M: Optional[RateFit] = None
    fit_gamma: Optional[RateFit] = None
    clt: Optional[CltBlock] = None

    # -- serialisation -------------------------------------------------

    COLUMNS = (
        "N", "M", "failures", "mean_err", "se_err", "mean_err_x", "se_err_x", "mean_err_y", "se_err_y",
        "eq_frac", "eq_se", "eq_lo", "eq_hi", "sqrtN_supM", "sqrtN_supM_se", "N_supgamma", "N_supgamma_se",
        "identity_failures", "slope", "slope_lo", "slope_hi", "intercept", "C",
    )

    def to_csv(self, path=None, header_lines=()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        f = self.fit
        fit_cells = [f.slope, f.slope_lo, f.slope_hi, f.intercept, f.constant] if f else [math.nan] * 5
        for r in self.rows:
            cells = [
                r.N, r.M, r.failures, r.err.value, r.err.se, r.err_x.value, r.err_x.se,
                r.err_y.value, r.err_y.se, r.equal.value, r.equal.se, r.equal.lo, r.equal.hi,
                r.M_scaled.value, r.M_scaled.se, r.gamma_scaled.value, r.gamma_scaled.se,
                r.identity_failures, *fit_cells,
            ]
            w.writerow([_fmt(c) for c in cells])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def summary(self) -> str:
        out = [f"T = {_fmt(self.T)}, seed = {self.seed}"]
        for r in self.rows:
            out.append(
                f"N = {_fmt(r.N)}: M = {r.M} ({r.failures} failed), "
                f"E sup|Z^N - Z| = {r.err.value:.6g} +- {r.err.se:.3g}, "
                f"P(Y^N = Y) = {r.equal.value:.4f} [{r.equal.lo:.4f}, {r.equal.hi:.4f}], "
                f"sqrt(N) E sup|M^N| = {r.M_scaled.value:.6g} +- {r.M_scaled.se:.3g}, "
                f"N E sup|gamma^N| = {r.gamma_scaled.value:.6g} +- {r.gamma_scaled.se:.3g}"
            )
            for msg in r.failure_messages[:5]:
                out.append(f"  failed replica: {msg}")
        for name, f in (("error", self.fit), ("sqrt(N) sup|M|", self.fit_M), ("N sup|gamma|", self.fit_gamma)):
            if f is None:
                continue
            if f.defined:
                out.append(
                    f"fit {name}: slope = {f.slope:.4f} (95% CI [{f.slope_lo:.4f}, {f.slope_hi:.4f}]), "
                    f"C = {f.constant:.6g}"
                )
            else:
                out.append(f"fit {name}: slope undefined ({f.reason})")
        if self.clt is not None:
            out.append(clt_summary(self.clt))
        return "\n".join(out) + "\n"

    def plot_script(self) -> str:
        return plot_script(self)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def strong_error_sweep(
    net: ReactionNetwork,
    z0: HybridState,
    T: float,
    Ns: Sequence[float],
    M: int,
    seed: int,
    z0N: Optional[HybridState] = None,
    grid=None,
    workers: int = 1,
    tol: float = DEFAULT_RTOL,
) -> ConvergenceReport:
    """M coupled pairs per N (replicas 0..M-1, fixed seed); sup-norm errors and their rate in N."""
    Ns = [float(v) for v in Ns]
    if not Ns:
        raise ValueError("N-list is empty")
    if M < 2:
        raise ValueError("need at least two replicas")
    z0N = z0 if z0N is None else z0N
    grid = uniform_grid(T) if grid is None else np.asarray(grid, dtype=float)
    rows = []
    for N in Ns:
        tasks = [(net, N, z0N, z0, T, seed, r, grid, tol) for r in range(M)]
        res = sorted(_map(_pair_task, tasks, workers), key=lambda d: d["replica"])
        rows.append(_aggregate(N, res))
    report = ConvergenceReport(T=float(T), seed=seed, rows=rows)
    if len(rows) >= 2:
        report.fit = fit_rate(Ns, [r.err.value for r in rows])
        report.fit_M = fit_rate(Ns, [r.M_scaled.value for r in rows])
        report.fit_gamma = fit_rate(Ns, [r.gamma_scaled.value for r in rows])
    return report


def _aggregate(N, res) -> SweepRow:
    ok = [d for d in res if not d["failed"]]
    bad = [f"replica {d['replica']}: {d['failed']}" for d in res if d["failed"]]
    if not ok:
        nan = Estimate(math.nan, math.nan)
        return SweepRow(N, 0, len(bad), nan, nan, nan, nan, nan, nan, 0, failure_messages=bad)
    col = lambda k: np.array([d[k] for d in ok], dtype=float)
    return SweepRow(
        N=N,
        M=len(ok),
        failures=len(bad),
        err=mean_se(col("err")),
        err_x=mean_se(col("err_x")),
        err_y=mean_se(col("err_y")),
        equal=proportion(int(sum(d["equal"] for d in ok)), len(ok)),
        M_scaled=mean_se(math.sqrt(N) * col("sup_M")),
        gamma_scaled=mean_se(N * col("sup_gamma")),
        identity_failures=int(sum(not d["identity"] for d in ok)),
        qv_T=mean_se(col("qv_T")),
        qv_comp=mean_se(col("qv_comp")),
        qv_limit=mean_se(col("qv_limit")),
        qv_gap=mean_se(col("qv_T") - col("qv_comp")),
        failure_messages=bad,
    )


# ---------------------------------------------------------------------------
# discrete scale


def discrete_equality_probability(
    net: ReactionNetwork,
    z0: HybridState,
    T: float,
    N: float,
    M: int,
    seed: int,
    z0N: Optional[HybridState] = None,
    workers: int = 1,
    tol: float = DEFAULT_RTOL,
) -> Estimate:
    """Fraction of replicas whose discrete event lists coincide exactly, with a Wilson interval."""
    z0N = z0 if z0N is None else z0N
    tasks = [(net, float(N), z0N, z0, T, seed, r, tol) for r in range(M)]
    res = sorted(_map(_equality_task, tasks, workers), key=lambda t: t[0])
    flags = [eq for _, eq, msg in res if not msg]
    if len(flags) < len(res):
        warnings.warn(f"{len(res) - len(flags)} replicas failed and were excluded")
    return proportion(int(sum(flags)), len(flags))


# ---------------------------------------------------------------------------
# CLT


def clt_compare(
    net: ReactionNetwork,
    z0: HybridState,
    T: float,
    N: float,
    M_N: int,
    M_sde: int,
    seed: int,
    z0N: Optional[HybridState] = None,
    workers: int = 1,
    sde_steps: int = 2**12,
    tol: float = DEFAULT_RTOL,
) -> CltBlock:
    """V^N(T) over coupled pairs (replicas 0..M_N-1) against V(T) from the limiting SDE.

    Each SDE run follows its own PDMP path, driven by replica index -(k+1),
    so the SDE sample is independent of the coupled pairs.
    """
    n = net.n
    if M_sde < 10 * n:
        warnings.warn(f"M_sde = {M_sde} is below 10 n = {10 * n}")
    z0N = z0 if z0N is None else z0N
    N = float(N)
    v0 = math.sqrt(N) * (z0N.x - z0.x)
    res = sorted(_map(_vn_task, [(net, N, z0N, z0, T, seed, r, tol) for r in range(M_N)], workers))
    sde = sorted(_map(_sde_task, [(net, z0, T, v0, seed, -(k + 1), sde_steps, tol) for k in range(M_sde)], workers))
    vn = np.array([v for _, v, msg in res if not msg]).reshape(-1, n)
    vs = np.array([v for _, v, msg in sde if not msg]).reshape(-1, n)
    failures = sum(1 for *_, msg in res if msg) + sum(1 for *_, msg in sde if msg)
    ks = [sps.ks_2samp(vn[:, i], vs[:, i], method="asymp") for i in range(n)]
    return CltBlock(
        N=N, T=float(T), M_N=len(vn), M_sde=len(vs), failures=failures, species=tuple(net.continuous),
        mean_N=vn.mean(axis=0), se_N=vn.std(axis=0, ddof=1) / math.sqrt(len(vn)),
        mean_sde=vs.mean(axis=0), se_sde=vs.std(axis=0, ddof=1) / math.sqrt(len(vs)),
        var_N=vn.var(axis=0, ddof=1), var_sde=vs.var(axis=0, ddof=1),
        ks_stat=np.array([k.statistic for k in ks]), ks_p=np.array([k.pvalue for k in ks]),
        samples_N=vn, samples_sde=vs,
    )


CLT_COLUMNS = ("species", "N", "T", "M_N", "M_sde", "mean_N", "se_N", "mean_sde", "se_sde",
               "var_N", "var_sde", "ks_stat", "ks_p")


def clt_csv(c: CltBlock, header_lines=()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CLT_COLUMNS)
    for i, s in enumerate(c.species):
        w.writerow([s] + [_fmt(v) for v in (c.N, c.T, c.M_N, c.M_sde, c.mean_N[i], c.se_N[i], c.mean_sde[i],
                                            c.se_sde[i], c.var_N[i], c.var_sde[i], c.ks_stat[i], c.ks_p[i])])
    return buf.getvalue()


def clt_summary(c: CltBlock) -> str:
    out = [f"CLT at T = {_fmt(c.T)}, N = {_fmt(c.N)}: {c.M_N} coupled pairs, {c.M_sde} SDE runs, {c.failures} failed"]
    for i, s in enumerate(c.species):
        out.append(
            f"  {s}: mean V^N = {c.mean_N[i]:.5g} +- {c.se_N[i]:.3g}, mean V = {c.mean_sde[i]:.5g} +- {c.se_sde[i]:.3g}, "
            f"var V^N = {c.var_N[i]:.5g}, var V = {c.var_sde[i]:.5g}, KS = {c.ks_stat[i]:.4f} (p = {c.ks_p[i]:.4g})"
        )
    return "\n".join(out)


# ---------------------------------------------------------------------------
# goodness of fit


@dataclass(frozen=True)
class GofResult:
    test: str
    statistic: float
    pvalue: float
    dof: Optional[int] = None


def gof_tests(samples, law) -> GofResult:
    """Chi-square (Poisson) or KS (exponential, normal) test of ``samples`` against ``law``.

    ``law`` is ``("poisson", mu)``, ``("exponential", rate)`` or ``("normal", mean, variance)``.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    if len(x) < MIN_GOF_SAMPLES:
        raise ValueError(f"need at least {MIN_GOF_SAMPLES} samples, got {len(x)}")
    name = str(law[0]).lower()
    if name == "poisson":
        mu = float(law[1])
        return _chisq_poisson(x, mu)
    if name == "exponential":
        rate = float(law[1])
        r = sps.kstest(x, "expon", args=(0.0, 1.0 / rate), method="asymp")
        return GofResult("ks", float(r.statistic), float(r.pvalue))
    if name == "normal":
        m, v = float(law[1]), float(law[2])
        r = sps.kstest(x, "norm", args=(m, math.sqrt(v)), method="asymp")
        return GofResult("ks", float(r.statistic), float(r.pvalue))
    raise ValueError(f"unknown law {law[0]!r}")


def _chisq_poisson(x, mu, min_expected: float = 5.0) -> GofResult:
    m = len(x)
    if np.any(x < 0) or np.any(x != np.round(x)):
        return GofResult("chi2", math.inf, 0.0)
    k = x.astype(np.int64)
    top = int(max(k.max(), sps.poisson.isf(1e-9, mu))) + 1
    probs = sps.poisson.pmf(np.arange(top + 1), mu)
    probs[-1] = sps.poisson.sf(top - 1, mu)  # last cell collects the upper tail
    obs = np.bincount(np.minimum(k, top), minlength=top + 1).astype(float)
    # merge cells from both ends until each expected count reaches min_expected
    cells_p, cells_o = [], []
    acc_p = acc_o = 0.0
    for p, o in zip(probs, obs):
        acc_p += p
        acc_o += o
        if acc_p * m >= min_expected:
            cells_p.append(acc_p)
            cells_o.append(acc_o)
            acc_p = acc_o = 0.0
    if acc_p > 0 or acc_o > 0:
        if cells_p:
            cells_p[-1] += acc_p
            cells_o[-1] += acc_o
        else:
            cells_p.append(acc_p)
            cells_o.append(acc_o)
    if len(cells_p) < 2:
        raise ValueError("too few samples to form two chi-square cells")
    exp = np.array(cells_p) * m
    exp *= m / exp.sum()
    r = sps.chisquare(np.array(cells_o), exp)
    return GofResult("chi2", float(r.statistic), float(r.pvalue), len(cells_p) - 1)


# ---------------------------------------------------------------------------
# plotting


def plot_script(report: ConvergenceReport) -> str:
    """A gnuplot script with the data inlined: log-log error plot, histograms for the CLT block."""
    lines = ["# generated by msgn; run with: gnuplot plot.script", "set terminal pngcairo size 900,600"]
    if report.rows:
        lines += ["set output 'errors.png'", "set logscale xy", "set xlabel 'N'",
                  "set ylabel 'E sup |Z^N - Z|'", "$err << EOD"]
        lines += [f"{_fmt(r.N)} {_fmt(r.err.value)} {_fmt(r.err.se)}" for r in report.rows]
        lines.append("EOD")
        plots = ["$err using 1:2:3 with yerrorbars title 'mean sup error'"]
        f = report.fit
        if f is not None and f.defined:
            plots.append(f"exp({f.intercept!r})*x**({f.slope!r}) title 'fit slope {f.slope:.3f}'")
            n0, e0 = report.rows[0].N, report.rows[0].err.value
            plots.append(f"{e0!r}*(x/{n0!r})**(-0.5) dashtype 2 title 'slope -1/2'")
        lines.append("plot " + ", \\\n     ".join(plots))
        lines.append("unset logscale")
    c = report.clt
    if c is not None:
        for i, s in enumerate(c.species):
            a, b = c.samples_N[:, i], c.samples_sde[:, i]
            lo, hi = float(min(a.min(), b.min())), float(max(a.max(), b.max()))
            edges = np.linspace(lo, hi, 31)
            ha, _ = np.histogram(a, edges, density=True)
            hb, _ = np.histogram(b, edges, density=True)
            mids = 0.5 * (edges[1:] + edges[:-1])
            lines += [f"set output 'clt_{s}.png'", f"set xlabel 'V_{s}(T)'", "set ylabel 'density'",
                      f"$h{i} << EOD"]
            lines += [f"{m!r} {p!r} {q!r}" for m, p, q in zip(mids, ha, hb)]
            lines += ["EOD", f"plot $h{i} using 1:2 with steps title 'V^N(T)', $h{i} using 1:3 with steps title 'V(T)'"]
    return "\n".join(lines) + "\n"
