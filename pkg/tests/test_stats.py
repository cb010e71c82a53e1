import math

import numpy as np
import pytest

from msgn import HybridState, parse_network
from msgn.stats import (
    clt_compare, discrete_equality_probability, fit_rate, gof_tests, mean_se, proportion, strong_error_sweep,
)


def test_fit_exact_power_law():
    Ns = np.array([16, 64, 256, 1024])
    f = fit_rate(Ns, 3.0 * Ns**-0.5)
    assert abs(f.slope + 0.5) < 1e-12
    assert f.constant == pytest.approx(3.0, rel=1e-12)
    assert f.defined and f.points == 4


def test_fit_noisy_power_law():
    rng = np.random.default_rng(0)
    Ns = np.array([16, 64, 256, 1024])
    f = fit_rate(Ns, Ns**-0.5 * np.exp(0.01 * rng.standard_normal(4)))
    assert -0.52 <= f.slope <= -0.48
    assert f.slope_lo <= f.slope <= f.slope_hi


def test_fit_undefined_on_zero_error():
    f = fit_rate([16, 64, 256], [0.1, 0.0, 0.01])
    assert not f.defined and math.isnan(f.slope) and "positive" in f.reason
    with pytest.raises(ValueError):
        fit_rate([16], [0.1])


def test_proportion_wilson():
    e = proportion(10, 10)
    assert e.value == 1.0 and e.se == 0.0 and e.hi == pytest.approx(1.0) and 0.65 < e.lo < 0.75
    e = proportion(50, 100)
    assert e.lo < 0.5 < e.hi and e.hi - 0.5 == pytest.approx(0.5 - e.lo)
    assert math.isnan(proportion(0, 0).value)


def test_mean_se():
    e = mean_se([1.0, 2.0, 3.0])
    assert e.value == 2.0 and e.se == pytest.approx(1 / math.sqrt(3))


@pytest.mark.parametrize("law,draw", [
    (("poisson", 3.0), lambda g, m: g.poisson(3.0, m)),
    (("exponential", 2.0), lambda g, m: g.exponential(0.5, m)),
    (("normal", 1.0, 4.0), lambda g, m: g.normal(1.0, 2.0, m)),
])
def test_gof_calibration(law, draw):
    g = np.random.default_rng(11)
    rejections = sum(gof_tests(draw(g, 300), law).pvalue < 0.05 for _ in range(1000))
    assert abs(rejections / 1000 - 0.05) <= 0.02


def test_gof_rejects_point_mass():
    r = gof_tests(np.ones(100), ("exponential", 1.0))
    assert r.pvalue < 1e-10
    r = gof_tests(np.full(100, 7), ("poisson", 2.0))
    assert r.pvalue < 1e-10


def test_gof_input_checks():
    with pytest.raises(ValueError):
        gof_tests([], ("normal", 0.0, 1.0))
    with pytest.raises(ValueError):
        gof_tests(np.ones(10), ("normal", 0.0, 1.0))
    with pytest.raises(ValueError):
        gof_tests(np.ones(30), ("cauchy", 0.0))


def test_identical_samples_ks_zero():
    from scipy import stats as sps
    x = np.random.default_rng(1).normal(size=500)
    r = sps.ks_2samp(x, x.copy(), method="asymp")
    assert r.statistic == 0.0 and r.pvalue == 1.0


def test_clt_anchor_pure_birth(pure_birth):
    # V^N(T) = (P(NT) - NT)/sqrt(N) is close to Normal(0, T); the SDE is a Brownian motion
    z = HybridState([0.0], [])
    c = clt_compare(pure_birth, z, 1.0, 4096, 1000, 1000, seed=2, sde_steps=16)
    assert gof_tests(c.samples_N[:, 0], ("normal", 0.0, 1.0)).pvalue > 0.01
    assert gof_tests(c.samples_sde[:, 0], ("normal", 0.0, 1.0)).pvalue > 0.01
    assert c.ks_p[0] > 0.01 and c.failures == 0


def test_clt_warns_on_small_sde_sample(pure_birth):
    z = HybridState([0.0], [])
    with pytest.warns(UserWarning, match="below 10 n"):
        clt_compare(pure_birth, z, 0.5, 64, 25, 5, seed=0, sde_steps=8)


def test_equality_exact_for_state_independent_switching(telegraph):
    z = HybridState([1.0], [0])
    e = discrete_equality_probability(telegraph, z, 5.0, 16, 100, seed=4)
    assert e.value == 1.0 and e.count == 100


def test_equality_exact_without_discrete_firing():
    net = parse_network("species continuous: X\nspecies discrete: G\n"
                        "reaction p class=C h=[+1] rate = 1\nreaction s class=D h=[0] e=[+1] rate = 0*X\n")
    e = discrete_equality_probability(net, HybridState([0.0], [0]), 3.0, 8, 50, seed=0)
    assert e.value == 1.0


def test_equality_improves_with_N(feedback):
    z = HybridState([1.0], [0])
    lo = discrete_equality_probability(feedback, z, 5.0, 4, 200, seed=1)
    hi = discrete_equality_probability(feedback, z, 5.0, 1024, 200, seed=1)
    assert lo.value < 1.0
    assert hi.value >= lo.value


def test_sweep_independent_of_workers(telegraph):
    z = HybridState([1.0], [1])
    kw = dict(T=2.0, Ns=[16, 64], M=6, seed=9)
    a = strong_error_sweep(telegraph, z, workers=1, **kw)
    b = strong_error_sweep(telegraph, z, workers=2, **kw)
    assert a.to_csv() == b.to_csv()
    assert a.summary() == b.summary()
    assert len(a.rows) == 2 and a.fit is not None and a.rows[0].identity_failures == 0


def test_report_outputs(telegraph):
    z = HybridState([1.0], [1])
    r = strong_error_sweep(telegraph, z, 1.0, [16, 64, 256], 4, seed=0)
    text = r.to_csv(header_lines=["msgn test"])
    lines = text.splitlines()
    assert lines[0] == "# msgn test" and lines[1].startswith("N,M,failures")
    assert len(lines) == 5
    assert "fit error: slope" in r.summary()
    assert "$err << EOD" in r.plot_script()
    with pytest.raises(ValueError):
        strong_error_sweep(telegraph, z, 1.0, [16], 1, seed=0)
