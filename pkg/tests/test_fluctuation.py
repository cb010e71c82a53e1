import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msgn import HybridState, parse_network, simulate_pdmp
from msgn.fluctuation import SdeDivergence, coupled_fluctuation, quadratic_variation, simulate_limit_sde
from msgn.models import TELEGRAPH, TELEGRAPH_FEEDBACK
from msgn.paths import read_path_csv, uniform_grid

from test_jump_sim import MIXED

CONSTANT_NOISE = """\
species continuous: X
reaction prod class=C h=[+1] rate = 2
reaction deg class=C h=[-1] rate = 1
"""


def test_zero_rates_zero_components():
    net = parse_network("species continuous: X, W\nspecies discrete: G\n"
                        "reaction r class=C h=[+1, 0] rate = 0*X\nreaction s class=D h=[0, +1] e=[+1] rate = 0\n")
    z = HybridState([1.0, 2.0], [1])
    d = coupled_fluctuation(net, 100, z, z, 3.0, seed=0)
    for arr in (d.V, d.U, d.sqrtN_gamma, d.zeta, d.xi, d.drift_integral, d.qv):
        assert np.all(arr == 0)


def test_pure_birth_martingale_variance(pure_birth):
    N, T = 50.0, 1.0
    z = HybridState([0.0], [])
    grid = np.array([0.0, 0.5, 1.0])
    U = []
    for seed in range(10_000):
        d = coupled_fluctuation(pure_birth, N, z, z, T, seed, grid=grid, full=True)
        count = d.jump.n_events
        assert d.U[-1, 0] == pytest.approx((count - N * T) / math.sqrt(N), abs=1e-9)
        U.append(d.U[-1, 0])
    assert abs(np.var(U, ddof=1) / T - 1.0) <= 0.05


def test_no_discrete_reactions_no_discrete_terms(pure_birth):
    z = HybridState([0.3], [])
    for seed in range(5):
        d = coupled_fluctuation(pure_birth, 30, z, z, 2.0, seed)
        assert np.all(d.xi == 0) and np.all(d.sqrtN_gamma == 0) and d.sup_gamma == 0
    net = parse_network(CONSTANT_NOISE.replace("rate = 1", "rate = X"))
    d = coupled_fluctuation(net, 30, HybridState([1.0], []), HybridState([1.0], []), 2.0, 3)
    assert np.all(d.xi == 0) and np.all(d.sqrtN_gamma == 0)


def test_quadratic_variation_examples(pure_birth):
    z = HybridState([0.0], [])
    d = coupled_fluctuation(pure_birth, 40, z, z, 2.0, seed=1)
    assert quadratic_variation(d, 0, 0, 0.0) == 0.0
    assert quadratic_variation(d, 0, 0, 2.0) == d.jump.n_events / 40
    with pytest.raises(IndexError):
        quadratic_variation(d, 1, 0, 2.0)
    with pytest.raises(ValueError):
        quadratic_variation(d, 0, 0, 0.123)
    qs = [quadratic_variation(coupled_fluctuation(pure_birth, 40, z, z, 2.0, s), 0, 0, 2.0) for s in range(400)]
    assert abs(np.mean(qs) - 2.0) <= 4 * np.std(qs) / math.sqrt(400)


def test_quadratic_variation_symmetric():
    net = parse_network(MIXED)
    z = HybridState([0.5, 0.2], [1])
    d = coupled_fluctuation(net, 80, z, z, 2.0, seed=4)
    for t in d.t[::16]:
        assert quadratic_variation(d, 0, 1, t) == quadratic_variation(d, 1, 0, t)
    diag = d.qv[:, [0, 1], [0, 1]]
    assert np.all(diag >= 0) and np.all(np.diff(diag, axis=0) >= 0)


@given(st.integers(0, 2**31), st.sampled_from([4, 64, 1024]), st.sampled_from(["tel", "fb", "mixed"]))
def test_decomposition_identity(seed, N, which):
    src = {"tel": TELEGRAPH, "fb": TELEGRAPH_FEEDBACK, "mixed": MIXED}[which]
    net = parse_network(src)
    if which == "mixed":
        zN, z = HybridState([0.6, 0.2], [1]), HybridState([0.5, 0.2], [1])
    else:
        zN, z = HybridState([1.2], [1]), HybridState([1.0], [1])
    d = coupled_fluctuation(net, N, zN, z, 3.0, seed, replica=seed % 7)
    res = np.abs(d.residual())
    assert np.all(res <= d.tolerance()), float(res.max())
    assert np.allclose(d.V[0], math.sqrt(N) * (zN.x - z.x))


def test_sup_error_covers_grid(feedback):
    z = HybridState([1.0], [0])
    d = coupled_fluctuation(feedback, 64, z, z, 5.0, seed=3)
    on_grid = np.abs(d.jump.grid_x - d.pdmp.grid_x)[:, 0] + np.abs(d.jump.grid_y - d.pdmp.grid_y)[:, 0]
    assert d.sup_err >= on_grid.max()
    assert d.sup_err >= d.sup_err_x and d.sup_err >= d.sup_err_y


def test_decomposition_csv(tmp_path):
    net = parse_network(MIXED)
    z = HybridState([0.5, 0.2], [1])
    d = coupled_fluctuation(net, 50, z, z, 1.0, seed=2, grid=uniform_grid(1.0, 8))
    path = tmp_path / "dec.csv"
    d.write_csv(path, ["hello"])
    assert path.read_text().startswith("# hello\n")
    header, cols = read_path_csv(path)
    assert header[:3] == ["t", "VN_A", "VN_B"]
    assert "qv_A_B" in header and "drift_integral_B" in header
    assert np.allclose(cols["UN_B"], d.U[:, 1])


# ---------------------------------------------------------------------------
# limiting SDE


def test_sde_frozen_when_noise_and_drift_vanish():
    net = parse_network("species continuous: X\nreaction r class=C h=[+1] rate = 0*X\n")
    p = simulate_pdmp(net, HybridState([1.0], []), 2.0, seed=0)
    s = simulate_limit_sde(net, p, [0.7], seed=3)
    assert np.all(s.V == 0.7)
    assert np.all(s.theta == 0.0)


def _em_error(net, p, steps, T):
    grid = uniform_grid(T, steps)
    s = simulate_limit_sde(net, p, [1.5], grid, dB=np.zeros((steps, 2)))
    return abs(s.V[-1, 0] - 1.5 * math.exp(-T))


def test_sde_linear_ode_order_one(telegraph):
    T = 2.0
    p = simulate_pdmp(telegraph, HybridState([1.0], [1]), T, seed=1)
    errs = [_em_error(telegraph, p, m, T) for m in (2**8, 2**9, 2**10, 2**11)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders >= 0.8) & (orders <= 1.2))
    assert errs[-1] < 2.0 / 2**11


def test_sde_ito_isometry():
    net = parse_network(CONSTANT_NOISE)
    T = 1.5
    p = simulate_pdmp(net, HybridState([1.0], []), T, seed=0)
    grid = uniform_grid(T, 64)
    v = np.array([simulate_limit_sde(net, p, [0.0], grid, seed=s).V[-1, 0] for s in range(10_000)])
    assert abs(v.var(ddof=1) / (3 * T) - 1) <= 0.05


def test_random_clocks(telegraph):
    bounded = parse_network(TELEGRAPH.replace("domain G = 0..1", "domain G = 0..1\ndomain P = 0..4\nbound 4"))
    p = simulate_pdmp(bounded, HybridState([1.0], [1]), 3.0, seed=6)
    s = simulate_limit_sde(bounded, p, [0.0], seed=1)
    assert s.reaction_ids == ("prod", "deg")
    assert np.all(np.diff(s.theta, axis=0) >= 0)
    assert np.all(s.theta[-1] <= 4.0 * 3.0)
    # left-point clocks: each jump of the path costs at most (rate bound) * dt
    dt = s.t[1] - s.t[0]
    slack = 4.0 * dt * (len(p.event_t) + 1)
    assert np.all(np.abs(s.theta[-1] - p.grid_comp[-1, :2]) <= slack)
    assert s.dB.shape == (len(s.t) - 1, 2)


def test_sde_divergence_detected():
    net = parse_network("species continuous: X\nreaction r class=C h=[+1] rate = 1000*X\n")
    # x stays at 0 while the linearised drift is +1000
    p = simulate_pdmp(net, HybridState([0.0], []), 1.0, seed=0)
    with pytest.raises(SdeDivergence):
        simulate_limit_sde(net, p, [1.0], uniform_grid(1.0, 8), seed=0)


def test_sde_bad_inputs(telegraph):
    p = simulate_pdmp(telegraph, HybridState([1.0], [1]), 1.0, seed=0)
    with pytest.raises(ValueError):
        simulate_limit_sde(telegraph, p, [np.nan])
    with pytest.raises(ValueError):
        simulate_limit_sde(telegraph, p, [0.0], grid=np.array([0.0, 2.0]))
