import math

import mpmath
import numpy as np
import pytest
from scipy.optimize import linprog

from mpqkd.channel import ChannelParams
from mpqkd.decoy import (EstimationError, GainView, SourceModel, YieldBounds, _poisson_table, _program,
                         chernoff_expectation_bounds, estimate_bounds, expected_gains, finite_key_length,
                         gains_yield_transform, intensity_posterior, photon_pair_prob, posterior_matrix,
                         sampling_deviation, solve_lp_max_E11, solve_lp_min_M11, yield_lp)
from mpqkd.montecarlo import X, Z, ProtocolParams, TallyTable, expected_tally

SOURCE = SourceModel(0.1, 0.5, 0.4, 0.2, 0.4)


def test_photon_pair_prob():
    assert photon_pair_prob((0, 0), (0.3, 0.7)) == pytest.approx(math.exp(-1.0), rel=1e-14)
    assert photon_pair_prob((1, 1), (1, 1)) == pytest.approx(math.exp(-2), rel=1e-14)
    total = sum(photon_pair_prob((a, b), (0.4, 0.9)) for a in range(30) for b in range(30))
    assert total == pytest.approx(1.0, abs=1e-14)


def test_posterior_two_level_bayes():
    mu = 0.5
    src = SourceModel(0.1, mu, 0.5, 0.0, 0.5)
    # Z party prior over (vacuum pair, signal pair) is (1/4, 1/2); two-line Bayes by hand
    p0, pm = 0.25, 0.5
    oracle = (p0 / (p0 + pm * math.exp(-mu))) ** 2 / (pm * math.exp(-mu) / (p0 + pm * math.exp(-mu))) ** 2
    ratio = intensity_posterior((0, 0), (0, 0), src, Z) / intensity_posterior((mu, mu), (0, 0), src, Z)
    assert ratio == pytest.approx(oracle, rel=1e-13)
    assert ratio == pytest.approx((p0 / pm) ** 2 * math.exp(2 * mu), rel=1e-13)


def test_posterior_single_setting():
    src = SourceModel(0.1, 0.5, 0.0, 0.0, 1.0)
    for k in ((0, 0), (1, 2), (4, 4)):
        assert intensity_posterior((1.0, 1.0), k, src, X) == pytest.approx(1.0)


def test_posterior_concentrates_on_signal():
    src = SourceModel(0.01, 0.6, 0.3, 0.4, 0.3)
    vals = [intensity_posterior((0.6, 0.6), (k, k), src, Z) for k in range(1, 8)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert vals[-1] > 0.999


def test_posterior_matrix_is_a_distribution():
    post = posterior_matrix(SOURCE, X, 6)
    assert np.allclose(post.sum(axis=(0, 1)), 1.0, atol=1e-14)


def test_chernoff_trivial_cases():
    assert chernoff_expectation_bounds(1000, 1e-7, "asymptotic") == (1000.0, 1000.0)
    lo, hi = chernoff_expectation_bounds(0, 1e-3)
    assert lo == 0.0 and hi > 0


def test_chernoff_against_direct_inversion():
    x, eps = 1e4, 1e-6
    lo, hi = chernoff_expectation_bounds(x, eps)
    L = mpmath.log(1 / mpmath.mpf(eps))
    # mean m above x: exp(-(m - x)^2 / (2m)) = eps; below x: exp(-(x - m)^2 / (x + m)) = eps
    hi_oracle = mpmath.findroot(lambda m: (m - x) ** 2 / (2 * m) - L, x + 500)
    lo_oracle = mpmath.findroot(lambda m: (x - m) ** 2 / (x + m) - L, x - 500)
    assert hi == pytest.approx(float(hi_oracle), rel=1e-12)
    assert lo == pytest.approx(float(lo_oracle), rel=1e-12)
    width = hi - lo
    assert 1.0 < width / math.sqrt(x * math.log(1 / eps)) < 4.0
    lo2, hi2 = chernoff_expectation_bounds(4 * x, eps)
    assert (hi2 - lo2) / width == pytest.approx(2.0, rel=0.02)


def test_sampling_deviation_shrinks():
    assert sampling_deviation(1e6, 1e4) < sampling_deviation(1e6, 1e3)
    assert sampling_deviation(0, 10) == math.inf


def _expected(distance, N, **kw):
    proto = ProtocolParams(mu=0.5, nu=0.1, s_0=0.4, s_nu=0.2, s_mu=0.4, N=N, **kw)
    ch = ChannelParams(total_distance_km=distance)
    return proto, ch, expected_tally(proto, ch)


def test_zero_tally_gives_zero_bounds():
    t = TallyTable(0.1, 0.5)
    assert solve_lp_min_M11(t, SOURCE).value == 0.0
    assert solve_lp_max_E11(t, SOURCE).value == 0.0


def test_signal_only_tally_is_vacuous():
    _, _, t = _expected(50, 1e9)
    seen = np.zeros((3, 3), dtype=bool)
    seen[2, 2] = True
    t.seen = {Z: seen, X: seen}
    assert solve_lp_min_M11(t, SOURCE, Z).value == 0.0


@pytest.mark.parametrize("basis,sense", [(Z, "min"), (X, "min"), (X, "max")])
def test_decoy_program_matches_scipy(basis, sense):
    _, _, t = _expected(60, 1e10)
    counts = t.M[basis] if sense == "min" else t.E[basis]
    A, lo, hi, names, k_max, _, total = _program(t, SOURCE, basis, counts, "asymptotic", 1e-7, None, None)
    n = (k_max + 1) ** 2
    c = np.zeros(n)
    c[k_max + 2] = 1.0 if sense == "min" else -1.0
    # equalities are thinner than HiGHS's default tolerance unless each row is rescaled
    sc = np.abs(A).max(axis=1)
    A_s, lo_s, hi_s = A / sc[:, None], lo / total / sc, hi / total / sc
    ref = linprog(c, A_ub=np.vstack([A_s, -A_s]), b_ub=np.concatenate([hi_s, -lo_s]), bounds=[(0, 1)] * n,
                  method="highs")
    assert ref.status == 0
    ours = (solve_lp_min_M11 if sense == "min" else solve_lp_max_E11)(t, SOURCE, basis)
    ref_value = total * (ref.fun if sense == "min" else -ref.fun)
    assert ours.value == pytest.approx(max(ref_value, 0.0), rel=1e-8, abs=1e-9 * total)
    assert ours.gap < 1e-8


def test_bounds_bracket_truth_on_expected_tally():
    _, _, t = _expected(100, 1e11)
    b = estimate_bounds(t, SOURCE)
    assert b.M11_lower <= t.M11[Z].sum() * (1 + 1e-9)
    assert b.E11_upper >= t.E11[X].sum() * (1 - 1e-9)
    assert b.M11_lower_X <= t.M11[X].sum() * (1 + 1e-9)
    assert b.lp_gap < 1e-8


def test_gain_transform():
    t = TallyTable(0.1, 0.5)
    view = gains_yield_transform(t, SOURCE, 1e6, Z)
    assert np.all(view.gains == 0)
    with pytest.raises(ValueError):
        gains_yield_transform(t, SOURCE, 0.0, Z)


def _yield_view(c):
    _, _, t = _expected(40, 1e10)
    return gains_yield_transform(t, SOURCE, c * t.pairs, Z)


def test_rescaling_invariance():
    base = None
    for c in (1.0, 0.5, 2.0, 10.0):
        value, _, n_inf = yield_lp(_yield_view(c), 8, sense="min")
        m11 = value * n_inf[1, 1]
        if base is None:
            base = m11
        assert m11 == pytest.approx(base, rel=1e-8)


def test_square_round_trip():
    # three levels per party and k_max = 2: nine gains pin nine yields
    levels = np.array([0.0, 0.2, 0.9])
    rng = np.random.default_rng(4)
    Y = rng.uniform(0.01, 0.8, size=(3, 3))
    gains = expected_gains(Y, levels)
    view = GainView(gains, np.full((3, 3), 1 / 9), 1.0, levels)
    lo, y_lo, _ = yield_lp(view, 2, sense="min", upper=np.ones(9))
    hi, y_hi, _ = yield_lp(view, 2, sense="max", upper=np.ones(9))
    assert lo == pytest.approx(Y[1, 1], abs=1e-10)
    assert hi == pytest.approx(Y[1, 1], abs=1e-10)
    assert np.allclose(y_lo, Y, atol=1e-9)


def test_key_length_edges():
    zero = YieldBounds(0.0, 0.0, 0.0, 0.5, "asymptotic", 1e-7)
    assert finite_key_length(100.0, 1.0, zero, 1.1) == 0.0
    bad = YieldBounds(10.0, 10.0, 0.1, 0.6, "asymptotic", 1e-7, M11_mumu_lower=10.0, E_ph_upper=6.0)
    assert finite_key_length(100.0, 0.0, bad, 1.1) == 0.0


def test_counts_with_zero_prior_rejected():
    src = SourceModel(0.1, 0.5, 0.5, 0.0, 0.5)
    t = TallyTable(0.1, 0.5)
    t.M[Z][1, 1] = 5
    t.M[Z][2, 2] = 50
    with pytest.raises(EstimationError):
        solve_lp_min_M11(t, src, Z)


def test_finite_mode_is_looser():
    _, _, t = _expected(50, 1e9)
    a = estimate_bounds(t, SOURCE, "asymptotic")
    f = estimate_bounds(t, SOURCE, "finite", 1e-7)
    assert f.M11_lower <= a.M11_lower and f.E11_upper >= a.E11_upper
    assert f.e11_ph_upper >= a.e11_ph_upper
