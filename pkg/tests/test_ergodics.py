import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochac import ergodics as erg
from stochac.errors import EstimationError, UsageError
from stochac.integrator import SimConfig
from stochac.spectral import SpectralGrid

SMALL = SimConfig(K=16, dt=1e-3, T=1.0, record_stride=10)


def test_observable_parsing_and_values():
    o = erg.parse_observable("bounded_custom:0@10")
    assert (o.kind, o.order, o.clip) == ("bounded_custom", 0.0, 10.0)
    g = SpectralGrid(8)
    assert o(g, g.mode_field(1, 25.0)) == 10.0
    assert erg.parse_observable("h_norm")(g, g.mode_field(1, 2.0)) == pytest.approx(2.0)
    m = erg.parse_observable("mode_amplitude:2")
    assert m(g, g.mode_field(2, 1.0)) == pytest.approx(1 / math.sqrt(2))
    with pytest.raises(UsageError):
        erg.parse_observable("entropy")
    with pytest.raises(UsageError):
        erg.parse_observable("bounded_custom:1")
    assert [o.name for o in erg.default_panel()] == ["clipped_h", "mode1", "clipped_v"]


def test_occupation_average_trapezoid_exact_on_lines():
    t = np.linspace(0, 2, 201)
    assert erg.occupation_average(t, 3 * t + 1) == pytest.approx(4.0, rel=1e-14)
    with pytest.raises(UsageError):
        erg.occupation_average(np.linspace(0, 1, 10), np.ones(10))


def test_occupation_stats_bounds():
    s = erg.OccupationStats(1.0, [0.1, 0.3], (0.0, 1.0))
    assert s.mean == pytest.approx(0.2) and s.se == pytest.approx(0.1)
    with pytest.raises(EstimationError):
        erg.OccupationStats(1.0, [2.0], (0.0, 1.0))


def test_twin_agreement():
    a = erg.OccupationStats(1.0, [0.0, 2.0])
    b = erg.OccupationStats(1.0, [0.5, 2.5])
    ok, z = erg.twin_agreement(a, b)
    assert ok and z == pytest.approx(0.5 / math.sqrt(2))


def test_occupation_ensemble_runs():
    out = erg.occupation_ensemble(SMALL, np.zeros(16), 8, erg.default_panel())
    assert set(out) == {"clipped_h", "mode1", "clipped_v"}
    assert all(s.M == 8 and s.T == 1.0 for s in out.values())


def test_moment_estimate_guards():
    with pytest.raises(UsageError):
        erg.moment_estimate(SMALL, p=0.5, n_paths=4)
    with pytest.raises(UsageError):
        erg.moment_estimate(SMALL, p=0.3, n_paths=4, T_values=(0.5,))
    st_ = erg.moment_estimate(SMALL.with_(K=8), p=0.5, n_paths=8, T_values=(1.0, 2.0),
                              unvalidated=True)
    assert not st_.validated and len(st_.rows) == 6


def test_wilson_interval_oracle():
    assert np.allclose(erg.wilson_interval(0, 10), (0.0, 0.2775401687666166))
    assert np.allclose(erg.wilson_interval(5, 10), (0.23658959361548731, 0.7634104063845126))


def test_hitting_times():
    norms = np.array([[5, 1, 0.1], [0.2, 9, 9], [7, 8, 9], [np.nan, np.nan, np.nan]])
    rec = erg.hitting_times(norms, 0.5)
    assert rec.taus.tolist() == [3, 1, 4, 4]
    assert rec.censored.tolist() == [False, False, True, True]


def _geometric_record(q, n=20_000, n_max=30, seed=0):
    taus = np.random.default_rng(seed).geometric(1 - q, n)
    cens = taus > n_max
    return erg.HittingRecord(1.0, 0.5, np.where(cens, n_max + 1, taus), cens, n_max)


def test_recurrence_tail_recovers_geometric_rate():
    fit = erg.recurrence_tail(_geometric_record(0.4), min_count=30)
    assert fit.fitted and fit.r2 > 0.99
    assert fit.q == pytest.approx(0.4, rel=0.05)


def test_recurrence_tail_all_censored():
    rec = erg.HittingRecord(0.0, 0.5, np.full(5, 11), np.ones(5, bool), 10)
    with pytest.raises(EstimationError):
        erg.recurrence_tail(rec)


def test_exp_moment_verdicts():
    rec = _geometric_record(0.4)
    q = 0.4
    fin = erg.exp_moment_tau(rec, -0.5 * math.log(q), q)
    # E[q^{-tau/2}] = (1-q) q^{-1/2} / (1 - q^{1/2}) for a geometric tau
    exact = (1 - q) * q**-0.5 / (1 - q**0.5)
    assert fin.status == "finite" and fin.estimate == pytest.approx(exact, rel=0.05)
    assert erg.exp_moment_tau(rec, -2 * math.log(q), q).status == "divergent"
    with pytest.raises(UsageError):
        erg.exp_moment_tau(rec, 0.0, q)


def test_scgf_at_zero_is_exactly_zero():
    L = np.random.default_rng(0).normal(size=100)
    assert erg.scgf(L, [0.0], 3.0).values[0] == 0.0


@given(st.floats(-2, 2), st.floats(0.1, 2))
def test_legendre_of_quadratic_is_exact(m, s2):
    lam = np.linspace(-3, 3, 21)
    curve = erg.SCGF(lam, m * lam + 0.5 * s2 * lam**2, 1.0, np.zeros(21))
    r = np.linspace(m - s2, m + s2, 11)
    rate = erg.legendre(curve, r)
    assert np.allclose(rate.values, (r - m) ** 2 / (2 * s2), atol=1e-10)
    r_min, j_min = rate.minimum()
    assert r_min == pytest.approx(m) and abs(j_min) < 1e-12


def test_legendre_rejects_concave():
    lam = np.linspace(-1, 1, 5)
    with pytest.raises(EstimationError):
        erg.legendre(erg.SCGF(lam, -lam**2, 1.0, np.zeros(5)), [0.0])


def test_gaussian_sample_scgf():
    # L ~ N(m, s^2/T): Lambda(lam) = lam m + lam^2 s^2 / 2
    rng = np.random.default_rng(2)
    T, m, s = 4.0, 0.3, 0.5
    L = rng.normal(m, s / math.sqrt(T), 200_000)
    lam = np.linspace(-2, 2, 11)
    curve = erg.scgf(L, lam, T)
    assert np.allclose(curve.values, lam * m + 0.5 * lam**2 * s**2, atol=5e-3)
    wide = erg.default_lambda_grid(L, T, 11)
    assert wide[0] == -wide[-1] and wide[-1] > 0 and wide[5] == 0.0
    d2 = np.diff(curve.values, 2)
    assert np.all(d2 >= -1e-12)
    assert not np.any(curve.low_ess)


def test_rate_grid_contains_mean():
    L = np.array([0.0, 1.0, 5.0])
    assert 2.0 in erg.rate_grid(L, 11)


def test_hill_on_pareto_and_exponential():
    rng = np.random.default_rng(0)
    ti = erg.tail_index(rng.pareto(1.5, 100_000) + 1, 0.05)
    assert ti.estimate == pytest.approx(1.5, abs=0.1)
    assert ti.ci[0] < ti.estimate < ti.ci[1] and not ti.light_tail
    light = erg.tail_index(rng.exponential(size=100_000), 0.01)
    assert light.light_tail and light.estimate > 4


def test_tail_index_guards():
    with pytest.raises(UsageError):
        erg.tail_index(np.ones(10))
    with pytest.raises(EstimationError):
        erg.tail_index(np.ones(1000))
    with pytest.raises(UsageError):
        erg.tail_index(np.arange(1000.0))


def test_moment_stability_prefixes():
    assert erg.moment_stability([1.0, 3.0, 5.0, 7.0], 1, [2, 4]) == [2.0, 4.0]


def test_constant_trajectory_average():
    t = np.linspace(0, 3, 301)
    assert erg.occupation_average(t, np.full(301, 0.7)) == pytest.approx(0.7, rel=1e-15)


def test_zero_noise_zero_start_moment_is_zero():
    st_ = erg.moment_estimate(SMALL.with_(K=8, zero_noise=True), p=0.3, n_paths=4,
                              T_values=(1.0,), x0_set={"zero": np.zeros(8)})
    assert st_.rows[0].estimate == 0.0


def test_hitting_level_extremes_and_median():
    norms = np.abs(np.random.default_rng(0).normal(size=(1001, 6))) + 1e-3
    assert np.all(erg.hitting_times(norms, np.inf).taus == 1)
    assert np.all(erg.hitting_times(norms, 0.0).censored)
    med = np.median(norms[:, 0])
    assert np.mean(erg.hitting_times(norms, med).taus == 1) >= 0.5


def test_degenerate_tail_fit_skipped():
    rec = erg.HittingRecord(1.0, 0.5, np.ones(50, int), np.zeros(50, bool), 10)
    fit = erg.recurrence_tail(rec)
    assert not fit.fitted and fit.note and np.all(fit.p_tail == 0)


def test_level_monotonicity():
    rng = np.random.default_rng(4)
    norms = np.abs(rng.standard_cauchy((20_000, 40)))
    s1 = erg.recurrence_tail(erg.hitting_times(norms, 0.1), 5).slope
    s2 = erg.recurrence_tail(erg.hitting_times(norms, 0.2), 5).slope
    assert s2 <= s1


def test_exp_moment_small_lambda_tends_to_one():
    rec = _geometric_record(0.3)
    assert erg.exp_moment_tau(rec, 1e-9, 0.3).estimate == pytest.approx(1.0, abs=1e-7)


def test_scgf_slope_at_zero_is_mean():
    L = np.random.default_rng(1).gamma(2.0, 0.1, 5000)
    h = 1e-4
    c = erg.scgf(L, [-h, h], 10.0).values
    se = L.std() / math.sqrt(L.size)
    assert abs((c[1] - c[0]) / (2 * h) - L.mean()) <= 3 * se


def test_flat_scgf_rate():
    lam = np.linspace(-1, 1, 11)
    rate = erg.legendre(erg.SCGF(lam, np.zeros(11), 1.0, np.zeros(11)), [0.0, 0.5])
    assert rate.values[0] == 0.0
    assert rate.interior[0] and not rate.interior[1]  # off-grid: sup at the boundary
