import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ordfrag.links import Link, link_cdf, link_quantile, log_interval_prob, truncated_draws, truncated_sample

LINKS = ["probit", "logit", "cloglog"]


def test_symmetric_links_at_zero():
    assert link_cdf("probit", 0.0) == 0.5
    assert link_cdf("logit", 0.0) == 0.5


def test_probit_matches_high_precision_cdf():
    mp.mp.dps = 40
    for z in np.linspace(-8, 8, 33):
        ref = float(mp.ncdf(mp.mpf(float(z))))
        assert abs(link_cdf("probit", z) - ref) <= 1e-15 + 1e-13 * ref
    assert abs(link_cdf("probit", 0.87602) - 0.80949041940194797) < 1e-12


def test_probit_log_cdf_deep_tail():
    mp.mp.dps = 40
    for z in (-10.0, -25.0, -38.0, -60.0):
        ref = float(mp.log(mp.ncdf(z)))
        assert Link("probit").logcdf(np.array([z]))[0] == pytest.approx(ref, rel=1e-12)


def test_quantile_closed_forms():
    assert link_quantile("probit", 0.5) == 0.0
    p = 1.0 / (1.0 + np.exp(-1.0))
    assert link_quantile("logit", p) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("kind", LINKS)
def test_quantile_round_trip(kind):
    z = np.linspace(-6, 6, 121)
    link = Link(kind)
    if kind == "cloglog":
        z = z[z <= 2.5]  # near F = 1 the inverse needs isf
    np.testing.assert_allclose(link.quantile(link.cdf(z)), z, atol=1e-9)
    p = np.linspace(0.001, 0.999, 99)
    np.testing.assert_allclose(link.cdf(link.quantile(p)), p, atol=1e-12)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, np.nan])
def test_quantile_rejects_outside_unit_interval(p):
    with pytest.raises(ValueError):
        link_quantile("probit", p)


def test_cloglog_is_asymmetric():
    z = np.array([0.3, 1.0, 2.0])
    gap = np.abs(link_cdf("cloglog", -z) - (1 - link_cdf("cloglog", z)))
    assert np.all(gap > 1e-3)


def test_unknown_link():
    with pytest.raises(ValueError):
        Link("cauchit")


@pytest.mark.parametrize("kind", LINKS)
@given(z=st.floats(-30, 30), h=st.floats(1e-3, 5))
@settings(max_examples=60, deadline=None)
def test_cdf_monotone_and_survival_consistent(kind, z, h):
    link = Link(kind)
    assert link.cdf(z + h) >= link.cdf(z)
    assert link.cdf(z) + link.sf(z) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("kind", LINKS)
def test_log_interval_prob_matches_direct_difference(kind):
    link = Link(kind)
    lo = np.array([-3.0, -1.0, 0.5, 2.0, -np.inf, 1.0])
    hi = np.array([-2.0, 0.5, 1.5, 3.0, 0.0, np.inf])
    direct = np.log(link.cdf(hi) - link.cdf(lo))
    np.testing.assert_allclose(log_interval_prob(link, lo, hi), direct, rtol=1e-10)


def test_log_interval_prob_far_upper_tail():
    mp.mp.dps = 50
    got = log_interval_prob("probit", np.array([9.0]), np.array([9.5]))[0]
    ref = float(mp.log(mp.ncdf(9.5) - mp.ncdf(9.0)))
    assert got == pytest.approx(ref, rel=1e-10)


def test_untruncated_sample_mean():
    draws = truncated_sample("probit", 0.0, -np.inf, np.inf, seed=1, size=100_000)
    assert abs(draws.mean()) < 0.01


def test_half_normal_mean():
    draws = truncated_sample("probit", 0.0, 0.0, np.inf, seed=2, size=100_000)
    assert draws.min() > 0
    assert draws.mean() == pytest.approx(0.79788456080286536, abs=0.01)


@pytest.mark.parametrize("kind,lo,hi,mean", [("probit", -0.5, 1.2, 0.3), ("logit", 1.0, 4.0, -1.0),
                                              ("cloglog", -2.0, 0.5, 0.0), ("probit", 5.0, 6.0, 0.0)])
def test_truncated_ks(kind, lo, hi, mean):
    link = Link(kind)
    draws = truncated_sample(kind, mean, lo, hi, seed=3, size=10_000)
    assert np.all((draws > lo) & (draws <= hi))
    a, b = link.cdf(lo - mean), link.cdf(hi - mean)

    def cdf(v):
        return (link.cdf(v - mean) - a) / (b - a)

    assert stats.kstest(draws, cdf).pvalue > 0.01


def test_truncated_sample_errors_and_determinism():
    with pytest.raises(ValueError):
        truncated_sample("probit", 0.0, 1.0, 1.0, seed=0)
    a = truncated_sample("logit", 0.2, -1, 2, seed=9, size=5)
    b = truncated_sample("logit", 0.2, -1, 2, seed=9, size=5)
    np.testing.assert_array_equal(a, b)
    assert isinstance(truncated_sample("probit", 0, -1, 1, seed=1), float)


def test_truncated_draws_vectorised_bounds():
    rng = np.random.default_rng(0)
    lo = np.array([-np.inf, 0.0, 3.0])
    hi = np.array([-3.0, 0.1, np.inf])
    d = truncated_draws("probit", np.zeros(3), lo, hi, rng)
    assert np.all((d > lo) & (d <= hi))
