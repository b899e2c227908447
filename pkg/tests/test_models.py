import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordfrag.models import (
    CATALOG,
    ModelError,
    ModelSpec,
    NegativeProbabilityError,
    ParamSet,
    acat_logit_probs,
    acat_probs,
    category_probs,
    cum_probs,
    cum_to_lognormal,
    exceedance_curve,
    exceedance_probs,
    from_unconstrained,
    linear_predictor,
    log_category_probs,
    log_jacobian,
    parse_model,
    seq_exceedance_chain,
    seq_probs,
    to_unconstrained,
)

from conftest import BETA_TILDE, CHAIN_02, CUM_02, ETA_02, P_CUM_02, P_SEQ_02, TABLE_BETA, TABLE_TAU, THETA

X02 = np.log(0.2)


def random_params(spec, rng):
    tau = np.sort(rng.normal(0, 2, spec.K - 1)) + np.arange(spec.K - 1) * 1e-3
    beta = rng.uniform(0.2, 3, spec.n_slopes) if spec.n_slopes > 1 else rng.uniform(0.2, 3)
    gamma = rng.uniform(-0.5, 0.5) if spec.vh else 0.0
    return ParamSet(tau, beta, gamma)


# -- specs --------------------------------------------------------------------


def test_catalog_has_eleven_parseable_names():
    assert len(CATALOG) == 11
    for name in CATALOG:
        assert parse_model(name).name == name


def test_param_counts():
    assert parse_model("cum").n_params == 5
    assert parse_model("seq+vh+cs").n_params == 9
    assert parse_model("mlogit").n_params == 8


@pytest.mark.parametrize("bad", ["probit-cum", "cum+xx", "cum+vh+vh", ""])
def test_parse_rejects_unknown(bad):
    with pytest.raises(ModelError):
        parse_model(bad)


def test_cumulative_cs_needs_opt_in():
    with pytest.raises(ModelError, match="unsafe"):
        parse_model("cum+cs")
    assert parse_model("cum+cs", unsafe=True).cs


def test_mlogit_rejects_modifiers():
    with pytest.raises(ModelError):
        ModelSpec("mlogit", vh=True)


def test_param_validation():
    spec = parse_model("cum")
    with pytest.raises(ModelError, match="increasing"):
        ParamSet([0.0, 0.0, 1.0, 2.0], 1.0).validate(spec)
    with pytest.raises(ModelError, match="gamma"):
        ParamSet(TABLE_TAU, 1.0, 0.3).validate(spec)
    with pytest.raises(ModelError):
        ParamSet(TABLE_TAU, [1.0, 2.0]).validate(spec)


# -- oracle values ------------------------------------------------------------


def test_predictor_oracle(cum_spec, table_params):
    np.testing.assert_allclose(linear_predictor(cum_spec, table_params, X02), ETA_02, rtol=0, atol=1e-14)
    assert linear_predictor(cum_spec, table_params, X02, k=1) == pytest.approx(ETA_02[0], abs=1e-14)
    with pytest.raises(ModelError):
        linear_predictor(cum_spec, table_params, X02, k=5)


def test_cumulative_oracle(cum_spec, table_params):
    p = cum_probs(cum_spec, table_params, X02)
    np.testing.assert_allclose(p, P_CUM_02, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(np.cumsum(p)[:-1], CUM_02, rtol=1e-13)


def test_sequential_oracle(table_params):
    spec = parse_model("seq")
    np.testing.assert_allclose(seq_probs(spec, table_params, X02), P_SEQ_02, rtol=1e-11, atol=1e-16)


def test_sequential_chain_oracle(table_params):
    spec = parse_model("seq")
    assert seq_exceedance_chain(spec, table_params, X02, 1) == pytest.approx(CHAIN_02[0], rel=1e-12)
    assert seq_exceedance_chain(spec, table_params, X02, 2) == pytest.approx(CHAIN_02[1], rel=1e-12)


def test_lognormal_oracle(cum_spec, table_params):
    theta, beta_tilde = cum_to_lognormal(table_params, cum_spec)
    np.testing.assert_allclose(theta, THETA, rtol=1e-13)
    assert beta_tilde == pytest.approx(BETA_TILDE, rel=1e-14)


def test_lognormal_preconditions(table_params):
    with pytest.raises(ModelError):
        cum_to_lognormal(table_params, parse_model("cum", link="logit"))
    with pytest.raises(ModelError):
        cum_to_lognormal(ParamSet(TABLE_TAU, -1.0))


# -- structural properties ----------------------------------------------------

VARIANTS = [parse_model(n) for n in CATALOG] + [parse_model("cum+cs", unsafe=True)]


@pytest.mark.parametrize("spec", VARIANTS, ids=lambda s: s.name)
@given(seed=st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_probabilities_normalise(spec, seed):
    rng = np.random.default_rng(seed)
    params = random_params(spec, rng)
    if spec.cs and spec.family == "cumulative":
        params = ParamSet(params.tau, np.full(spec.K - 1, params.beta[0]), 0.0)
    x = rng.uniform(-4, 2, 50)
    p = category_probs(spec, params, x)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.exp(log_category_probs(spec, params, x)), p, rtol=1e-9, atol=1e-300)


@pytest.mark.parametrize("family", ["cum", "seq", "acat"])
@pytest.mark.parametrize("link", ["probit", "logit", "cloglog"])
def test_binary_case_reduces_to_link(family, link):
    spec = parse_model(family, K=2, link=link)
    params = ParamSet([0.3], 1.4)
    x = np.linspace(-3, 1, 9)
    p = category_probs(spec, params, x)
    F = spec.link_obj.cdf(0.3 - 1.4 * x)
    np.testing.assert_allclose(p[:, 0], F, atol=1e-14)


@pytest.mark.parametrize("name", [n for n in CATALOG if n != "mlogit"])
def test_exceedance_curves_non_crossing_without_cs(name):
    spec = parse_model(name)
    rng = np.random.default_rng(3)
    for _ in range(20):
        params = random_params(spec, rng)
        exc = exceedance_probs(spec, params, rng.uniform(-4, 2, 40))
        assert np.all(np.diff(exc, axis=-1) <= 1e-15)


def test_exceedance_curve_grid_sorted_and_positive(cum_spec, table_params):
    curve = exceedance_curve(cum_spec, table_params, [1.0, 0.2, 0.5])
    assert curve.shape == (3, 4)
    np.testing.assert_allclose(curve[0], 1 - CUM_02, rtol=1e-12)
    assert np.all(np.diff(curve[:, 0]) > 0)
    with pytest.raises(ModelError):
        exceedance_curve(cum_spec, table_params, [0.0, 0.1])


def test_geq_convention(cum_spec, table_params):
    strict = exceedance_probs(cum_spec, table_params, X02, "strict")
    geq = exceedance_probs(cum_spec, table_params, X02, "geq")
    assert geq[0] == 1.0 and strict[-1] == 0.0
    np.testing.assert_allclose(geq[1:], strict[:-1], atol=1e-15)


def test_closed_form_lognormal_equivalence(cum_spec):
    from scipy.stats import norm

    rng = np.random.default_rng(0)
    for _ in range(200):
        params = random_params(cum_spec, rng)
        theta, bt = cum_to_lognormal(params, cum_spec)
        im = np.exp(rng.uniform(-4, 1, 20))
        got = norm.cdf(np.log(im[:, None] / theta) / bt)
        ref = exceedance_probs(cum_spec, params, np.log(im))[:, :-1]
        np.testing.assert_allclose(got, ref, atol=1e-12)


def test_acat_logit_two_constructions_agree():
    spec = parse_model("acat+vh+cs", link="logit")
    rng = np.random.default_rng(4)
    for _ in range(100):
        params = random_params(spec, rng)
        x = rng.uniform(-4, 2, 30)
        np.testing.assert_allclose(acat_probs(spec, params, x), acat_logit_probs(spec, params, x), atol=1e-12)


@pytest.mark.parametrize("link", ["probit", "logit"])
def test_sequential_dual_forms_agree_for_symmetric_links(link):
    spec = parse_model("seq+cs", link=link)
    rng = np.random.default_rng(5)
    for _ in range(100):
        params = random_params(spec, rng)
        x = rng.uniform(-4, 2, 20)
        exc = exceedance_probs(spec, params, x)
        for k in range(1, spec.K):
            np.testing.assert_allclose(seq_exceedance_chain(spec, params, x, k), exc[:, k - 1], atol=1e-12)


def test_sequential_chain_refuses_then_differs_for_cloglog():
    spec = parse_model("seq", link="cloglog")
    params = ParamSet(TABLE_TAU, TABLE_BETA)
    with pytest.raises(ModelError, match="cloglog"):
        seq_exceedance_chain(spec, params, X02, 2)
    chain = seq_exceedance_chain(spec, params, X02, 2, force=True)
    exact = exceedance_probs(spec, params, X02)[1]
    assert abs(chain - exact) >= 1e-3


def test_unsafe_cumulative_negative_probability():
    spec = parse_model("cum+cs", unsafe=True)
    params = ParamSet(TABLE_TAU, [0.5, 3.0, 1.0, 1.0])
    x = np.linspace(-3, 1, 30)
    with pytest.raises(NegativeProbabilityError, match="cross"):
        cum_probs(spec, params, x)
    raw = cum_probs(spec, params, x, check=False)
    assert np.any(raw < 0)
    assert np.any(np.isnan(log_category_probs(spec, params, x)))


def test_mlogit_reference_category():
    spec = parse_model("mlogit")
    params = ParamSet(np.zeros(4), np.zeros(4))
    np.testing.assert_allclose(category_probs(spec, params, [0.0, 1.0]), 0.2)


def test_upper_tail_precision(cum_spec, table_params):
    p = cum_probs(cum_spec, table_params, np.log(1e-4))
    assert p[-1] > 0 and np.isfinite(np.log(p[-1]))
    lp = log_category_probs(cum_spec, table_params, np.log([1e-9]))[0]
    assert np.all(np.isfinite(lp))


@pytest.mark.parametrize("name", ["cum", "seq+vh+cs", "mlogit"])
def test_unconstrained_round_trip(name):
    spec = parse_model(name)
    params = random_params(spec, np.random.default_rng(6))
    back = from_unconstrained(spec, to_unconstrained(spec, params))
    np.testing.assert_allclose(back.tau, params.tau, rtol=1e-13)
    np.testing.assert_allclose(back.beta, params.beta, rtol=1e-13)
    assert back.gamma == pytest.approx(params.gamma)


def test_log_jacobian_numerically(cum_spec, table_params):
    theta = to_unconstrained(cum_spec, table_params)
    J = np.empty((4, 4))
    h = 1e-6
    for j in range(4):
        e = np.zeros(5)
        e[j] = h
        J[:, j] = (from_unconstrained(cum_spec, theta + e).tau - from_unconstrained(cum_spec, theta - e).tau) / (2 * h)
    assert log_jacobian(cum_spec, theta) == pytest.approx(np.log(abs(np.linalg.det(J))), abs=1e-7)
