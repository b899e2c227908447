"""Surrogate-residual diagnostics for cumulative link fits and the
surrogate-based check of the parallel-slopes assumption."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._rng import stream
from .data import Dataset
from .links import Link, as_link, truncated_draws
from .mle import MleFit, fit_mle, score_contributions
from .models import ModelSpec, ParamSet


class DiagnosticError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SurrogateResiduals:
    """One jittered replicate of surrogate residuals.

    For a fit with variance heterogeneity the residuals are divided by the
    fitted latent scale, so every replicate shares the link's reference law.
    """

    r: np.ndarray
    replicate_id: int
    seed: int
    model: str
    link: str = "probit"

    @property
    def n(self) -> int:
        return self.r.size


def _latent_parts(fit: MleFit, x):
    spec = fit.spec
    if spec.family != "cumulative":
        raise DiagnosticError(
            f"surrogate residuals are defined here for cumulative link fits only, not {spec.name}"
        )
    if spec.cs:
        raise DiagnosticError("surrogate residuals need a single latent variable; category-specific fits have none")
    p = fit.estimates
    beta = float(np.asarray(p.beta))
    scale = np.exp(p.gamma * x) if spec.vh else np.ones_like(x)
    return beta * x, scale, np.asarray(p.tau, dtype=float)


def surrogate_residuals(fit: MleFit, ds: Dataset, seed: int, replicates: int = 1) -> list[SurrogateResiduals]:
    """Draw surrogate residuals ``R = S - E(S | x)`` from a cumulative fit.

    For an observation in damage state ``k`` the surrogate ``S`` is drawn from
    the fitted latent law (location ``beta x``, scale ``exp(gamma x)``)
    truncated to ``(tau_{k-1}, tau_k]``. Replicate ``j`` draws from its own stream
    derived from ``(seed, j)``.

    Returns
    -------
    list of SurrogateResiduals
        One entry per replicate.
    """
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    x = ds.x
    loc, scale, tau = _latent_parts(fit, x)
    link = fit.spec.link_obj
    cuts = np.concatenate([[-np.inf], tau, [np.inf]])
    # standardise so the truncation bounds are on the unit-scale noise
    lower = (cuts[ds.ds - 1] - loc) / scale
    upper = (cuts[ds.ds] - loc) / scale
    out = []
    for j in range(replicates):
        rng = stream(seed, "surrogate", j)
        eps = truncated_draws(link, np.zeros(ds.n), lower, upper, rng)
        r = eps - link.mean
        r.setflags(write=False)
        out.append(SurrogateResiduals(r, j, seed, fit.spec.name, link.kind))
    return out


def pooled(residuals: list[SurrogateResiduals]) -> np.ndarray:
    return np.concatenate([res.r for res in residuals])


def reference_cdf(link) -> callable:
    """CDF of the centred noise law that residuals should follow."""
    link = as_link(link)
    return lambda z: link.cdf(np.asarray(z) + link.mean)


def qq_reference(res: SurrogateResiduals, link: Link | str | None = None) -> np.ndarray:
    """Theoretical vs sample quantiles at plotting positions ``(i - 0.5)/n``.

    Returns an ``n x 2`` array of ``(theoretical_quantile, sample_quantile)``.
    """
    link = as_link(link if link is not None else res.link)
    n = res.n
    if n < 10:
        raise DiagnosticError("QQ comparison needs at least 10 residuals")
    p = (np.arange(1, n + 1) - 0.5) / n
    theo = link.quantile(p) - link.mean
    return np.column_stack([theo, np.sort(res.r)])


def ks_reference(res: SurrogateResiduals | np.ndarray, link: Link | str = "probit"):
    """Kolmogorov-Smirnov test of residuals against the link's reference law."""
    r = res.r if isinstance(res, SurrogateResiduals) else np.asarray(res)
    return stats.kstest(r, reference_cdf(link))


@dataclass
class TrendTable:
    bin_center: np.ndarray
    mean_residual: np.ndarray
    sd_residual: np.ndarray
    count: np.ndarray

    def rows(self):
        return zip(self.bin_center.tolist(), self.mean_residual.tolist(),
                   self.sd_residual.tolist(), self.count.tolist())


def covariate_trend(res: SurrogateResiduals, ds: Dataset, bins: int = 10) -> TrendTable:
    """Equal-count binned mean and standard deviation of residuals over ``ln(im)``.

    Ties in ``ln(im)`` are broken by observation order, so bin membership is
    deterministic.
    """
    if bins < 2:
        raise DiagnosticError("bins must be at least 2")
    if ds.n < bins:
        raise DiagnosticError(f"cannot form {bins} bins from {ds.n} observations")
    if res.n != ds.n:
        raise DiagnosticError("residuals and dataset differ in length")
    order = np.argsort(ds.x, kind="stable")
    groups = np.array_split(order, bins)
    center = np.array([ds.x[g].mean() for g in groups])
    mean = np.array([res.r[g].mean() for g in groups])
    sd = np.array([res.r[g].std(ddof=1) if np.ptp(res.r[g]) > 0 else 0.0 for g in groups])
    count = np.array([g.size for g in groups])
    return TrendTable(center, mean, sd, count)


# -- parallel-slopes check ------------------------------------------------------


@dataclass
class ParallelCheck:
    """Result of the surrogate difference check.

    ``D = S_2 - S_1`` with ``S_m`` drawn from the latent law centred at
    ``-beta_m ln(im)``. Under parallel slopes ``D`` does not trend with
    ``ln(im)`` and has variance 2 for a probit fit.
    """

    ln_im: np.ndarray
    D: np.ndarray
    slope: float
    intercept: float
    slope_se: float
    ols_se: float
    p_value: float
    beta_low: float
    beta_high: float
    diff_se: float
    mode: str
    seed: int
    fits: tuple = field(default=(), repr=False)

    def summary(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "slope_se": self.slope_se,
            "ols_se": self.ols_se,
            "p_value": self.p_value,
            "beta_low": self.beta_low,
            "beta_high": self.beta_high,
            "beta_diff_se": self.diff_se,
            "var_D": float(np.var(self.D, ddof=1)) if self.D.size > 1 else 0.0,
            "mode": self.mode,
            "seed": self.seed,
            "n": int(self.D.size),
        }


def _split_subsets(ds: Dataset, low_cats, high_cats, mode: str):
    low = sorted(set(int(c) for c in low_cats))
    high = sorted(set(int(c) for c in high_cats))
    K = ds.K
    if low != list(range(1, low[-1] + 1)) or high != list(range(high[0], K + 1)):
        raise DiagnosticError("low categories must run 1..a and high categories b..K")
    if high[0] > low[-1]:
        raise DiagnosticError("the two category groups must overlap in at least one category")
    a, b = low[-1], high[0]
    if mode == "collapse":
        # every observation enters both fits; categories outside a group merge
        # into its boundary category
        idx = np.arange(ds.n)
        d_low = Dataset(ds.im, np.minimum(ds.ds, a), a)
        d_high = Dataset(ds.im, np.maximum(ds.ds, b) - b + 1, K - b + 1)
        return (d_low, idx), (d_high, idx)
    if mode == "drop":
        m_low = ds.ds <= a
        m_high = ds.ds >= b
        d_low = Dataset(ds.im[m_low], ds.ds[m_low], a)
        d_high = Dataset(ds.im[m_high], ds.ds[m_high] - b + 1, K - b + 1)
        return (d_low, np.flatnonzero(m_low)), (d_high, np.flatnonzero(m_high))
    raise ValueError(f"unknown mode {mode!r}; use 'collapse' or 'drop'")


def _fit_subset(sub: Dataset, label: str, link: str):
    if np.count_nonzero(sub.counts()) < 3 or sub.K < 3:
        raise DiagnosticError(f"{label} subset must contain at least three observed categories")
    spec = ModelSpec("cumulative", link, K=sub.K)
    try:
        return fit_mle(spec, sub)
    except Exception as exc:
        raise DiagnosticError(f"{label} subset fit failed: {exc}") from exc


def _beta_diff_se(ds: Dataset, fits, index_maps, subsets) -> float:
    """Sandwich standard error of ``beta_1 - beta_2`` from the stacked score
    equations of both subset fits."""
    blocks = []
    for fit, idx, sub in zip(fits, index_maps, subsets):
        s = np.zeros((ds.n, fit.spec.n_params))
        s[idx] = score_contributions(fit, sub)
        blocks.append(s)
    scores = np.hstack(blocks)
    p1 = fits[0].spec.n_params
    p2 = fits[1].spec.n_params
    bread = np.zeros((p1 + p2, p1 + p2))
    bread[:p1, :p1] = fits[0].cov
    bread[p1:, p1:] = fits[1].cov
    meat = scores.T @ scores
    V = bread @ meat @ bread
    c = np.zeros(p1 + p2)
    c[p1 - 1] = 1.0
    c[-1] = -1.0
    return float(np.sqrt(max(c @ V @ c, 0.0)))


def parallel_check(ds: Dataset, split=((1, 2, 3), (3, 4, 5)), seed: int = 0, mode: str = "collapse",
                   link: str = "probit", expectation: bool = False, se_method: str = "sandwich") -> ParallelCheck:
    """Surrogate difference check of the parallel-slopes assumption.

    Two cumulative models are fitted, one to the low categories and one to
    the high categories (``mode='collapse'`` merges the categories outside each
    group into its boundary; ``mode='drop'`` discards those observations).
    Surrogates ``S_1 ~ latent(-beta_1 x)`` and ``S_2 ~ latent(-beta_2 x)`` are
    drawn independently at every ``x = ln(im)`` of ``ds``, and ``D = S_2 - S_1``
    is regressed on ``x``.

    The slope standard error combines the OLS error with the sampling error
    of ``beta_1 - beta_2`` (sandwich estimate from both fits), since the
    expected slope under the fitted models is exactly that difference.

    Parameters
    ----------
    expectation : bool
        Skip the surrogate noise and return ``D = (beta_1 - beta_2) x``.
    se_method : {'sandwich', 'ols'}
        ``'ols'`` uses the plain regression error only. It ignores the
        uncertainty in the fitted slopes and rejects too often under
        parallel slopes.
    """
    if se_method not in ("sandwich", "ols"):
        raise ValueError("se_method must be 'sandwich' or 'ols'")
    (d_low, i_low), (d_high, i_high) = _split_subsets(ds, split[0], split[1], mode)
    fit_low = _fit_subset(d_low, "low-category", link)
    fit_high = _fit_subset(d_high, "high-category", link)
    b1 = float(fit_low.estimates.beta)
    b2 = float(fit_high.estimates.beta)
    x = ds.x
    lk = as_link(link)
    if expectation:
        D = (b1 - b2) * x
    else:
        rng = stream(seed, "parallel-check")
        inf = np.full(ds.n, np.inf)
        s1 = truncated_draws(lk, -b1 * x, -inf, inf, rng)
        s2 = truncated_draws(lk, -b2 * x, -inf, inf, rng)
        D = s2 - s1
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, D, rcond=None)
    resid = D - X @ coef
    dof = ds.n - 2
    s2_res = float(resid @ resid / dof) if dof > 0 else 0.0
    sxx = float(np.sum((x - x.mean()) ** 2))
    ols_se = float(np.sqrt(s2_res / sxx)) if sxx > 0 else np.inf
    diff_se = _beta_diff_se(ds, (fit_low, fit_high), (i_low, i_high), (d_low, d_high))
    slope_se = float(np.hypot(ols_se, diff_se)) if se_method == "sandwich" else ols_se
    slope = float(coef[1])
    if slope_se > 0:
        p_value = float(2.0 * stats.norm.sf(abs(slope) / slope_se))
    else:
        p_value = 1.0 if slope == 0 else 0.0
    return ParallelCheck(x.copy(), D, slope, float(coef[0]), slope_se, ols_se, p_value,
                         b1, b2, diff_se, mode, seed, (fit_low, fit_high))


# -- export -------------------------------------------------------------------


def residuals_to_csv(residuals: list[SurrogateResiduals], ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "ln_im", "ds", "residual", "replicate"])
    for res in residuals:
        for i in range(ds.n):
            w.writerow([i + 1, repr(float(ds.x[i])), int(ds.ds[i]), repr(float(res.r[i])), res.replicate_id + 1])
    return buf.getvalue()


def qq_to_csv(qq: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["theoretical_quantile", "sample_quantile"])
    for t, s in qq:
        w.writerow([repr(float(t)), repr(float(s))])
    return buf.getvalue()


def trend_to_csv(trend: TrendTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_center", "mean_residual", "sd_residual", "count"])
    for c, m, s, n in trend.rows():
        w.writerow([repr(c), repr(m), repr(s), n])
    return buf.getvalue()


def dcheck_to_csv(check: ParallelCheck) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ln_im", "D"])
    for x, d in zip(check.ln_im, check.D):
        w.writerow([repr(float(x)), repr(float(d))])
    return buf.getvalue()
