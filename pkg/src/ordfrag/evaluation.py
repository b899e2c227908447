"""Bayesian model evaluation: WAIC, DIC, Pareto-smoothed importance-sampling
leave-one-out, a brute-force LOO oracle and elpd-based model comparison."""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .bayes import McmcSettings, PosteriorDraws, Prior, sample_posterior
from .data import Dataset
from .mle import floored_log_lik, log_likelihood, pointwise_log_lik
from .models import ModelSpec, from_unconstrained

log = logging.getLogger(__name__)

K_WARN = 0.7
K_BAD = 1.0
EXACT_LOO_MAX_N = 200
# minimum |elpd_diff| for a difference to count as more than minor
ELPD_MINOR = 4.0


class ParetoKWarning(UserWarning):
    """Some Pareto shape estimates exceed the reliability threshold."""


@dataclass
class PointwiseLogLik:
    """``S x n`` matrix of ``ln p(y_i | params_s)``."""

    values: np.ndarray
    n_floored: int = 0

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))

    @property
    def n_draws(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


def pointwise_loglik(draws: PosteriorDraws, spec: ModelSpec, ds: Dataset) -> PointwiseLogLik:
    """Re-evaluate the log predictive density of every observation under every draw.

    Values below the log floor are clipped; the count of clipped entries is kept.
    """
    if draws.spec != spec:
        raise ValueError(f"draws belong to {draws.spec.name}, not {spec.name}")
    S = draws.n_draws
    out = np.empty((S, ds.n))
    floored = 0
    for s in range(S):
        out[s], nf = floored_log_lik(spec, draws.param_set(s), ds)
        floored += nf
    if floored:
        log.warning("%d pointwise log-likelihood values clipped at the log floor", floored)
    return PointwiseLogLik(out, floored)


def _as_matrix(pll) -> np.ndarray:
    if isinstance(pll, PointwiseLogLik):
        return pll.values
    return np.atleast_2d(np.asarray(pll, dtype=float))


def _logmeanexp(a, axis=0):
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.mean(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


# -- WAIC / DIC -----------------------------------------------------------------


def waic_dic(pll, draws: PosteriorDraws | None = None, ds: Dataset | None = None) -> dict[str, float]:
    """WAIC from the pointwise matrix and, when draws are given, DIC.

    DIC evaluates the deviance at the posterior mean of the unconstrained
    parameters, mapped back to the natural scale, so the plug-in point always
    has ordered thresholds.
    """
    m = _as_matrix(pll)
    if m.shape[0] < 2:
        raise ValueError("WAIC needs at least two draws")
    lppd_i = _logmeanexp(m, axis=0)
    p_i = np.where(np.ptp(m, axis=0) > 0, m.var(axis=0, ddof=1), 0.0)
    lppd = float(lppd_i.sum())
    p_waic = float(p_i.sum())
    out = {
        "lppd": lppd,
        "p_waic": p_waic,
        "waic": -2.0 * (lppd - p_waic),
        "se_waic": float(np.sqrt(m.shape[1] * np.var(-2.0 * (lppd_i - p_i), ddof=1))) if m.shape[1] > 1 else 0.0,
    }
    if draws is not None:
        data = ds if ds is not None else draws.dataset
        if data is None:
            raise ValueError("DIC needs the dataset the draws were fitted to")
        theta_bar = draws.unconstrained.reshape(-1, draws.unconstrained.shape[-1]).mean(axis=0)
        d_hat = -2.0 * log_likelihood(draws.spec, from_unconstrained(draws.spec, theta_bar), data)
        d_bar = float(np.mean(-2.0 * m.sum(axis=1)))
        p_dic = d_bar - d_hat
        out.update({"dic": d_hat + 2.0 * p_dic, "p_dic": p_dic})
    return out


# -- PSIS ---------------------------------------------------------------------


def gpd_fit(x) -> tuple[float, float]:
    """Generalised Pareto fit to exceedances ``x >= 0``.

    Profile-posterior mean of Zhang and Stephens, with the shape pulled toward
    0.5 by a weak prior worth ten observations. Returns ``(k, sigma)``.
    """
    x = np.sort(np.asarray(x, dtype=float))
    N = x.size
    prior = 3.0
    m = 30 + int(np.floor(np.sqrt(N)))
    j = np.arange(1, m + 1)
    xstar = x[int(np.floor(N / 4 + 0.5)) - 1]
    theta = 1.0 / x[-1] + (1.0 - np.sqrt(m / (j - 0.5))) / (prior * xstar)
    k_grid = np.array([np.mean(np.log1p(-t * x)) for t in theta])
    with np.errstate(divide="ignore", invalid="ignore"):
        prof = N * (np.log(-theta / k_grid) - k_grid - 1.0)
    prof = np.where(np.isfinite(prof), prof, -np.inf)
    w = np.exp(prof - np.max(prof))
    w /= w.sum()
    theta_hat = float(np.sum(theta * w))
    k = float(np.mean(np.log1p(-theta_hat * x)))
    sigma = -k / theta_hat
    k = (N * k + 10 * 0.5) / (N + 10)
    return k, sigma


def _gpd_quantile(p, k, sigma):
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def tail_length(S: int) -> int:
    return int(min(np.ceil(0.2 * S), np.ceil(3.0 * np.sqrt(S))))


def psis_smooth(log_ratios) -> tuple[np.ndarray, float]:
    """Pareto-smooth one vector of log importance ratios.

    Returns the smoothed (unnormalised) log weights and the shape estimate.
    All-equal ratios return ``k = -inf`` and the input unchanged.
    """
    lr = np.asarray(log_ratios, dtype=float)
    lw = lr - lr.max()
    S = lw.size
    M = tail_length(S)
    if np.all(lw == 0.0) or M < 5 or S <= M:
        return lw, -np.inf
    order = np.argsort(lw, kind="stable")
    cutoff = lw[order[S - M - 1]]
    tail_idx = order[S - M:]
    exceed = np.exp(lw[tail_idx]) - np.exp(cutoff)
    if exceed[-1] <= 0.0 or np.sum(exceed > 0) < 2:
        return lw, -np.inf
    k, sigma = gpd_fit(exceed)
    if not np.isfinite(k):
        return lw, k
    p = (np.arange(1, M + 1) - 0.5) / M
    smoothed = np.log(np.exp(cutoff) + _gpd_quantile(p, k, sigma))
    # never exceed the largest raw weight
    lw = lw.copy()
    lw[tail_idx] = np.minimum(smoothed, 0.0)
    return lw, k


@dataclass
class LooResult:
    elpd_loo: float
    se_elpd: float
    pointwise_elpd: np.ndarray
    pareto_k: np.ndarray
    p_loo: float = float("nan")
    warnings: list[str] = field(default_factory=list)

    def k_summary(self) -> dict[str, float]:
        return pareto_k_summary(self.pareto_k)

    def to_dict(self) -> dict:
        return {
            "elpd_loo": self.elpd_loo,
            "se_elpd": self.se_elpd,
            "p_loo": self.p_loo,
            "pareto_k_summary": self.k_summary(),
            "pointwise_elpd": self.pointwise_elpd.tolist(),
            "pareto_k": [_finite_or_none(k) for k in self.pareto_k],
            "warnings": list(self.warnings),
        }


def pareto_k_summary(k) -> dict[str, float]:
    k = np.asarray(k, dtype=float)
    finite = k[np.isfinite(k)]
    return {
        "good": int(np.sum(~(k > 0.5))),
        "ok": int(np.sum((k > 0.5) & (k <= K_WARN))),
        "bad": int(np.sum((k > K_WARN) & (k <= K_BAD))),
        "very_bad": int(np.sum(k > K_BAD)),
        "max": float(finite.max()) if finite.size else None,
    }


def psis_loo(pll) -> LooResult:
    """PSIS leave-one-out expected log predictive density.

    Parameters
    ----------
    pll : PointwiseLogLik or array of shape (S, n)

    Returns
    -------
    LooResult
        ``pareto_k`` holds ``-inf`` for observations whose importance ratios
        are all equal (no smoothing needed).
    """
    m = _as_matrix(pll)
    S, n = m.shape
    if S < 100:
        warnings.warn(f"PSIS-LOO with only {S} draws is unreliable", UserWarning, stacklevel=2)
    elpd = np.empty(n)
    khat = np.empty(n)
    for i in range(n):
        lw, k = psis_smooth(-m[:, i])
        a = lw + m[:, i]
        elpd[i] = _lse(a) - _lse(lw)
        khat[i] = k
    se = float(np.sqrt(n * np.var(elpd, ddof=1))) if n > 1 else 0.0
    lppd = float(_logmeanexp(m, axis=0).sum())
    res = LooResult(float(elpd.sum()), se, elpd, khat, lppd - float(elpd.sum()))
    n_warn = int(np.sum(khat > K_WARN))
    if n_warn:
        msg = f"{n_warn} observation(s) with Pareto k > {K_WARN}"
        n_bad = int(np.sum(khat > K_BAD))
        if n_bad:
            msg += f" ({n_bad} above {K_BAD}: estimates unreliable)"
        res.warnings.append(msg)
        warnings.warn(msg, ParetoKWarning, stacklevel=2)
    return res


def _lse(a) -> float:
    mx = np.max(a)
    return float(mx + np.log(np.sum(np.exp(a - mx))))


# -- exact LOO ----------------------------------------------------------------


def exact_loo_oracle(spec: ModelSpec, ds: Dataset, prior: Prior = Prior(),
                     mcmc: McmcSettings = McmcSettings()) -> dict:
    """Brute-force leave-one-out: refit the posterior ``n`` times.

    Meant as a test oracle for :func:`psis_loo`; refuses datasets larger than
    ``EXACT_LOO_MAX_N``.
    """
    if ds.n > EXACT_LOO_MAX_N:
        raise ValueError(f"exact LOO refits the model n={ds.n} times; use psis_loo for n > {EXACT_LOO_MAX_N}")
    pointwise = np.empty(ds.n)
    for i in range(ds.n):
        draws = sample_posterior(spec, ds.drop(i), prior, mcmc)
        held = ds.subset(np.arange(ds.n) == i)
        ll = np.array([pointwise_log_lik(spec, draws.param_set(s), held)[0] for s in range(draws.n_draws)])
        pointwise[i] = float(_logmeanexp(ll))
    return {"elpd_exact": float(pointwise.sum()), "pointwise": pointwise}


# -- comparison ---------------------------------------------------------------


@dataclass
class ComparisonRow:
    model_name: str
    n_params: int
    elpd_loo: float
    se_elpd: float
    elpd_diff: float
    se_diff: float
    rank: int
    significant: bool
    pareto_k_summary: dict = field(default_factory=dict)


def compare_models(rows) -> list[ComparisonRow]:
    """Rank models by elpd and compute differences against the best.

    Parameters
    ----------
    rows : iterable of dict
        Each with ``name`` and ``pointwise_elpd``; optional ``n_params`` and
        ``pareto_k``.

    Returns
    -------
    list of ComparisonRow
        Sorted best first. ``significant`` marks ``|elpd_diff| > 4`` and
        ``|elpd_diff| > 2 se_diff``.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("nothing to compare")
    pw = [np.asarray(r["pointwise_elpd"], dtype=float) for r in rows]
    n = pw[0].size
    if any(p.size != n for p in pw):
        raise ValueError("all models must be evaluated on the same observations")
    totals = np.array([p.sum() for p in pw])
    order = sorted(range(len(rows)), key=lambda j: -totals[j])
    best = pw[order[0]]
    out = []
    for rank, j in enumerate(order, start=1):
        diff_i = pw[j] - best
        diff = float(totals[j] - totals[order[0]])
        se_diff = float(np.sqrt(n * np.var(diff_i, ddof=1))) if n > 1 else 0.0
        se = float(np.sqrt(n * np.var(pw[j], ddof=1))) if n > 1 else 0.0
        k = rows[j].get("pareto_k")
        out.append(ComparisonRow(
            model_name=rows[j]["name"],
            n_params=int(rows[j].get("n_params", 0)),
            elpd_loo=float(totals[j]),
            se_elpd=se,
            elpd_diff=diff,
            se_diff=se_diff,
            rank=rank,
            significant=bool(abs(diff) > ELPD_MINOR and abs(diff) > 2.0 * se_diff),
            pareto_k_summary=pareto_k_summary(k) if k is not None else {},
        ))
    return out


def evaluate_catalog(specs, ds: Dataset, prior: Prior = Prior(), mcmc: McmcSettings = McmcSettings()):
    """Sample every model, run PSIS-LOO and compare.

    Returns ``(comparison_rows, {name: (draws, loo)})``.
    """
    fits = {}
    rows = []
    for spec in specs:
        draws = sample_posterior(spec, ds, prior, mcmc)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ParetoKWarning)
            loo = psis_loo(draws.flat_loglik())
        fits[spec.name] = (draws, loo)
        rows.append({"name": spec.name, "pointwise_elpd": loo.pointwise_elpd,
                     "n_params": spec.n_params, "pareto_k": loo.pareto_k})
    return compare_models(rows), fits


# -- export -------------------------------------------------------------------

COMPARISON_COLUMNS = ("model", "n_params", "elpd_loo", "elpd_diff", "se_diff", "rank")


def comparison_to_csv(rows: list[ComparisonRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARISON_COLUMNS + ("se_elpd", "significant", "max_pareto_k"))
    for r in rows:
        w.writerow([r.model_name, r.n_params, f"{r.elpd_loo:.1f}", f"{r.elpd_diff:.1f}",
                    f"{r.se_diff:.1f}", r.rank, f"{r.se_elpd:.1f}", int(r.significant),
                    "" if r.pareto_k_summary.get("max") is None else f"{r.pareto_k_summary['max']:.3f}"])
    return buf.getvalue()


def comparison_to_json(rows: list[ComparisonRow]) -> list[dict]:
    return [asdict(r) for r in rows]


def _finite_or_none(v):
    v = float(v)
    return v if np.isfinite(v) else None


def dumps(obj) -> str:
    """Deterministic JSON with non-finite floats written as null."""
    return json.dumps(_clean(obj), indent=2, sort_keys=True)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _finite_or_none(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
