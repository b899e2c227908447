"""Bayesian fitting by adaptive random-walk Metropolis, convergence statistics
and posterior fragility bands."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from ._rng import stream
from .data import Dataset
from .mle import (
    _check_preconditions,
    fd_gradient,
    fd_hessian,
    initial_params,
    pointwise_log_lik,
)
from .models import (
    ModelSpec,
    ParamSet,
    category_probs,
    exceedance_from_probs,
    from_unconstrained,
    log_jacobian,
    params_to_vector,
    to_unconstrained,
)

log = logging.getLogger(__name__)

RHAT_WARN = 1.05


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class Prior:
    """Independent normal priors on the natural-scale parameters.

    ``overrides`` maps a parameter name (``tau2``, ``beta``, ``gamma`` ...) to
    a ``(loc, scale)`` pair.
    """

    loc: float = 0.0
    scale: float = 10.0
    overrides: tuple = ()

    def __post_init__(self):
        if self.scale <= 0 or any(s <= 0 for _, (_, s) in self.overrides):
            raise ValueError("prior scales must be positive")

    def vectors(self, spec: ModelSpec):
        locs = np.full(spec.n_params, float(self.loc))
        scales = np.full(spec.n_params, float(self.scale))
        over = dict(self.overrides)
        for i, name in enumerate(spec.param_names):
            if name in over:
                locs[i], scales[i] = over[name]
        return locs, scales

    def logpdf(self, spec: ModelSpec, vec) -> float:
        locs, scales = self.vectors(spec)
        z = (np.asarray(vec) - locs) / scales
        return float(-0.5 * np.sum(z * z) - np.sum(np.log(scales)) - 0.5 * z.size * np.log(2 * np.pi))


@dataclass(frozen=True)
class McmcSettings:
    chains: int = 4
    warmup: int = 1000
    iters: int = 1000
    seed: int = 0
    target_accept: float = 0.3
    thin: int = 1

    def __post_init__(self):
        if self.chains < 1 or self.warmup < 0 or self.iters < 1 or self.thin < 1:
            raise ValueError("invalid MCMC settings")
        if self.iters < self.thin:
            raise ValueError("thin exceeds the number of post-warmup iterations")

    @property
    def kept(self) -> int:
        """Saved draws per chain."""
        return self.iters // self.thin


@dataclass
class PosteriorDraws:
    """Post-warmup draws.

    ``params`` is ``chains x iters x P`` on the natural scale, ``unconstrained``
    the same draws in sampler coordinates, ``pointwise_loglik`` is
    ``chains x iters x n``.
    """

    spec: ModelSpec
    params: np.ndarray
    unconstrained: np.ndarray
    pointwise_loglik: np.ndarray
    seed: int
    acceptance: np.ndarray
    warnings: list[str] = field(default_factory=list)
    prior_only: bool = False
    dataset: Dataset | None = field(default=None, repr=False)

    @property
    def chains(self) -> int:
        return self.params.shape[0]

    @property
    def iters(self) -> int:
        return self.params.shape[1]

    @property
    def n_draws(self) -> int:
        return self.chains * self.iters

    @property
    def param_names(self) -> list[str]:
        return self.spec.param_names

    def flat_params(self) -> np.ndarray:
        return self.params.reshape(-1, self.params.shape[-1])

    def flat_loglik(self) -> np.ndarray:
        return self.pointwise_loglik.reshape(-1, self.pointwise_loglik.shape[-1])

    def param_set(self, index: int) -> ParamSet:
        theta = self.unconstrained.reshape(-1, self.unconstrained.shape[-1])[index]
        return from_unconstrained(self.spec, theta)

    def summary(self, level: float = 0.95) -> dict[str, dict[str, float]]:
        flat = self.flat_params()
        lo, hi = (1 - level) / 2, 1 - (1 - level) / 2
        stats = convergence_stats(self) if self.chains >= 2 and self.iters >= 4 else {}
        out = {}
        for j, name in enumerate(self.param_names):
            col = flat[:, j]
            out[name] = {
                "mean": float(col.mean()),
                "sd": float(col.std(ddof=1)),
                "lower": float(np.quantile(col, lo)),
                "upper": float(np.quantile(col, hi)),
                **{k: float(v) for k, v in stats.get(name, {}).items()},
            }
        return out

    def to_rows(self):
        """Long-format rows ``(chain, iter, param, value)`` for export."""
        names = self.param_names
        for c in range(self.chains):
            for i in range(self.iters):
                for j, name in enumerate(names):
                    yield c + 1, i + 1, name, float(self.params[c, i, j])


class _Target:
    def __init__(self, spec, ds, prior, prior_only):
        self.spec = spec
        self.ds = ds
        self.prior = prior
        self.prior_only = prior_only
        self.locs, self.scales = prior.vectors(spec)
        self.n = 0 if (prior_only or ds is None) else ds.n

    def __call__(self, theta):
        """Log posterior density in sampler coordinates plus pointwise log-lik."""
        params = from_unconstrained(self.spec, theta)
        vec = params_to_vector(self.spec, params)
        if not np.all(np.isfinite(vec)):
            return -np.inf, None
        z = (vec - self.locs) / self.scales
        lp = -0.5 * float(z @ z) + log_jacobian(self.spec, theta)
        if self.prior_only:
            return lp, np.empty(0)
        ll = pointwise_log_lik(self.spec, params, self.ds)
        total = float(ll.sum())
        if not np.isfinite(total):
            return -np.inf, None
        return lp + total, ll


def _find_mode(target, theta0):
    def neg(t):
        v, _ = target(t)
        return 1e300 if not np.isfinite(v) else -v

    res = optimize.minimize(neg, theta0, jac=lambda t: fd_gradient(neg, t), method="BFGS",
                            options={"gtol": 1e-6, "maxiter": 500})
    # Laplace covariance at the mode; fall back to the BFGS inverse if the
    # finite-difference Hessian is not positive definite
    try:
        H = fd_hessian(neg, res.x)
        w, V = np.linalg.eigh(0.5 * (H + H.T))
        if w[0] <= 0:
            raise np.linalg.LinAlgError
        w = 1.0 / w
    except np.linalg.LinAlgError:
        cov = np.asarray(res.hess_inv)
        w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    w = np.clip(w, 1e-8, None)
    return res.x, V @ np.diag(w) @ V.T


def _run_chain(target, theta_init, cov0, settings: McmcSettings, rng, n_obs):
    d = theta_init.size
    warmup, iters = settings.warmup, settings.iters
    scale = 2.38 / np.sqrt(d)
    cov = cov0
    chol = np.linalg.cholesky(cov + 1e-10 * np.eye(d))
    theta = theta_init.copy()
    lp, ll = target(theta)
    if not np.isfinite(lp):
        raise SamplerError("initial point has zero posterior density")
    thin = settings.thin
    kept = np.empty((settings.kept, d))
    kept_ll = np.empty((settings.kept, n_obs))
    history = np.empty((warmup, d))
    accepted = 0
    window = 50
    for t in range(warmup + iters):
        # occasional wide steps keep skewed threshold-gap directions moving
        wide = 3.0 if rng.uniform() < 0.1 else 1.0
        prop = theta + wide * scale * (chol @ rng.standard_normal(d))
        lp_prop, ll_prop = target(prop)
        log_u = np.log(rng.uniform())
        alpha = min(1.0, np.exp(lp_prop - lp)) if np.isfinite(lp_prop) else 0.0
        acc = np.isfinite(lp_prop) and log_u < lp_prop - lp
        if acc:
            theta, lp, ll = prop, lp_prop, ll_prop
        if t < warmup:
            history[t] = theta
            if wide == 1.0:
                # Robbins-Monro step on the proposal scale
                scale *= np.exp((alpha - settings.target_accept) / (t + 1) ** 0.6)
            if (t + 1) % window == 0 and t + 1 >= 4 * window:
                recent = history[(t + 1) // 4 : t + 1]
                m = recent.shape[0]
                # shrink the empirical covariance towards the Laplace start
                emp = (m * np.cov(recent, rowvar=False) + 10 * d * cov0) / (m + 10 * d)
                try:
                    chol = np.linalg.cholesky(emp + 1e-10 * np.eye(d))
                except np.linalg.LinAlgError:
                    pass
        else:
            i = t - warmup
            accepted += int(acc)
            if (i + 1) % thin == 0 and i // thin < kept.shape[0]:
                kept[i // thin] = theta
                kept_ll[i // thin] = ll
    return kept, kept_ll, accepted / max(iters, 1)


def sample_posterior(
    spec: ModelSpec,
    ds: Dataset | None,
    prior: Prior = Prior(),
    mcmc: McmcSettings = McmcSettings(),
    prior_only: bool = False,
) -> PosteriorDraws:
    """Sample the posterior of ``spec`` on ``ds`` under ``prior``.

    Thresholds are sampled as ``tau_1`` plus log-increments (Jacobian
    included) so every draw is ordered. Each chain runs adaptive random-walk
    Metropolis from an overdispersed start around the posterior mode;
    proposal covariance and scale adapt during warm-up and are then frozen.
    Chain ``c`` draws from its own stream derived from ``(seed, c)``.
    """
    if not prior_only:
        if ds is None:
            raise ValueError("dataset required unless prior_only")
        _check_preconditions(spec, ds, spec.n_params)
    target = _Target(spec, ds, prior, prior_only)
    if prior_only or ds is None:
        locs, scales = prior.vectors(spec)
        tau0 = np.arange(spec.K - 1, dtype=float) if spec.ordinal else np.zeros(spec.K - 1)
        p0 = ParamSet(tau0, np.zeros(spec.n_slopes) if spec.n_slopes > 1 else 0.0, 0.0)
    else:
        p0 = initial_params(spec, ds)
    theta0 = to_unconstrained(spec, p0)
    mode, cov = _find_mode(target, theta0)
    n_obs = target.n
    draws, draws_ll, accept = [], [], []
    for c in range(mcmc.chains):
        rng = stream(mcmc.seed, "mcmc", c)
        start = None
        for _ in range(100):
            cand = mode + rng.multivariate_normal(np.zeros(mode.size), cov)
            if np.isfinite(target(cand)[0]):
                start = cand
                break
        if start is None:
            start = mode
        kept, kept_ll, rate = _run_chain(target, start, cov, mcmc, rng, n_obs)
        if rate == 0.0 and mcmc.iters > 0:
            raise SamplerError(f"chain {c + 1}: no proposal accepted; posterior looks degenerate")
        draws.append(kept)
        draws_ll.append(kept_ll)
        accept.append(rate)
    unconstrained = np.stack(draws)
    natural = np.apply_along_axis(lambda t: params_to_vector(spec, from_unconstrained(spec, t)), -1, unconstrained)
    result = PosteriorDraws(
        spec=spec,
        params=natural,
        unconstrained=unconstrained,
        pointwise_loglik=np.stack(draws_ll),
        seed=mcmc.seed,
        acceptance=np.array(accept),
        prior_only=prior_only,
        dataset=None if prior_only else ds,
    )
    if mcmc.chains >= 2 and mcmc.iters >= 4:
        for name, st in convergence_stats(result).items():
            if not st["rhat"] <= RHAT_WARN:
                result.warnings.append(f"{name}: rhat {st['rhat']:.3f} exceeds {RHAT_WARN}")
    return result


# -- convergence --------------------------------------------------------------


def split_rhat(x) -> float:
    """Split-chain potential scale reduction for a ``chains x draws`` array.

    Returns 1.0 when every draw is identical and ``inf`` when chains are
    individually constant but disagree.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[1] // 2
    halves = np.concatenate([x[:, :n], x[:, -n:]], axis=0)
    means = halves.mean(axis=1)
    variances = halves.var(axis=1, ddof=1)
    W = variances.mean()
    B = n * means.var(ddof=1)
    if W == 0.0:
        return 1.0 if B == 0.0 else np.inf
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def _autocov(x):
    n = x.size
    m = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x - x.mean(), m)
    ac = np.fft.irfft(f * np.conj(f), m)[:n] / n
    return ac


def ess(x) -> float:
    """Effective sample size of a ``chains x draws`` array from the multi-chain
    autocorrelation, truncated by Geyer's initial monotone sequence."""
    x = np.asarray(x, dtype=float)
    m, n = x.shape
    acov = np.array([_autocov(chain) for chain in x])
    chain_var = acov[:, 0] * n / (n - 1)
    W = chain_var.mean()
    B_over_n = x.mean(axis=1).var(ddof=1) if m > 1 else 0.0
    var_plus = (n - 1) / n * W + B_over_n
    if var_plus <= 0.0:
        return float(m * n)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum consecutive pairs while positive, enforce monotone decrease
    pairs = []
    t = 0
    while t + 1 < n:
        p = rho[t] + rho[t + 1]
        if p < 0:
            break
        pairs.append(p)
        t += 2
    pairs = np.minimum.accumulate(np.array(pairs)) if pairs else np.array([1.0])
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def convergence_stats(draws: PosteriorDraws) -> dict[str, dict[str, float]]:
    """Per-parameter split-Rhat and effective sample size."""
    if draws.chains < 2:
        raise ValueError("convergence statistics need at least two chains")
    out = {}
    for j, name in enumerate(draws.param_names):
        x = draws.params[:, :, j]
        out[name] = {"rhat": split_rhat(x), "ess": ess(x)}
    return out


# -- fragility bands ----------------------------------------------------------


@dataclass
class FragilityBands:
    im: np.ndarray
    level: float
    exceedance: dict  # stat -> (n_grid, K-1)
    probs: dict  # stat -> (n_grid, K)
    convention: str = "strict"

    def rows(self, kind: str = "exceedance"):
        """Long rows ``(im, k, stat, value)``.

        Exceedance rows run over ``k = 1..K-1`` for ``P(DS > k)`` and
        ``k = 2..K`` for ``P(DS >= k)``; category rows over ``k = 1..K``.
        """
        table = self.exceedance if kind == "exceedance" else self.probs
        offset = 2 if (kind == "exceedance" and self.convention == "geq") else 1
        for i, im in enumerate(self.im):
            for k in range(table["median"].shape[1]):
                for stat in ("median", "lower", "upper"):
                    yield float(im), k + offset, stat, float(table[stat][i, k])


def posterior_curves(draws: PosteriorDraws, spec: ModelSpec, im_grid, convention="strict"):
    """Category and exceedance probabilities for every draw:
    ``(S, n_grid, K)`` each."""
    x = np.log(np.asarray(im_grid, dtype=float))
    S = draws.n_draws
    probs = np.empty((S, x.size, spec.K))
    for s in range(S):
        probs[s] = category_probs(spec, draws.param_set(s), x)
    return probs, exceedance_from_probs(probs, convention)


def fragility_bands(draws: PosteriorDraws, spec: ModelSpec, im_grid, level: float = 0.95,
                    convention: str = "strict") -> FragilityBands:
    """Pointwise posterior median and central ``level`` interval of the
    exceedance and category probabilities on ``im_grid``."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if draws.spec != spec:
        raise ValueError(f"draws were produced for {draws.spec.name}, not {spec.name}")
    im = np.sort(np.asarray(im_grid, dtype=float))
    if im.size == 0:
        raise ValueError("im grid is empty")
    probs, exc = posterior_curves(draws, spec, im, convention)
    # drop the trivial column: P(DS > K) = 0, P(DS >= 1) = 1
    exc = exc[..., :-1] if convention == "strict" else exc[..., 1:]
    q = [(1 - level) / 2, 0.5, 1 - (1 - level) / 2]

    def summarise(a):
        lo, med, hi = np.quantile(a, q, axis=0)
        return {"median": med, "lower": np.minimum(lo, med), "upper": np.maximum(hi, med)}

    return FragilityBands(im, level, summarise(exc), summarise(probs), convention)
