"""Maximum-likelihood fitting: log-likelihood, quasi-Newton/Newton maximisation,
observed-information standard errors and information criteria."""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .data import Dataset, empirical_cum_freq
from .models import (
    ModelSpec,
    ParamSet,
    from_unconstrained,
    log_category_probs,
    params_to_vector,
    to_unconstrained,
    vector_to_params,
)

log = logging.getLogger(__name__)

LOG_FLOOR = np.log(1e-300)


class FitError(RuntimeError):
    pass


class SingularInformationError(FitError):
    def __init__(self, message, weak_params):
        super().__init__(message)
        self.weak_params = weak_params


class ZeroCountWarning(UserWarning):
    """A damage state has no observations; its threshold gap is weakly identified."""


def dataset_fingerprint(ds: Dataset) -> str:
    h = hashlib.sha1()
    h.update(np.ascontiguousarray(ds.im).tobytes())
    h.update(np.ascontiguousarray(ds.ds).tobytes())
    h.update(str(ds.K).encode())
    return h.hexdigest()


def pointwise_log_lik(spec: ModelSpec, params: ParamSet, ds: Dataset) -> np.ndarray:
    """``ln pi_{y_i}(x_i)`` for every observation (``-inf`` where pi is zero)."""
    lp = log_category_probs(spec, params, ds.x)
    out = lp[np.arange(ds.n), ds.ds - 1]
    return np.where(np.isnan(out), -np.inf, out)


def log_likelihood(spec: ModelSpec, params: ParamSet, ds: Dataset) -> float:
    """Multinomial log-likelihood of the one-hot encoded damage states.

    Returns ``-inf`` if the model gives probability zero (or a negative
    probability, for unsafe cumulative models) to an observed category.
    """
    return float(np.sum(pointwise_log_lik(spec, params, ds)))


def floored_log_lik(spec: ModelSpec, params: ParamSet, ds: Dataset):
    """Pointwise log-likelihood clipped at ``ln(1e-300)`` plus the number of
    clipped observations."""
    ll = pointwise_log_lik(spec, params, ds)
    low = ll < LOG_FLOOR
    return np.where(low, LOG_FLOOR, ll), int(low.sum())


@dataclass
class MleFit:
    spec: ModelSpec
    estimates: ParamSet
    se: np.ndarray
    cov: np.ndarray
    loglik: float
    n_params: int
    converged: bool
    iterations: int
    n_obs: int
    grad_norm: float = np.nan
    message: str = ""
    warnings: list[str] = field(default_factory=list)
    dataset_id: str = ""
    null: bool = False
    n_floored: int = 0

    @property
    def param_names(self) -> list[str]:
        return self.spec.param_names if not self.null else self.spec.param_names[: self.spec.K - 1]

    @property
    def estimate_vector(self) -> np.ndarray:
        vec = params_to_vector(self.spec, self.estimates)
        return vec[: self.n_params] if self.null else vec

    @property
    def z(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.estimate_vector / self.se

    def table(self) -> list[dict]:
        """Rows of ``term, estimate, std.error, z_value, pr_z``.

        Wald z and two-sided p are given for every parameter, thresholds
        included.
        """
        from scipy import stats

        rows = []
        for name, est, se, z in zip(self.param_names, self.estimate_vector, self.se, self.z):
            rows.append(
                {
                    "term": name,
                    "estimate": float(est),
                    "std.error": float(se),
                    "z_value": float(z),
                    "pr_z": float(2 * stats.norm.sf(abs(z))) if np.isfinite(z) else float("nan"),
                }
            )
        return rows

    def to_dict(self) -> dict:
        return {
            "model": self.spec.name,
            "link": self.spec.link,
            "K": self.spec.K,
            "estimates": dict(zip(self.param_names, map(float, self.estimate_vector))),
            "se": dict(zip(self.param_names, map(float, self.se))),
            "cov": np.asarray(self.cov).tolist(),
            "table": self.table(),
            "loglik": float(self.loglik),
            "n_params": self.n_params,
            "n_obs": self.n_obs,
            "convergence": {
                "converged": bool(self.converged),
                "iterations": int(self.iterations),
                "grad_norm": float(self.grad_norm),
                "message": self.message,
                "n_floored": self.n_floored,
            },
            "warnings": list(self.warnings),
        }


# -- finite differences -------------------------------------------------------


def fd_gradient(f, theta, rel_step=1e-6):
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(theta.size):
        h = rel_step * (1.0 + abs(theta[i]))
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2.0 * h)
    return g


def fd_hessian(f, theta, rel_step=1e-4):
    """Central second differences; the larger step keeps round-off below
    truncation error for objectives of order n."""
    theta = np.asarray(theta, dtype=float)
    p = theta.size
    h = rel_step * (1.0 + np.abs(theta))
    H = np.empty((p, p))
    f0 = f(theta)
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h[i]
        H[i, i] = (f(theta + ei) - 2.0 * f0 + f(theta - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(p)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                f(theta + ei + ej) - f(theta + ei - ej) - f(theta - ei + ej) + f(theta - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return H


def fd_jacobian(f, theta, rel_step=1e-6):
    """Jacobian of a vector-valued ``f``; columns index parameters."""
    theta = np.asarray(theta, dtype=float)
    cols = []
    for i in range(theta.size):
        h = rel_step * (1.0 + abs(theta[i]))
        e = np.zeros_like(theta)
        e[i] = h
        cols.append((f(theta + e) - f(theta - e)) / (2.0 * h))
    return np.column_stack(cols)


# -- fitting ------------------------------------------------------------------


def initial_params(spec: ModelSpec, ds: Dataset) -> ParamSet:
    """Intercept-only starting point: thresholds at the link quantiles of the
    empirical cumulative frequencies, slopes and scale at zero."""
    n = ds.n
    if spec.family == "mlogit":
        counts = ds.counts() + 0.5
        a = np.log(counts[1:] / counts[0])
        return ParamSet(a, np.zeros(spec.K - 1))
    p = np.clip(empirical_cum_freq(ds), 0.5 / n, 1.0 - 0.5 / n)
    tau = spec.link_obj.quantile(p)
    for k in range(1, tau.size):
        if tau[k] <= tau[k - 1]:
            tau[k] = tau[k - 1] + 1e-2
    beta = np.zeros(spec.K - 1) if spec.cs else 0.0
    return ParamSet(tau, beta, 0.0)


def _objective_factory(spec: ModelSpec, ds: Dataset, fixed_theta=None, free=None):
    """Mean negative floored log-likelihood over the free unconstrained coords."""

    def full(theta_free):
        if free is None:
            return theta_free
        theta = fixed_theta.copy()
        theta[free] = theta_free
        return theta

    def objective(theta_free):
        params = from_unconstrained(spec, full(theta_free))
        ll, _ = floored_log_lik(spec, params, ds)
        return -float(np.mean(ll))

    return objective, full


def _newton_polish(obj, theta, tol, max_steps=8):
    """A few damped Newton steps with finite-difference derivatives."""
    g = fd_gradient(obj, theta)
    steps = 0
    while np.linalg.norm(g) > tol and steps < max_steps:
        H = fd_hessian(obj, theta)
        try:
            w, V = np.linalg.eigh(H)
        except np.linalg.LinAlgError:
            break
        w = np.maximum(np.abs(w), 1e-8)
        step = -(V @ ((V.T @ g) / w))
        f0 = obj(theta)
        t = 1.0
        while t > 1e-6:
            cand = theta + t * step
            if obj(cand) <= f0 + 1e-4 * t * g @ step:
                break
            t *= 0.5
        else:
            break
        theta = cand
        g = fd_gradient(obj, theta)
        steps += 1
    return theta, g, steps


def _check_preconditions(spec: ModelSpec, ds: Dataset, n_params: int):
    if ds.K != spec.K:
        raise FitError(f"dataset has K={ds.K} but model expects K={spec.K}")
    if ds.n < n_params:
        raise FitError(f"need at least {n_params} observations for {spec.name}, got {ds.n}")
    if np.count_nonzero(ds.counts()) < 2:
        raise FitError("at least two distinct damage states must be observed")


def fit_mle(spec: ModelSpec, ds: Dataset, tol: float = 1e-8, max_iter: int = 500, start=None) -> MleFit:
    """Maximise the log-likelihood of ``spec`` on ``ds``.

    Thresholds are optimised as ``tau_1`` plus log-increments so the ordering
    holds throughout. The optimiser is BFGS on finite-difference gradients,
    finished by Newton steps; convergence means the gradient norm of the mean
    negative log-likelihood (unconstrained scale) is at most ``tol``.
    Standard errors come from the inverse of the finite-difference observed
    information on the natural scale.
    """
    _check_preconditions(spec, ds, spec.n_params)
    fit_warnings = []
    for k in ds.empty_categories():
        msg = f"damage state {k} has no observations; adjacent threshold weakly identified"
        warnings.warn(msg, ZeroCountWarning, stacklevel=2)
        fit_warnings.append(msg)

    p0 = start if start is not None else initial_params(spec, ds)
    theta0 = to_unconstrained(spec, p0)
    obj, _ = _objective_factory(spec, ds)
    res = optimize.minimize(
        obj,
        theta0,
        jac=lambda t: fd_gradient(obj, t),
        method="BFGS",
        options={"gtol": tol, "maxiter": max_iter},
    )
    theta, g, polish = _newton_polish(obj, res.x, tol)
    grad_norm = float(np.linalg.norm(g))
    converged = bool(np.isfinite(grad_norm) and grad_norm <= tol)
    iterations = int(res.nit) + polish
    estimates = from_unconstrained(spec, theta)
    ll, n_floored = floored_log_lik(spec, estimates, ds)
    if n_floored:
        fit_warnings.append(f"{n_floored} observation(s) hit the log-probability floor")
    if not converged:
        fit_warnings.append(f"not converged: gradient norm {grad_norm:.3g} > {tol:g}")

    vec = params_to_vector(spec, estimates)
    cov = _covariance(spec, ds, vec, spec.param_names, fit_warnings, lambda v: vector_to_params(spec, v))
    return MleFit(
        spec=spec,
        estimates=estimates,
        se=np.sqrt(np.clip(np.diag(cov), 0.0, None)),
        cov=cov,
        loglik=float(np.sum(ll)),
        n_params=spec.n_params,
        converged=converged,
        iterations=iterations,
        n_obs=ds.n,
        grad_norm=grad_norm,
        message=str(res.message),
        warnings=fit_warnings,
        dataset_id=dataset_fingerprint(ds),
    )


def _covariance(spec, ds, vec, names, fit_warnings, to_params):
    def total(v):
        return float(np.sum(floored_log_lik(spec, to_params(v), ds)[0]))

    H = fd_hessian(total, vec)
    info = -0.5 * (H + H.T)
    w, V = np.linalg.eigh(info)
    if w[-1] <= 0 or w[0] <= 1e-10 * w[-1]:
        weak = sorted({names[int(np.argmax(np.abs(V[:, i])))] for i in np.flatnonzero(w <= 1e-10 * max(w[-1], 1e-300))})
        if ds.empty_categories():
            fit_warnings.append(f"observed information singular; weakly identified: {', '.join(weak)}")
            cov = np.full_like(info, np.nan)
            return cov
        raise SingularInformationError(
            f"observed information is singular; weakly identified parameters: {', '.join(weak)}", weak
        )
    return V @ np.diag(1.0 / w) @ V.T


def fit_null(spec: ModelSpec, ds: Dataset, tol: float = 1e-8, max_iter: int = 500) -> MleFit:
    """Intercept-only fit of the same family (all slopes and gamma fixed at 0)."""
    base = ModelSpec(spec.family, spec.link, False, False, spec.K) if spec.ordinal else spec
    _check_preconditions(base, ds, spec.K - 1)
    p0 = initial_params(base, ds)
    theta_full = to_unconstrained(base, p0)
    free = np.arange(spec.K - 1)
    obj, full = _objective_factory(base, ds, theta_full, free)
    res = optimize.minimize(
        obj, theta_full[free], jac=lambda t: fd_gradient(obj, t), method="BFGS",
        options={"gtol": tol, "maxiter": max_iter},
    )
    theta_free, g, polish = _newton_polish(obj, res.x, tol)
    estimates = from_unconstrained(base, full(theta_free))
    ll, n_floored = floored_log_lik(base, estimates, ds)
    grad_norm = float(np.linalg.norm(g))
    fit_warnings: list[str] = []
    tau = estimates.tau

    def to_params(v):
        return ParamSet(v, estimates.beta, 0.0)

    cov = _covariance(base, ds, tau.copy(), base.param_names[: spec.K - 1], fit_warnings, to_params)
    return MleFit(
        spec=base,
        estimates=estimates,
        se=np.sqrt(np.clip(np.diag(cov), 0.0, None)),
        cov=cov,
        loglik=float(np.sum(ll)),
        n_params=spec.K - 1,
        converged=grad_norm <= tol,
        iterations=int(res.nit) + polish,
        n_obs=ds.n,
        grad_norm=grad_norm,
        message=str(res.message),
        warnings=fit_warnings,
        dataset_id=dataset_fingerprint(ds),
        null=True,
        n_floored=n_floored,
    )


def info_criteria(fit: MleFit, null_fit: MleFit) -> dict[str, float]:
    """AIC, BIC and the McFadden / Cox-Snell pseudo-R^2 against ``null_fit``."""
    if fit.dataset_id != null_fit.dataset_id or fit.n_obs != null_fit.n_obs:
        raise FitError("fit and null fit were estimated on different datasets")
    n = fit.n_obs
    ll, ll0 = fit.loglik, null_fit.loglik
    return {
        "aic": -2.0 * ll + 2.0 * fit.n_params,
        "bic": -2.0 * ll + fit.n_params * np.log(n),
        "mcfadden_r2": 1.0 - ll / ll0,
        "coxsnell_r2": 1.0 - np.exp(2.0 * (ll0 - ll) / n),
    }


def score_contributions(fit: MleFit, ds: Dataset) -> np.ndarray:
    """Per-observation gradients of the log-likelihood on the natural scale
    (``n x P``), by central differences."""
    spec = fit.spec
    vec = params_to_vector(spec, fit.estimates)

    def pointwise(v):
        return floored_log_lik(spec, vector_to_params(spec, v), ds)[0]

    return fd_jacobian(pointwise, vec)
