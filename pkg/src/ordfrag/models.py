"""Category-probability and fragility-curve laws for the ordinal families.

Every ordinal family is assembled from ``K - 1`` binary cut-point equations
with predictor

    eta_k(x) = (tau_k - beta_k * x) / exp(gamma * x),     x = ln(IM)

where ``beta_k`` collapses to a shared ``beta`` unless category-specific
effects are switched on, and ``gamma`` is zero unless the variance
heterogeneity (location-scale) extension is on. The families differ only in
how the binary pieces are combined:

* cumulative:  P(Y <= k) = F(eta_k)
* sequential:  P(Y = k | Y >= k) = F(eta_k)          (stopping ratio)
* adjacent:    P(Y = k | Y in {k, k+1}) = F(eta_k)

``mlogit`` is the nominal multinomial logit with category 1 as reference; its
``tau`` holds the intercepts and ``beta`` the slopes of categories ``2..K``.

All product and ratio laws are evaluated in log space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .links import Link, as_link, log_interval_prob

FAMILIES = ("cumulative", "sequential", "adjacent", "mlogit")
_SHORT = {"cum": "cumulative", "seq": "sequential", "acat": "adjacent", "mlogit": "mlogit"}
_LONG = {v: k for k, v in _SHORT.items()}

# The eleven-model catalogue, in reference order.
CATALOG = (
    "cum",
    "seq",
    "acat",
    "cum+vh",
    "seq+vh",
    "acat+vh",
    "seq+vh+cs",
    "acat+vh+cs",
    "seq+cs",
    "acat+cs",
    "mlogit",
)


class ModelError(ValueError):
    pass


class NegativeProbabilityError(ModelError):
    """A cumulative model with category-specific slopes produced p_k < 0."""


@dataclass(frozen=True)
class ModelSpec:
    family: str = "cumulative"
    link: str = "probit"
    cs: bool = False
    vh: bool = False
    K: int = 5
    unsafe: bool = False

    def __post_init__(self):
        family = _SHORT.get(self.family, self.family)
        if family not in FAMILIES:
            raise ModelError(f"unknown family {self.family!r}")
        object.__setattr__(self, "family", family)
        if isinstance(self.link, Link):
            object.__setattr__(self, "link", self.link.kind)
        Link(self.link)
        if self.K < 2:
            raise ModelError("K must be at least 2")
        if family == "mlogit":
            if self.vh or self.cs:
                raise ModelError("mlogit takes no +vh/+cs modifiers")
            object.__setattr__(self, "link", "logit")
        if family == "cumulative" and self.cs and not self.unsafe:
            raise ModelError(
                "cumulative + category-specific slopes can yield negative probabilities; "
                "construct it with unsafe=True to opt in"
            )

    @property
    def name(self) -> str:
        return _LONG[self.family] + ("+vh" if self.vh else "") + ("+cs" if self.cs else "")

    @property
    def link_obj(self) -> Link:
        return Link(self.link)

    @property
    def ordinal(self) -> bool:
        return self.family != "mlogit"

    @property
    def n_slopes(self) -> int:
        return self.K - 1 if (self.cs or self.family == "mlogit") else 1

    @property
    def n_params(self) -> int:
        return (self.K - 1) + self.n_slopes + (1 if self.vh else 0)

    @property
    def param_names(self) -> list[str]:
        if self.family == "mlogit":
            return [f"a{k}" for k in range(2, self.K + 1)] + [f"b{k}" for k in range(2, self.K + 1)]
        names = [f"tau{k}" for k in range(1, self.K)]
        names += [f"beta{k}" for k in range(1, self.K)] if self.cs else ["beta"]
        if self.vh:
            names.append("gamma")
        return names

    def with_K(self, K: int) -> "ModelSpec":
        return ModelSpec(self.family, self.link, self.cs, self.vh, K, self.unsafe)


def parse_model(name: str, K: int = 5, link: str = "probit", unsafe: bool = False) -> ModelSpec:
    """Parse a catalogue name such as ``seq+vh+cs`` into a :class:`ModelSpec`."""
    parts = name.strip().lower().split("+")
    base, mods = parts[0], set(parts[1:])
    if base not in _SHORT or not mods <= {"vh", "cs"} or len(mods) != len(parts) - 1:
        raise ModelError(f"unknown model name {name!r}; catalogue: {', '.join(CATALOG)}")
    return ModelSpec(_SHORT[base], link, "cs" in mods, "vh" in mods, K, unsafe)


@dataclass(frozen=True, eq=False)
class ParamSet:
    """Model parameters on the natural scale.

    ``tau`` holds the K-1 ordered thresholds (mlogit: intercepts), ``beta`` a
    scalar slope or K-1 category-specific slopes, ``gamma`` the scale slope
    on ln(IM) used by the variance-heterogeneity extension.
    """

    tau: np.ndarray
    beta: np.ndarray | float
    gamma: float = 0.0

    def __post_init__(self):
        tau = np.array(self.tau, dtype=float).ravel()
        beta = np.array(self.beta, dtype=float)
        if beta.ndim > 1:
            beta = beta.ravel()
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", float(self.gamma))

    def validate(self, spec: ModelSpec) -> "ParamSet":
        K1 = spec.K - 1
        if self.tau.size != K1:
            raise ModelError(f"expected {K1} thresholds, got {self.tau.size}")
        if self.beta.size != spec.n_slopes:
            raise ModelError(f"expected {spec.n_slopes} slope(s), got {self.beta.size}")
        vals = np.concatenate([self.tau, self.beta.ravel(), [self.gamma]])
        if not np.all(np.isfinite(vals)):
            raise ModelError("parameters must be finite")
        if spec.ordinal and np.any(np.diff(self.tau) <= 0):
            raise ModelError(f"thresholds must be strictly increasing: {self.tau}")
        if not spec.vh and self.gamma != 0.0:
            raise ModelError("gamma is only allowed with variance heterogeneity (+vh)")
        return self

    def slopes(self, K: int) -> np.ndarray:
        """Slope per cut-point equation (length K-1)."""
        return np.broadcast_to(self.beta, (K - 1,)).astype(float)

    def as_dict(self, spec: ModelSpec) -> dict[str, float]:
        return dict(zip(spec.param_names, params_to_vector(spec, self).tolist()))


# -- parameter vectors --------------------------------------------------------


def params_to_vector(spec: ModelSpec, params: ParamSet) -> np.ndarray:
    parts = [params.tau, np.atleast_1d(params.beta)]
    if spec.vh:
        parts.append([params.gamma])
    return np.concatenate(parts).astype(float)


def vector_to_params(spec: ModelSpec, vec) -> ParamSet:
    vec = np.asarray(vec, dtype=float)
    K1 = spec.K - 1
    tau = vec[:K1]
    beta = vec[K1 : K1 + spec.n_slopes]
    if spec.n_slopes == 1 and not spec.cs:
        beta = float(beta[0])
    gamma = float(vec[K1 + spec.n_slopes]) if spec.vh else 0.0
    return ParamSet(tau, beta, gamma)


def to_unconstrained(spec: ModelSpec, params: ParamSet) -> np.ndarray:
    """Map to the optimiser/sampler space: tau_1 free, log-increments after."""
    vec = params_to_vector(spec, params)
    if spec.ordinal and spec.K > 2:
        tau = vec[: spec.K - 1]
        vec = vec.copy()
        vec[1 : spec.K - 1] = np.log(np.diff(tau))
    return vec


def from_unconstrained(spec: ModelSpec, theta) -> ParamSet:
    theta = np.asarray(theta, dtype=float)
    if spec.ordinal and spec.K > 2:
        theta = theta.copy()
        K1 = spec.K - 1
        theta[:K1] = np.cumsum(np.concatenate([theta[:1], np.exp(theta[1:K1])]))
    return vector_to_params(spec, theta)


def log_jacobian(spec: ModelSpec, theta) -> float:
    """log |d natural / d unconstrained| for the threshold transform."""
    if spec.ordinal and spec.K > 2:
        return float(np.sum(np.asarray(theta)[1 : spec.K - 1]))
    return 0.0


# -- predictors and probabilities ---------------------------------------------


def linear_predictor(spec: ModelSpec, params: ParamSet, x, k=None):
    """Cut-point predictor ``(tau_k - beta_k x) / exp(gamma x)``.

    With ``k`` (1-based) returns that equation only; otherwise an array of
    shape ``x.shape + (K-1,)``.
    """
    x = np.asarray(x, dtype=float)
    slopes = params.slopes(spec.K)
    eta = (params.tau - slopes * x[..., None]) / np.exp(params.gamma * x)[..., None]
    if k is None:
        return eta
    if not 1 <= k <= spec.K - 1:
        raise ModelError(f"cut-point index {k} outside 1..{spec.K - 1}")
    return eta[..., k - 1]


def _pad(eta, lo, hi):
    shape = eta.shape[:-1] + (1,)
    return np.concatenate([np.full(shape, lo), eta, np.full(shape, hi)], axis=-1)


def _cum_log_probs(link: Link, eta):
    p = _cum_raw_probs(link, eta)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(p)
    # tiny differences lose relative precision; redo those in log space
    tiny = ~(p > 1e-8)
    if np.any(tiny):
        full = _pad(eta, -np.inf, np.inf)
        out[tiny] = log_interval_prob(link, full[..., :-1][tiny], full[..., 1:][tiny])
    return out


def _seq_log_probs(link: Link, eta):
    lsf = link.logsf(eta)
    lcdf = link.logcdf(eta)
    zero = np.zeros(eta.shape[:-1] + (1,))
    prefix = np.concatenate([zero, np.cumsum(lsf, axis=-1)], axis=-1)
    return prefix + np.concatenate([lcdf, zero], axis=-1)


def _acat_log_numerators(link: Link, eta):
    lsf = link.logsf(eta)
    lcdf = link.logcdf(eta)
    zero = np.zeros(eta.shape[:-1] + (1,))
    # prod_{j<k} (1 - F(eta_j)) * prod_{j>=k} F(eta_j), with F(eta_K) = 1
    below = np.concatenate([zero, np.cumsum(lsf, axis=-1)], axis=-1)
    above = np.concatenate([np.cumsum(lcdf[..., ::-1], axis=-1)[..., ::-1], zero], axis=-1)
    return below + above


def _lse(a):
    """Log-sum-exp over the last axis, keeping it."""
    m = np.max(a, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return m + np.log(np.sum(np.exp(a - m), axis=-1, keepdims=True))


def _normalise_log(lnum):
    with np.errstate(invalid="ignore"):
        lse = _lse(lnum)
    if not np.all(np.isfinite(lse)):
        raise ModelError("every category numerator underflowed; predictor outside representable range")
    return lnum - lse


def _mlogit_log_probs(params: ParamSet, x):
    x = np.asarray(x, dtype=float)
    scores = params.tau + params.slopes(len(params.tau) + 1) * x[..., None]
    scores = np.concatenate([np.zeros(x.shape + (1,)), scores], axis=-1)
    return scores - _lse(scores)


def log_category_probs(spec: ModelSpec, params: ParamSet, x):
    """Log probabilities of every category, shape ``x.shape + (K,)``.

    Entries are ``-inf`` where a probability is exactly zero and ``nan``
    where an unsafe cumulative model yields a negative probability.
    """
    if spec.family == "mlogit":
        return _mlogit_log_probs(params, x)
    link = spec.link_obj
    eta = linear_predictor(spec, params, x)
    if spec.family == "cumulative":
        if spec.cs:
            p = _cum_raw_probs(link, eta)
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(p >= 0, np.log(np.abs(p)), np.nan)
        return _cum_log_probs(link, eta)
    if spec.family == "sequential":
        return _seq_log_probs(link, eta)
    return _normalise_log(_acat_log_numerators(link, eta))


def _cum_raw_probs(link: Link, eta):
    full = _pad(eta, -np.inf, np.inf)
    lo, hi = full[..., :-1], full[..., 1:]
    upper_side = lo > 0
    # sf-differences on the right of the median keep upper-tail precision
    return np.where(upper_side, link.sf(lo) - link.sf(hi), link.cdf(hi) - link.cdf(lo))


def cum_probs(spec: ModelSpec, params: ParamSet, x, check: bool = True):
    """Cumulative-model category probabilities ``F(eta_k) - F(eta_{k-1})``."""
    if spec.family != "cumulative":
        raise ModelError("cum_probs needs a cumulative spec")
    eta = linear_predictor(spec, params, x)
    p = _cum_raw_probs(spec.link_obj, eta)
    if check and spec.cs and np.any(p < -1e-12):
        bad = np.argwhere(p < -1e-12)[0]
        raise NegativeProbabilityError(
            f"negative probability {p[tuple(bad)]:.3g} for category {bad[-1] + 1}: "
            "category-specific cumulative fragility curves cross"
        )
    return p


def seq_probs(spec: ModelSpec, params: ParamSet, x):
    """Sequential (stopping-ratio) probabilities
    ``F(eta_k) * prod_{j<k} (1 - F(eta_j))``."""
    if spec.family != "sequential":
        raise ModelError("seq_probs needs a sequential spec")
    return np.exp(_seq_log_probs(spec.link_obj, linear_predictor(spec, params, x)))


def acat_probs(spec: ModelSpec, params: ParamSet, x):
    """Adjacent-category probabilities from the conditional binary laws
    ``P(Y = k | Y in {k, k+1}) = F(eta_k)``, normalised over the K categories."""
    if spec.family != "adjacent":
        raise ModelError("acat_probs needs an adjacent spec")
    lnum = _acat_log_numerators(spec.link_obj, linear_predictor(spec, params, x))
    return np.exp(_normalise_log(lnum))


def acat_logit_probs(spec: ModelSpec, params: ParamSet, x):
    """Adjacent-category logit probabilities built from the local logits
    ``log(p_k / p_{k+1}) = eta_k``: ``p_k`` is proportional to
    ``exp(sum_{j=k}^{K-1} eta_j)``."""
    eta = linear_predictor(spec, params, x)
    zero = np.zeros(eta.shape[:-1] + (1,))
    tail_sums = np.concatenate([np.cumsum(eta[..., ::-1], axis=-1)[..., ::-1], zero], axis=-1)
    return np.exp(tail_sums - logsumexp(tail_sums, axis=-1, keepdims=True))


def mlogit_probs(params: ParamSet, x):
    """Softmax over ``{0, a_k + b_k x}`` with category 1 as reference."""
    return np.exp(_mlogit_log_probs(params, x))


def category_probs(spec: ModelSpec, params: ParamSet, x):
    """Probabilities of the K categories at covariate ``x = ln(IM)``."""
    if spec.family == "cumulative":
        return cum_probs(spec, params, x)
    if spec.family == "sequential":
        return seq_probs(spec, params, x)
    if spec.family == "adjacent":
        return acat_probs(spec, params, x)
    return mlogit_probs(params, x)


# -- fragility curves ---------------------------------------------------------


def exceedance_from_probs(probs, convention: str = "strict"):
    """Turn category probabilities (..., K) into exceedance probabilities.

    ``strict`` gives ``P(DS > k)`` for ``k = 1..K`` (last column zero);
    ``geq`` gives ``P(DS >= k)`` for ``k = 1..K`` (first column one).
    """
    probs = np.asarray(probs, dtype=float)
    # tail sums rather than 1 - cumsum: no cancellation in the upper tail
    tail = np.cumsum(probs[..., ::-1], axis=-1)[..., ::-1]
    if convention == "strict":
        return np.concatenate([tail[..., 1:], np.zeros(probs.shape[:-1] + (1,))], axis=-1)
    if convention == "geq":
        out = tail.copy()
        out[..., 0] = 1.0
        return out
    raise ModelError(f"unknown exceedance convention {convention!r}")


def exceedance_probs(spec: ModelSpec, params: ParamSet, x, convention: str = "strict"):
    """Exceedance probabilities at ``x = ln(IM)``, shape ``x.shape + (K,)``."""
    if spec.family == "cumulative" and not spec.cs:
        sf = spec.link_obj.sf(linear_predictor(spec, params, x))
        zero = np.zeros(sf.shape[:-1] + (1,))
        strict = np.concatenate([sf, zero], axis=-1)
        if convention == "strict":
            return strict
        if convention == "geq":
            return np.concatenate([np.ones_like(zero), sf], axis=-1)
        raise ModelError(f"unknown exceedance convention {convention!r}")
    return exceedance_from_probs(category_probs(spec, params, x), convention)


def exceedance_curve(spec: ModelSpec, params: ParamSet, im_grid):
    """Fragility curves ``Fr_k(im) = P(DS > k | im)``, shape ``(len(im_grid), K-1)``.

    Rows follow ``im_grid`` sorted ascending.
    """
    im = np.sort(np.asarray(im_grid, dtype=float))
    if im.size == 0 or np.any(im <= 0):
        raise ModelError("im grid must be non-empty and positive")
    return exceedance_probs(spec, params, np.log(im))[:, :-1]


def seq_exceedance_chain(spec: ModelSpec, params: ParamSet, x, k: int, force: bool = False):
    """Continuation-ratio form of the sequential exceedance
    ``Fr_k = prod_{j<=k} F(beta_j x - tau_j)`` (scaled by the VH factor).

    It equals the stopping-ratio exceedance only for symmetric links, so
    cloglog is refused unless ``force`` is set.
    """
    link = spec.link_obj
    if not link.symmetric and not force:
        raise ModelError(
            "the continuation-ratio chain differs from the stopping-ratio model for the "
            "asymmetric cloglog link; use exceedance_probs (complement-sum form) instead"
        )
    if not 1 <= k <= spec.K - 1:
        raise ModelError(f"k must lie in 1..{spec.K - 1}")
    eta = linear_predictor(spec, params, x)[..., :k]
    return np.exp(np.sum(link.logcdf(-eta), axis=-1))


def cum_to_lognormal(params: ParamSet, spec: ModelSpec | None = None):
    """Median IMs ``theta_k = exp(tau_k / beta)`` and log-standard deviation
    ``1 / beta`` of the equivalent lognormal fragility curves.
    """
    if spec is not None:
        if spec.family != "cumulative" or spec.link != "probit":
            raise ModelError("lognormal form exists only for the cumulative probit model")
        if spec.vh:
            raise ModelError("no closed lognormal form with variance heterogeneity")
        if spec.cs:
            raise ModelError("lognormal conversion needs a shared slope")
    beta = np.asarray(params.beta, dtype=float)
    if beta.size != 1:
        raise ModelError("lognormal conversion needs a scalar slope")
    if params.gamma != 0.0:
        raise ModelError("no closed lognormal form with variance heterogeneity")
    beta = float(beta)
    if beta <= 0:
        raise ModelError("slope must be positive for fragility to increase with IM")
    return np.exp(params.tau / beta), 1.0 / beta
