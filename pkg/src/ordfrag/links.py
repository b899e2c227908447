"""Link-function kernel: CDF, survival, log-CDF, quantile, density and
truncated sampling for the probit, logit and cloglog links.

Each link is identified by the distribution ``F`` of the latent noise term;
the link proper is ``F^{-1}``. The complementary log-log link uses the
minimum extreme-value distribution ``F(z) = 1 - exp(-exp(z))``, which is
asymmetric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

LINK_KINDS = ("probit", "logit", "cloglog")


@dataclass(frozen=True)
class Link:
    """Latent noise distribution selected by name."""

    kind: str = "probit"

    def __post_init__(self):
        if self.kind not in LINK_KINDS:
            raise ValueError(f"unknown link {self.kind!r}; expected one of {LINK_KINDS}")

    @property
    def symmetric(self) -> bool:
        return self.kind != "cloglog"

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "probit":
            return special.ndtr(z)
        if self.kind == "logit":
            return special.expit(z)
        return -np.expm1(-np.exp(z))

    def sf(self, z):
        """Survival function ``1 - F(z)`` evaluated without cancellation."""
        z = np.asarray(z, dtype=float)
        if self.kind == "probit":
            return special.ndtr(-z)
        if self.kind == "logit":
            return special.expit(-z)
        return np.exp(-np.exp(z))

    def logcdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "probit":
            return _log_ndtr(z)
        if self.kind == "logit":
            return -np.logaddexp(0.0, -z)
        with np.errstate(divide="ignore"):
            return np.log(-np.expm1(-np.exp(z)))

    def logsf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "probit":
            return _log_ndtr(-z)
        if self.kind == "logit":
            return -np.logaddexp(0.0, z)
        return -np.exp(z)

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "probit":
            return np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
        if self.kind == "logit":
            e = special.expit(z)
            return e * (1.0 - e)
        return np.exp(z - np.exp(z))

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        if np.any((p <= 0.0) | (p >= 1.0)) or np.any(np.isnan(p)):
            raise ValueError("quantile requires probabilities strictly inside (0, 1)")
        if self.kind == "probit":
            return special.ndtri(p)
        if self.kind == "logit":
            return special.logit(p)
        return np.log(-np.log1p(-p))

    def isf(self, q):
        """Inverse survival function, accurate for small ``q``."""
        q = np.asarray(q, dtype=float)
        if self.kind == "probit":
            return -special.ndtri(q)
        if self.kind == "logit":
            return -special.logit(q)
        return np.log(-np.log(q))

    @property
    def mean(self) -> float:
        """Mean of the noise distribution (Euler's constant shows up for cloglog)."""
        return -float(np.euler_gamma) if self.kind == "cloglog" else 0.0


def _log_ndtr(z):
    # log(ndtr) is accurate to ~1e-16 away from the far lower tail and is
    # three times cheaper than log_ndtr
    with np.errstate(divide="ignore"):
        out = np.array(np.log(special.ndtr(z)))
    far = z < -20.0
    if np.any(far):
        out[far] = special.log_ndtr(z[far])
    return out


def as_link(link) -> Link:
    return link if isinstance(link, Link) else Link(str(link))


def link_cdf(link, z):
    return as_link(link).cdf(z)


def link_quantile(link, p):
    return as_link(link).quantile(p)


def log_interval_prob(link, lower, upper):
    """``log(F(upper) - F(lower))`` for ``lower < upper``, stable in both tails.

    Bounds may be infinite. The difference is taken on whichever side of the
    distribution keeps the larger term away from 1.
    """
    link = as_link(link)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    lower, upper = np.broadcast_arrays(lower, upper)
    out = np.empty(lower.shape)
    # Right side of the median: work with survival functions.
    upper_side = lower > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        lsf_lo = link.logsf(lower[upper_side])
        lsf_hi = link.logsf(upper[upper_side])
        out[upper_side] = lsf_lo + _log1mexp(lsf_hi - lsf_lo)
        lo = lower[~upper_side]
        hi = upper[~upper_side]
        lc_hi = link.logcdf(hi)
        lc_lo = link.logcdf(lo)
        out[~upper_side] = lc_hi + _log1mexp(lc_lo - lc_hi)
    return out


def _log1mexp(a):
    """``log(1 - exp(a))`` for ``a <= 0``; returns ``-inf`` at ``a == 0``."""
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    small = a > -np.log(2.0)
    with np.errstate(divide="ignore"):
        out[small] = np.log(-np.expm1(a[small]))
        out[~small] = np.log1p(-np.exp(a[~small]))
    return out


def truncated_draws(link, mean, lower, upper, rng: np.random.Generator):
    """Vectorised inverse-CDF draws from ``mean + eps`` truncated to ``(lower, upper]``.

    ``eps`` follows the link distribution with unit scale. Arguments broadcast
    against each other; one uniform is consumed per output element.
    """
    link = as_link(link)
    mean, lower, upper = np.broadcast_arrays(
        np.asarray(mean, dtype=float), np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    )
    if np.any(lower >= upper):
        raise ValueError("truncated sampling requires lower < upper")
    a = lower - mean
    b = upper - mean
    u = rng.uniform(size=mean.shape)
    out = np.empty(mean.shape)
    # For intervals in the upper tail, invert the survival function instead.
    right = a > 0.0
    if np.any(right):
        sa = link.sf(a[right])
        sb = link.sf(b[right])
        q = sb + u[right] * (sa - sb)
        out[right] = link.isf(np.clip(q, np.finfo(float).tiny, 1.0 - 1e-16))
    left = ~right
    if np.any(left):
        fa = link.cdf(a[left])
        fb = link.cdf(b[left])
        p = fa + u[left] * (fb - fa)
        out[left] = link.quantile(np.clip(p, np.finfo(float).tiny, 1.0 - 1e-16))
    out = np.clip(out, a, b)
    return mean + out


def truncated_sample(link, mean: float, lower: float, upper: float, seed=None, size=None):
    """Draw from the link distribution centred at ``mean``, truncated to ``(lower, upper]``.

    Parameters
    ----------
    link : Link or str
    mean : float
        Location of the untruncated distribution (unit scale).
    lower, upper : float
        Truncation bounds; ``-inf`` / ``inf`` are allowed.
    seed : int or numpy Generator, optional
    size : int or tuple, optional
        Number of draws. ``None`` returns a single float.

    Returns
    -------
    float or ndarray
    """
    if not lower < upper:
        raise ValueError(f"lower ({lower}) must be below upper ({upper})")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = () if size is None else size
    draws = truncated_draws(link, np.full(shape, float(mean)), lower, upper, rng)
    return float(draws) if size is None else draws
