"""Analytical fragility: log-linear demand model, closed-form lognormal
fragility and sampled damage states with ordered limit-state capacities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from ._rng import stream
from .data import Dataset

MIN_ACCEPTANCE = 1e-3
PROBE_SIZE = 4000


class AnalyticError(ValueError):
    pass


@dataclass(frozen=True)
class Psdm:
    """Demand model ``ln D = ln_a0 + a1 ln(im) + beta_d * eps``."""

    ln_a0: float
    a1: float
    beta_d: float

    def __post_init__(self):
        if not self.beta_d >= 0:
            raise AnalyticError("beta_d must be non-negative")

    def median_log_demand(self, im):
        return self.ln_a0 + self.a1 * np.log(np.asarray(im, dtype=float))


@dataclass(frozen=True, eq=False)
class CapacityModel:
    """Lognormal limit-state capacities, one per damage-state boundary."""

    ln_sc: np.ndarray
    beta_c: np.ndarray

    def __post_init__(self):
        ln_sc = np.atleast_1d(np.asarray(self.ln_sc, dtype=float))
        beta_c = np.broadcast_to(np.asarray(self.beta_c, dtype=float), ln_sc.shape).copy()
        if ln_sc.size < 1 or np.any(np.diff(ln_sc) <= 0):
            raise AnalyticError("median log-capacities must be strictly increasing")
        if np.any(beta_c < 0) or not np.all(np.isfinite(beta_c)):
            raise AnalyticError("beta_c must be finite and non-negative")
        object.__setattr__(self, "ln_sc", ln_sc)
        object.__setattr__(self, "beta_c", beta_c)

    @property
    def n_states(self) -> int:
        return self.ln_sc.size

    @property
    def K(self) -> int:
        return self.ln_sc.size + 1


def fit_psdm(samples, demand=None) -> Psdm:
    """Least-squares demand model on log-log scale.

    Parameters
    ----------
    samples : array_like
        Either an ``n x 2`` array of ``(im, demand)`` pairs, or the ``im``
        values when ``demand`` is given separately.
    demand : array_like, optional

    Returns
    -------
    Psdm
        ``beta_d`` is the residual standard deviation with divisor ``n - 2``.
    """
    if demand is None:
        arr = np.asarray(samples, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise AnalyticError("samples must be (im, demand) pairs")
        im, d = arr[:, 0], arr[:, 1]
    else:
        im = np.asarray(samples, dtype=float).ravel()
        d = np.asarray(demand, dtype=float).ravel()
    if im.size != d.size:
        raise AnalyticError("im and demand differ in length")
    if im.size < 3:
        raise AnalyticError("need at least 3 samples")
    if np.any(im <= 0) or np.any(d <= 0):
        raise AnalyticError("im and demand must be positive")
    x, y = np.log(im), np.log(d)
    if np.ptp(x) == 0:
        raise AnalyticError("all samples share one im value; slope not identifiable")
    xm, ym = x.mean(), y.mean()
    a1 = float(np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2))
    ln_a0 = float(ym - a1 * xm)
    resid = y - (ln_a0 + a1 * x)
    beta_d = float(np.sqrt(np.sum(resid**2) / (x.size - 2)))
    return Psdm(ln_a0, a1, beta_d)


def closed_form_fragility(psdm: Psdm, cap: CapacityModel, im, k: int):
    """Probability that demand exceeds limit state ``k`` (1-based) at ``im``.

    Lognormal demand and capacity give a lognormal fragility with median
    ``exp((ln_sc_k - ln_a0) / a1)`` and log-standard deviation
    ``sqrt(beta_d^2 + beta_c_k^2) / a1``.
    """
    if not psdm.a1 > 0:
        raise AnalyticError("a1 must be positive for fragility to increase with im")
    if not 1 <= k <= cap.n_states:
        raise AnalyticError(f"limit state k must be in 1..{cap.n_states}")
    x = np.log(np.asarray(im, dtype=float))
    ln_median = (cap.ln_sc[k - 1] - psdm.ln_a0) / psdm.a1
    disp = np.hypot(psdm.beta_d, cap.beta_c[k - 1]) / psdm.a1
    if disp == 0:
        # deterministic demand and capacity: a step at the median
        out = np.where(x > ln_median, 1.0, np.where(x < ln_median, 0.0, 0.5))
    else:
        out = special.ndtr((x - ln_median) / disp)
    return float(out) if np.ndim(out) == 0 else out


def closed_form_curves(psdm: Psdm, cap: CapacityModel, im_grid) -> np.ndarray:
    """``n_grid x (K-1)`` table of closed-form exceedance probabilities."""
    return np.column_stack([closed_form_fragility(psdm, cap, im_grid, k) for k in range(1, cap.n_states + 1)])


def lognormal_params(psdm: Psdm, cap: CapacityModel):
    """Medians and log-standard deviations of the closed-form curves."""
    theta = np.exp((cap.ln_sc - psdm.ln_a0) / psdm.a1)
    beta = np.hypot(psdm.beta_d, cap.beta_c) / psdm.a1
    return theta, beta


def _capacity_draws(cap: CapacityModel, rho: float, size: int, rng: np.random.Generator) -> np.ndarray:
    m = cap.n_states
    common = rng.standard_normal((size, 1))
    own = rng.standard_normal((size, m))
    z = np.sqrt(rho) * common + np.sqrt(1.0 - rho) * own
    return cap.ln_sc + cap.beta_c * z


def _ordered(c: np.ndarray) -> np.ndarray:
    return np.all(np.diff(c, axis=1) > 0, axis=1)


def ordering_acceptance(cap: CapacityModel, rho: float = 0.8, seed: int = 0, size: int = PROBE_SIZE) -> float:
    """Fraction of jointly drawn capacity vectors that come out ordered."""
    rng = stream(seed, "capacity-probe")
    return float(np.mean(_ordered(_capacity_draws(cap, rho, size, rng))))


def sample_damage_states(psdm: Psdm, cap: CapacityModel, ims, correlation: float = 0.8, seed: int = 0,
                         max_rounds: int = 10_000) -> Dataset:
    """Simulate one damage state per intensity value.

    Log demand is normal around the demand model. Log capacities follow an
    equicorrelated Gaussian copula with parameter ``correlation`` and are
    redrawn until strictly increasing across limit states. The damage state
    is one plus the number of capacities below the demand.

    Raises
    ------
    AnalyticError
        When fewer than 1 in 1000 probe draws are ordered.
    """
    if not 0.0 <= correlation <= 1.0:
        raise AnalyticError("correlation must lie in [0, 1]")
    ims = np.asarray(ims, dtype=float).ravel()
    if ims.size == 0 or np.any(ims <= 0):
        raise AnalyticError("ims must be a non-empty list of positive values")
    acc = ordering_acceptance(cap, correlation, seed)
    if acc < MIN_ACCEPTANCE:
        raise AnalyticError(
            f"only {acc:.2e} of capacity draws are ordered; use a larger correlation or smaller beta_c"
        )
    rng = stream(seed, "damage-states")
    ln_d = psdm.median_log_demand(ims) + psdm.beta_d * rng.standard_normal(ims.size)
    caps = np.empty((ims.size, cap.n_states))
    pending = np.arange(ims.size)
    for _ in range(max_rounds):
        if pending.size == 0:
            break
        c = _capacity_draws(cap, correlation, pending.size, rng)
        ok = _ordered(c)
        caps[pending[ok]] = c[ok]
        pending = pending[~ok]
    if pending.size:
        raise AnalyticError("capacity rejection sampling did not finish")
    ds = 1 + np.sum(caps < ln_d[:, None], axis=1)
    return Dataset(ims, ds, cap.K)
