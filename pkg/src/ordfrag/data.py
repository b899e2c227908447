"""Intensity-measure / damage-state datasets: CSV ingestion, summaries and
synthetic generation."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np

DEFAULT_K = 5
DAMAGE_STATE_LABELS = ("none", "minor", "moderate", "major", "complete")


class DataError(ValueError):
    """Raised when input data violate the dataset contract."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable set of (intensity measure, damage state) observations.

    Damage states are integers in ``1..K`` whose order is the order of
    severity. The covariate used by every model is ``ln(im)``; units of
    ``im`` are whatever the source provides and are never rescaled.
    """

    im: np.ndarray
    ds: np.ndarray
    K: int = DEFAULT_K
    x: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        im = np.array(self.im, dtype=float).ravel()
        ds = np.array(self.ds).ravel()
        if im.size == 0:
            raise DataError("dataset is empty")
        if im.shape != ds.shape:
            raise DataError("im and ds must have the same length")
        if int(self.K) < 2:
            raise DataError("K must be at least 2")
        if not np.all(np.isfinite(im)) or np.any(im <= 0):
            bad = int(np.flatnonzero(~(np.isfinite(im) & (im > 0)))[0])
            raise DataError(f"im must be positive and finite (row {bad}: {im[bad]!r})")
        if not np.all(np.equal(np.mod(ds, 1), 0)):
            raise DataError("damage states must be integers")
        ds = ds.astype(int)
        if np.any((ds < 1) | (ds > self.K)):
            bad = int(np.flatnonzero((ds < 1) | (ds > self.K))[0])
            raise DataError(f"damage state out of range 1..{self.K} (row {bad}: {ds[bad]})")
        im.setflags(write=False)
        ds.setflags(write=False)
        object.__setattr__(self, "im", im)
        object.__setattr__(self, "ds", ds)
        object.__setattr__(self, "K", int(self.K))
        x = np.log(im)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.im.size

    def counts(self) -> np.ndarray:
        """Number of observations in each of the K categories."""
        return np.bincount(self.ds - 1, minlength=self.K)

    def empty_categories(self) -> list[int]:
        return [k + 1 for k, c in enumerate(self.counts()) if c == 0]

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(self.im[mask], self.ds[mask], self.K)

    def drop(self, index: int) -> "Dataset":
        keep = np.ones(self.n, dtype=bool)
        keep[index] = False
        return self.subset(keep)

    def __len__(self):
        return self.n

    def same_observations(self, other: "Dataset") -> bool:
        return (
            self.K == other.K
            and self.n == other.n
            and np.array_equal(self.im, other.im)
            and np.array_equal(self.ds, other.ds)
        )


def load_csv(path, K: int = DEFAULT_K) -> Dataset:
    """Read a UTF-8 CSV with header ``im,ds``.

    Rows failing validation abort the load; the message names the offending
    data row (1-based, header excluded). Lines starting with ``#`` are
    comments and may precede the header.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if [h.strip().lower() for h in header] != ["im", "ds"]:
            raise DataError(f"{path}: expected header 'im,ds', got {','.join(header)!r}")
        ims, dss = [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DataError(f"{path}: row {row_no}: expected 2 fields, got {len(row)}")
            try:
                im = float(row[0])
            except ValueError:
                raise DataError(f"{path}: row {row_no}: im {row[0]!r} is not a number") from None
            if not np.isfinite(im) or im <= 0:
                raise DataError(f"{path}: row {row_no}: im must be positive, got {row[0]!r}")
            try:
                ds = int(row[1])
            except ValueError:
                raise DataError(f"{path}: row {row_no}: ds {row[1]!r} is not an integer") from None
            if not 1 <= ds <= K:
                raise DataError(f"{path}: row {row_no}: ds {ds} outside 1..{K}")
            ims.append(im)
            dss.append(ds)
    if not ims:
        raise DataError(f"{path}: no observations")
    return Dataset(np.array(ims), np.array(dss), K)


def format_float(value: float) -> str:
    """Shortest decimal string that round-trips to the same double."""
    return repr(float(value))


def dataset_to_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    buf.write("im,ds\n")
    for im, d in zip(ds.im, ds.ds):
        buf.write(f"{format_float(im)},{int(d)}\n")
    return buf.getvalue()


def write_csv(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dataset_to_csv(ds))


def empirical_cum_freq(ds: Dataset) -> np.ndarray:
    """Cumulative proportions ``#{ds <= k} / n`` for ``k = 1..K-1``."""
    return np.cumsum(ds.counts())[:-1] / ds.n


def simulate_dataset(spec, params, im_values, seed) -> Dataset:
    """Draw one damage state per intensity value from the model's category law.

    Deterministic for a given ``seed``. The uniforms come from a stream
    reserved for this function, so reusing ``seed`` to generate
    ``im_values`` does not couple damage states to intensities.
    """
    from ._rng import stream
    from .models import category_probs

    im_values = np.asarray(im_values, dtype=float)
    if np.any(im_values <= 0):
        raise DataError("im values must be positive")
    params.validate(spec)
    probs = category_probs(spec, params, np.log(im_values))
    u = stream(seed, "simulate").uniform(size=im_values.size)
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0
    ds = 1 + (u[:, None] > cum).sum(axis=1)
    return Dataset(im_values, np.minimum(ds, spec.K), spec.K)


def random_im(seed: int, n: int, im_min: float = 0.05, im_max: float = 2.0) -> np.ndarray:
    """Log-uniform intensity values on ``[im_min, im_max]``."""
    from ._rng import stream

    if not 0 < im_min < im_max:
        raise DataError("need 0 < im_min < im_max")
    u = stream(seed, "im-design").uniform(size=n)
    return np.exp(np.log(im_min) + u * (np.log(im_max) - np.log(im_min)))
