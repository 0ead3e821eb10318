"""Censored survival datasets: CSV loading, summaries, splits, and scalers.

CSV contract: UTF-8, comma separated, header row; one time column, one
event column valued in {0, 1}; every other column a numeric feature.
Missing values are rejected, never imputed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import pandas as pd


class DatasetError(ValueError):
    """Malformed dataset file or invalid record."""


class SplitError(ValueError):
    """Requested split cannot be formed."""


@dataclass(frozen=True)
class SurvivalRecord:
    """One observation: covariates, duration, event indicator (1 = failed)."""

    x: np.ndarray
    t: float
    e: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        x.flags.writeable = False
        object.__setattr__(self, "x", x)
        if not np.all(np.isfinite(x)):
            raise DatasetError("covariates must be finite")
        if not np.isfinite(self.t) or self.t < 0:
            raise DatasetError(f"duration must be finite and >= 0, got {self.t}")
        if self.e not in (0, 1):
            raise DatasetError(f"event indicator must be 0 or 1, got {self.e}")


@dataclass(frozen=True)
class Dataset:
    """Immutable column store of survival records."""

    X: np.ndarray
    t: np.ndarray
    e: np.ndarray
    feature_names: tuple
    name: str = ""

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        t = np.asarray(self.t, dtype=float)
        e = np.asarray(self.e, dtype=int)
        for arr in (X, t, e):
            arr.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if X.ndim != 2 or X.shape[0] == 0:
            raise DatasetError("dataset must be non-empty")
        if len(self.feature_names) != X.shape[1]:
            raise DatasetError("feature_names length must match covariate dimension")
        if not (len(t) == len(e) == X.shape[0]):
            raise DatasetError("column lengths differ")

    def __len__(self):
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def records(self) -> list[SurvivalRecord]:
        return [SurvivalRecord(self.X[i], float(self.t[i]), int(self.e[i])) for i in range(self.n)]

    @classmethod
    def from_records(cls, records, feature_names, name=""):
        if not records:
            raise DatasetError("dataset must be non-empty")
        return cls(
            X=np.stack([r.x for r in records]),
            t=np.array([r.t for r in records]),
            e=np.array([r.e for r in records]),
            feature_names=tuple(feature_names),
            name=name,
        )

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        return Dataset(self.X[indices], self.t[indices], self.e[indices], self.feature_names, self.name)


@dataclass(frozen=True)
class DatasetStats:
    """Summary row: size, dimension, censoring share, event-time quartiles."""

    n: int
    d: int
    censoring_pct: float
    n_unique_times: int
    event_quantiles_25_50_75: tuple | None

    def to_json(self) -> str:
        payload = {
            "n": self.n,
            "d": self.d,
            "censoring_pct": self.censoring_pct,
            "n_unique_times": self.n_unique_times,
            "event_quantiles_25_50_75": list(self.event_quantiles_25_50_75)
            if self.event_quantiles_25_50_75 is not None
            else None,
        }
        return json.dumps(payload)


@dataclass(frozen=True)
class TimeScaler:
    """Affine time scaling from failure-time quartiles of the training split.

    scaled = (t - q2) / (q3 - q1)
    """

    q1: float
    q2: float
    q3: float

    def __post_init__(self):
        if not self.q1 <= self.q2 <= self.q3:
            raise DatasetError("quartiles must be non-decreasing")
        if self.q3 <= self.q1:
            raise DatasetError("q3 must exceed q1")

    def scale(self, t):
        return (np.asarray(t, dtype=float) - self.q2) / (self.q3 - self.q1)

    def unscale(self, s):
        return np.asarray(s, dtype=float) * (self.q3 - self.q1) + self.q2


@dataclass(frozen=True)
class FeatureScaler:
    """Per-feature z-score parameters fit on the training split."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        std = np.asarray(self.std, dtype=float)
        mean.flags.writeable = False
        std.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        if np.any(std <= 0):
            raise DatasetError("standard deviations must be > 0")

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std


def load_csv(path, time_column: str, event_column: str, name: str = "") -> Dataset:
    """Read a survival CSV; row order preserved, errors name the 0-based row."""
    frame = pd.read_csv(path)
    for col in (time_column, event_column):
        if col not in frame.columns:
            raise DatasetError(f"missing column '{col}' in {path}")
    feature_names = [c for c in frame.columns if c not in (time_column, event_column)]
    if not feature_names:
        raise DatasetError("no feature columns")

    for col in frame.columns:
        numeric = pd.to_numeric(frame[col], errors="coerce")
        bad = numeric.isna()
        if bad.any():
            row = int(np.argmax(bad.to_numpy()))
            raise DatasetError(f"non-numeric or missing value in column '{col}', row {row}")
        frame[col] = numeric

    t = frame[time_column].to_numpy(dtype=float)
    e_raw = frame[event_column].to_numpy(dtype=float)
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        row = int(np.argmax((t < 0) | ~np.isfinite(t)))
        raise DatasetError(f"negative or non-finite time at row {row}")
    if not np.all(np.isin(e_raw, (0.0, 1.0))):
        row = int(np.argmax(~np.isin(e_raw, (0.0, 1.0))))
        raise DatasetError(f"event value outside {{0, 1}} at row {row}")
    X = frame[feature_names].to_numpy(dtype=float)
    if not np.all(np.isfinite(X)):
        row = int(np.argmax(~np.isfinite(X).all(axis=1)))
        raise DatasetError(f"non-finite feature at row {row}")
    return Dataset(X=X, t=t, e=e_raw.astype(int), feature_names=tuple(feature_names), name=name or str(path))


def save_csv(ds: Dataset, path, time_column: str = "time", event_column: str = "event") -> None:
    """Write a dataset back out in the load_csv schema."""
    frame = pd.DataFrame(ds.X, columns=list(ds.feature_names))
    frame[time_column] = ds.t
    frame[event_column] = ds.e
    frame.to_csv(path, index=False)


def compute_stats(ds: Dataset) -> DatasetStats:
    """Size, censoring percentage, and event-time quartiles (linear interpolation)."""
    event_times = ds.t[ds.e == 1]
    quantiles = None
    if event_times.size:
        q = np.quantile(event_times, [0.25, 0.5, 0.75])
        quantiles = (float(q[0]), float(q[1]), float(q[2]))
    return DatasetStats(
        n=ds.n,
        d=ds.d,
        censoring_pct=100.0 * float(np.mean(ds.e == 0)),
        n_unique_times=int(np.unique(ds.t).size),
        event_quantiles_25_50_75=quantiles,
    )


def split(ds: Dataset, fractions=(0.7, 0.1, 0.2), seed: int = 42) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic permutation split; floor sizes, remainder to the test split."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise SplitError("need three positive fractions")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions must sum to 1, got {sum(fractions)}")
    perm = np.random.default_rng(seed).permutation(ds.n)
    n_train = int(np.floor(fractions[0] * ds.n))
    n_val = int(np.floor(fractions[1] * ds.n))
    n_test = ds.n - n_train - n_val
    if min(n_train, n_val, n_test) == 0:
        raise SplitError(f"split sizes ({n_train}, {n_val}, {n_test}) contain an empty part")
    return (
        ds.subset(perm[:n_train]),
        ds.subset(perm[n_train : n_train + n_val]),
        ds.subset(perm[n_train + n_val :]),
    )


def fit_time_scaler(train: Dataset) -> TimeScaler:
    """Quartiles of the observed failure-event times on the training split."""
    event_times = train.t[train.e == 1]
    if np.unique(event_times).size < 2:
        raise DatasetError("need at least two distinct failure-event times")
    q1, q2, q3 = np.quantile(event_times, [0.25, 0.5, 0.75])
    if q3 <= q1:
        raise DatasetError("degenerate failure-time quartiles (q3 == q1)")
    return TimeScaler(q1=float(q1), q2=float(q2), q3=float(q3))


def scale_time(scaler: TimeScaler, t):
    return scaler.scale(t)


def fit_feature_scaler(train: Dataset) -> FeatureScaler:
    """Mean/std per feature on the training split; constant columns get std 1."""
    mean = train.X.mean(axis=0)
    std = train.X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return FeatureScaler(mean=mean, std=std)


def standardize(scaler: FeatureScaler, x):
    return scaler.transform(x)


def standardized(ds: Dataset, scaler: FeatureScaler) -> Dataset:
    """Copy of the dataset with covariates pushed through the scaler."""
    return Dataset(scaler.transform(ds.X), ds.t, ds.e, ds.feature_names, ds.name)
