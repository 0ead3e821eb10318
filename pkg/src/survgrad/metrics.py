"""Evaluation metrics with inverse-probability-of-censoring weights.

The censoring distribution G is the Kaplan-Meier product-limit estimator fit
with censoring (e = 0) treated as the event.  Subject weights use the left
limit G(T-) so a record censored at T does not zero its own weight; terms
and pairs whose weight denominator hits zero are excluded.

Time-dependent concordance truncates pairs at the evaluation time and
weights by G(T_i-)^-2; the time-dependent AUC compares subjects failing by t
against those surviving past t with case weights 1/G(T_i-); the binomial
log-likelihood scores calibration and discrimination jointly.  Undefined
time points (no comparable pairs / no cases / no controls) carry a None
marker and are skipped by the aggregates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    """Metric undefined for the given inputs."""


SURVIVAL_CLAMP = 1e-7


@dataclass(frozen=True)
class KaplanMeierCurve:
    """Right-continuous product-limit step function, starting at 1."""

    event_times: np.ndarray
    survival_values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.event_times, dtype=float)
        values = np.asarray(self.survival_values, dtype=float)
        times.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "event_times", times)
        object.__setattr__(self, "survival_values", values)

    def evaluate(self, t) -> np.ndarray:
        """G(t): value of the step function at t (right-continuous)."""
        idx = np.searchsorted(self.event_times, np.asarray(t, dtype=float), side="right")
        padded = np.concatenate([[1.0], self.survival_values])
        return padded[idx]

    def evaluate_left(self, t) -> np.ndarray:
        """G(t-): value just before t."""
        idx = np.searchsorted(self.event_times, np.asarray(t, dtype=float), side="left")
        padded = np.concatenate([[1.0], self.survival_values])
        return padded[idx]


def km_censoring(times, events) -> KaplanMeierCurve:
    """Kaplan-Meier estimate of the censoring survival function.

    ``events`` is the usual failure indicator; censoring (e = 0) is treated
    as the event of interest here.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=int)
    if times.size == 0:
        raise MetricError("empty sample")
    order = np.argsort(times, kind="stable")
    t_sorted = times[order]
    censor_sorted = (events[order] == 0).astype(int)
    unique, first = np.unique(t_sorted, return_index=True)
    d = np.add.reduceat(censor_sorted, first)
    n_at_risk = times.size - first
    jump = d > 0
    factors = 1.0 - d[jump] / n_at_risk[jump]
    return KaplanMeierCurve(event_times=unique[jump], survival_values=np.cumprod(factors))


def _as_arrays(times, events, scores):
    T = np.asarray(times, dtype=float)
    e = np.asarray(events, dtype=int)
    s = np.asarray(scores, dtype=float)
    if not (T.shape == e.shape == s.shape):
        raise MetricError("times, events, and predictions must align")
    return T, e, s


def c_td_at(t: float, times, events, surv_at_t, censoring: KaplanMeierCurve):
    """Time-dependent concordance at t, or None when no pair is comparable.

    Pairs (i, j) with e_i = 1, T_i < T_j, T_i < t are weighted by
    G(T_i-)^-2; the pair scores 1 when S(t|x_i) < S(t|x_j), 0.5 on ties.
    """
    T, e, s = _as_arrays(times, events, surv_at_t)
    g_left = censoring.evaluate_left(T)
    with np.errstate(divide="ignore"):
        w = np.where(g_left > 0, 1.0 / np.where(g_left > 0, g_left, 1.0) ** 2, 0.0)
    comparable = (e[:, None] == 1) & (T[:, None] < T[None, :]) & (T[:, None] < t) & (g_left[:, None] > 0)
    weights = w[:, None] * comparable
    den = weights.sum()
    if den == 0:
        return None
    score = (s[:, None] < s[None, :]) + 0.5 * (s[:, None] == s[None, :])
    return float((weights * score).sum() / den)


def auc_at(t: float, times, events, surv_at_t, censoring: KaplanMeierCurve):
    """Time-dependent AUC at t, or None without both cases and controls.

    Cases are subjects with T_i <= t (weighted 1/G(T_i-)); controls have
    T_j > t; a case-control pair scores on S(t|x_i) <= S(t|x_j).
    """
    T, e, s = _as_arrays(times, events, surv_at_t)
    g_left = censoring.evaluate_left(T)
    is_case = (T <= t) & (g_left > 0)
    is_control = T > t
    if not is_case.any() or not is_control.any():
        return None
    omega = np.zeros_like(T)
    omega[is_case] = 1.0 / g_left[is_case]
    ordered = s[:, None] <= s[None, :]
    num = (omega[:, None] * (is_case[:, None] & is_control[None, :]) * ordered).sum()
    den = is_control.sum() * omega.sum()
    if den == 0:
        return None
    return float(num / den)


def nbll_at(t: float, times, events, surv_at_t, censoring: KaplanMeierCurve) -> float:
    """Negative binomial log-likelihood at t (predictions clamped before logs)."""
    T, e, s = _as_arrays(times, events, surv_at_t)
    s = np.clip(s, SURVIVAL_CLAMP, 1.0 - SURVIVAL_CLAMP)
    g_t = float(censoring.evaluate(t))
    if g_t <= 0:
        raise MetricError(f"censoring survival vanishes at t={t}")
    g_left = censoring.evaluate_left(T)
    failed = (T <= t) & (e == 1) & (g_left > 0)
    surviving = T > t
    total = np.sum(np.log(1.0 - s[failed]) / g_left[failed]) + np.sum(np.log(s[surviving]) / g_t)
    return float(-total / T.size)


@dataclass(frozen=True)
class MetricReport:
    """Aggregated scores plus the per-time values they were averaged from."""

    m_c_td: float
    m_auc: float
    i_nbll: float
    eval_times: np.ndarray
    c_td_values: tuple
    auc_values: tuple
    nbll_values: tuple
    nbll_grid_times: np.ndarray
    nbll_grid_values: np.ndarray

    def to_dict(self) -> dict:
        return {
            "m_c_td": self.m_c_td,
            "m_auc": self.m_auc,
            "i_nbll": self.i_nbll,
            "per_time": [
                {"t": float(t), "c_td": c, "auc": a, "nbll": b}
                for t, c, a, b in zip(self.eval_times, self.c_td_values, self.auc_values, self.nbll_values)
            ],
            "nbll_grid": [
                {"t": float(t), "nbll": float(v)} for t, v in zip(self.nbll_grid_times, self.nbll_grid_values)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _mean_defined(values) -> float:
    defined = [v for v in values if v is not None]
    if not defined:
        raise MetricError("metric undefined at every evaluation time")
    return float(np.mean(defined))


def aggregate(
    times,
    events,
    eval_times,
    surv_at_eval,
    nbll_grid_times,
    surv_at_nbll_grid,
) -> MetricReport:
    """Evaluate all three metrics and their aggregates on one subject set.

    ``surv_at_eval`` has one column per entry of ``eval_times`` (the
    concordance/AUC grid); ``surv_at_nbll_grid`` one column per NBLL
    integration time.  The censoring estimator is fit on the same subjects.
    """
    T = np.asarray(times, dtype=float)
    e = np.asarray(events, dtype=int)
    eval_times = np.asarray(eval_times, dtype=float)
    nbll_grid_times = np.asarray(nbll_grid_times, dtype=float)
    surv_at_eval = np.asarray(surv_at_eval, dtype=float)
    surv_at_nbll_grid = np.asarray(surv_at_nbll_grid, dtype=float)
    G = km_censoring(T, e)

    c_td_values = tuple(c_td_at(t, T, e, surv_at_eval[:, k], G) for k, t in enumerate(eval_times))
    auc_values = tuple(auc_at(t, T, e, surv_at_eval[:, k], G) for k, t in enumerate(eval_times))
    nbll_at_eval = tuple(nbll_at(t, T, e, surv_at_eval[:, k], G) for k, t in enumerate(eval_times))
    nbll_curve = np.array([nbll_at(t, T, e, surv_at_nbll_grid[:, k], G) for k, t in enumerate(nbll_grid_times)])

    span = nbll_grid_times[-1] - nbll_grid_times[0]
    if span <= 0:
        raise MetricError("NBLL integration grid must span a positive interval")
    i_nbll = float(np.trapezoid(nbll_curve, nbll_grid_times) / span)

    return MetricReport(
        m_c_td=_mean_defined(c_td_values),
        m_auc=_mean_defined(auc_values),
        i_nbll=i_nbll,
        eval_times=eval_times,
        c_td_values=c_td_values,
        auc_values=auc_values,
        nbll_values=nbll_at_eval,
        nbll_grid_times=nbll_grid_times,
        nbll_grid_values=nbll_curve,
    )
