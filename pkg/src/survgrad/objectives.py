"""Training objectives: censored likelihood, gradient-norm penalty, baselines.

The gradient-norm regularizer averages || d h / d x ||_2 at times drawn from
the (unnormalized) survival weights of the already-integrated batch curves.
Sampled times are treated as constants when differentiating with respect to
the parameters; no gradient flows through the sampling indices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import partial

import jax
import jax.numpy as jnp
import numpy as np

from .integrator import (
    SurvivalCurve,
    TimeGrid,
    _log_survival_matrix_jnp,
    log_survival_matrix,
    quadrature_nodes,
)
from .model import HazardNetParams, ModelConfig, _hazard_scalar, _log_hazard_scalar

REGULARIZER_KINDS = ("none", "hgp", "l1", "l2", "lci")


class ObjectiveError(RuntimeError):
    """Loss evaluation failed (non-finite value or degenerate inputs)."""


class SamplingError(RuntimeError):
    """Survival weights collapsed; cannot draw times."""


@dataclass(frozen=True)
class Batch:
    """Records plus the sorted unique-time grid they index into."""

    X: np.ndarray
    t: np.ndarray
    e: np.ndarray
    grid: TimeGrid
    time_index: np.ndarray

    def __post_init__(self):
        for name in ("X", "t", "e", "time_index"):
            arr = np.asarray(getattr(self, name))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not np.all(self.grid.unique_times[self.time_index] == self.t):
            raise ValueError("time_index does not map records onto the grid")

    def __len__(self):
        return self.X.shape[0]


def make_batch(X, t, e, subdivisions_per_interval: int = 8) -> Batch:
    """Build a batch and its unique-time grid.  Durations must be > 0."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.asarray(t, dtype=float)
    e = np.asarray(e, dtype=int)
    if np.any(t <= 0):
        raise ValueError("batch durations must be strictly positive")
    unique_times = np.unique(t)
    grid = TimeGrid(unique_times, subdivisions_per_interval)
    time_index = np.searchsorted(unique_times, t)
    return Batch(X=X, t=t, e=e, grid=grid, time_index=time_index)


@dataclass(frozen=True)
class RegularizerSpec:
    """Which penalty to add to the likelihood and with what strength."""

    kind: str = "none"
    lam: float = 0.0
    alpha: float = 0.0
    m_samples: int = 5

    def __post_init__(self):
        if self.kind not in REGULARIZER_KINDS:
            raise ValueError(f"kind must be one of {REGULARIZER_KINDS}")
        if self.lam < 0 or self.alpha < 0:
            raise ValueError("coefficients must be non-negative")
        if self.kind == "hgp" and self.m_samples < 1:
            raise ValueError("m_samples must be >= 1")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lambda": self.lam, "alpha": self.alpha, "m_samples": self.m_samples}

    @classmethod
    def from_dict(cls, payload: dict) -> "RegularizerSpec":
        payload = dict(payload)
        if "lambda" in payload:
            payload["lam"] = payload.pop("lambda")
        return cls(**payload)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "RegularizerSpec":
        return cls.from_dict(json.loads(text))


def _batch_consts(batch: Batch, scaler) -> dict:
    nodes, checkpoint_idx = quadrature_nodes(batch.grid)
    return {
        "nodes": jnp.asarray(nodes),
        "nodes_scaled": jnp.asarray(scaler.scale(nodes)),
        "checkpoint_idx": jnp.asarray(checkpoint_idx),
        "X": jnp.asarray(batch.X),
        "t_scaled": jnp.asarray(scaler.scale(batch.t)),
        "time_index": jnp.asarray(batch.time_index),
        "e": jnp.asarray(batch.e.astype(float)),
    }


def _nll_from_consts(params, cfg: ModelConfig, c: dict):
    log_s = _log_survival_matrix_jnp(params, cfg, c["nodes_scaled"], c["nodes"], c["checkpoint_idx"], c["X"])
    own_log_s = log_s[jnp.arange(c["X"].shape[0]), c["time_index"]]
    log_h = jax.vmap(_log_hazard_scalar, in_axes=(None, None, 0, 0))(params, cfg, c["t_scaled"], c["X"])
    log_lik = c["e"] * (log_h + own_log_s) + (1.0 - c["e"]) * own_log_s
    return -jnp.mean(log_lik)


@partial(jax.jit, static_argnums=(1,))
def _jit_nll(params, cfg, c):
    return _nll_from_consts(params, cfg, c)


@partial(jax.jit, static_argnums=(1,))
def _jit_log_survival(params, cfg, c):
    return _log_survival_matrix_jnp(params, cfg, c["nodes_scaled"], c["nodes"], c["checkpoint_idx"], c["X"])


def nll(params: HazardNetParams, cfg: ModelConfig, scaler, batch: Batch) -> float:
    """Mean censored negative log-likelihood over the batch.

    Failures contribute -(log h + log S) at their failure time; censored
    records contribute -log S at their censoring time.
    """
    value = float(_jit_nll(params, cfg, _batch_consts(batch, scaler)))
    if not np.isfinite(value):
        raise ObjectiveError("negative log-likelihood is non-finite")
    return value


def sample_survival_times(curve: SurvivalCurve, grid: TimeGrid, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw m times from the normalized checkpoint survival weights.

    A checkpoint index k is drawn with probability proportional to
    S(t_k | x), then the time is uniform on (t_{k-1}, t_k] with t_0 = 0.
    Uses only the stored curve; no re-integration.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    log_s = np.asarray(curve.log_s, dtype=float)
    if log_s.shape != (len(grid),):
        raise ValueError("curve and grid lengths differ")
    weights = np.exp(log_s - np.max(log_s))
    total = weights.sum()
    if not np.isfinite(total) or total <= 0:
        raise SamplingError("all survival weights underflowed")
    ks = rng.choice(len(grid), size=m, p=weights / total)
    edges = np.concatenate([[0.0], grid.unique_times])
    left, right = edges[ks], edges[ks + 1]
    return right - (right - left) * rng.random(m)


def _sample_times_matrix(log_s_matrix: np.ndarray, grid: TimeGrid, m: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty((log_s_matrix.shape[0], m))
    for i in range(log_s_matrix.shape[0]):
        out[i] = sample_survival_times(SurvivalCurve(log_s=log_s_matrix[i]), grid, m, rng)
    return out


def _grad_norm_mean(params, cfg: ModelConfig, times_scaled, X):
    """Mean over records and draws of || d h / d x ||_2; differentiable in params."""

    def one(ts, x):
        g = jax.grad(lambda xx: _hazard_scalar(params, cfg, ts, xx))(x)
        return jnp.linalg.norm(g)

    per_record = jax.vmap(lambda ts_row, x: jnp.mean(jax.vmap(lambda ts: one(ts, x))(ts_row)))
    return jnp.mean(per_record(times_scaled, X))


@partial(jax.jit, static_argnums=(1,))
def _jit_grad_norm_mean(params, cfg, times_scaled, X):
    return _grad_norm_mean(params, cfg, times_scaled, X)


def hgp(params: HazardNetParams, cfg: ModelConfig, scaler, batch: Batch, m: int, rng: np.random.Generator) -> float:
    """Survival-weighted mean gradient norm of the hazard over the batch."""
    log_s = log_survival_matrix(params, cfg, scaler, batch.X, batch.grid)
    times = _sample_times_matrix(log_s, batch.grid, m, rng)
    return float(_jit_grad_norm_mean(params, cfg, jnp.asarray(scaler.scale(times)), jnp.asarray(batch.X)))


def hgp_at_times(params: HazardNetParams, cfg: ModelConfig, scaler, X, times) -> float:
    """Penalty at fixed (record, draw) times; the deterministic core of ``hgp``."""
    times = np.atleast_2d(np.asarray(times, dtype=float))
    return float(_jit_grad_norm_mean(params, cfg, jnp.asarray(scaler.scale(times)), jnp.asarray(np.atleast_2d(X))))


def _l1_sum(params):
    return sum(jnp.sum(jnp.abs(params[k])) for k in sorted(params))


def _l2_sum(params):
    return sum(jnp.sum(params[k] ** 2) for k in sorted(params))


def l1_penalty(params: HazardNetParams, alpha: float) -> float:
    """alpha * sum of absolute values over all learnable parameters."""
    return float(alpha * _l1_sum(params))


def l2_penalty(params: HazardNetParams, alpha: float) -> float:
    """alpha * sum of squares over all learnable parameters."""
    return float(alpha * _l2_sum(params))


def default_lci_times(batch: Batch) -> np.ndarray:
    """Event-time deciles (10% .. 90%) of the batch."""
    event_times = batch.t[batch.e == 1]
    if event_times.size == 0:
        raise ObjectiveError("batch has no failure events")
    return np.quantile(event_times, np.arange(1, 10) / 10.0)


def _lci_consts(batch: Batch, scaler, eval_times) -> dict:
    eval_times = np.asarray(eval_times, dtype=float)
    unique_times = np.unique(eval_times)
    grid = TimeGrid(unique_times, batch.grid.subdivisions_per_interval)
    col = np.searchsorted(unique_times, eval_times)
    nodes, checkpoint_idx = quadrature_nodes(grid)
    # comparable[i, j, l]: record i failed before j and before eval time l
    pair = (batch.e[:, None] == 1) & (batch.t[:, None] < batch.t[None, :])
    time_ok = batch.t[:, None] < eval_times[None, :]
    mask = pair[:, :, None] & time_ok[:, None, :]
    per_time_pairs = mask.sum(axis=(0, 1))
    if not np.any(per_time_pairs > 0):
        raise ObjectiveError("no comparable pairs at any evaluation time")
    return {
        "nodes": jnp.asarray(nodes),
        "nodes_scaled": jnp.asarray(scaler.scale(nodes)),
        "checkpoint_idx": jnp.asarray(checkpoint_idx),
        "X": jnp.asarray(batch.X),
        "col": jnp.asarray(col),
        "mask": jnp.asarray(mask.astype(float)),
        "defined": jnp.asarray((per_time_pairs > 0).astype(float)),
    }


def _lci_from_consts(params, cfg: ModelConfig, c: dict):
    log_s = _log_survival_matrix_jnp(params, cfg, c["nodes_scaled"], c["nodes"], c["checkpoint_idx"], c["X"])
    surv = jnp.exp(log_s)[:, c["col"]]  # (N, L)
    diff = surv[None, :, :] - surv[:, None, :]  # S(t|x_j) - S(t|x_i)
    term = 1.0 + jax.nn.log_sigmoid(diff) / jnp.log(2.0)
    num = jnp.sum(c["mask"] * term, axis=(0, 1))
    den = jnp.sum(c["mask"], axis=(0, 1))
    bound = jnp.where(den > 0, num / jnp.where(den > 0, den, 1.0), 0.0)
    return -jnp.sum(bound * c["defined"]) / jnp.sum(c["defined"])


@partial(jax.jit, static_argnums=(1,))
def _jit_lci(params, cfg, c):
    return _lci_from_consts(params, cfg, c)


def lci_penalty(params: HazardNetParams, cfg: ModelConfig, scaler, batch: Batch, eval_times=None) -> float:
    """Negated concordance lower bound, averaged over evaluation times.

    Each comparable pair (i failed before j and before t) contributes
    1 + log2(sigmoid(S(t|x_j) - S(t|x_i))): 0 for indistinguishable
    predictions, approaching 1 for confidently correct ordering.
    """
    if eval_times is None:
        eval_times = default_lci_times(batch)
    return float(_jit_lci(params, cfg, _lci_consts(batch, scaler, eval_times)))


def total_loss(
    params: HazardNetParams,
    cfg: ModelConfig,
    scaler,
    batch: Batch,
    spec: RegularizerSpec,
    rng: np.random.Generator | None = None,
) -> float:
    """Likelihood term plus the configured penalty."""
    base = nll(params, cfg, scaler, batch)
    if spec.kind == "none":
        return base
    if spec.kind == "hgp":
        if rng is None:
            raise ValueError("hgp regularizer needs an rng")
        return base + spec.lam * hgp(params, cfg, scaler, batch, spec.m_samples, rng)
    if spec.kind == "l1":
        return base + l1_penalty(params, spec.alpha)
    if spec.kind == "l2":
        return base + l2_penalty(params, spec.alpha)
    return base + spec.alpha * lci_penalty(params, cfg, scaler, batch)


@partial(jax.jit, static_argnums=(1,))
def _jit_vag_none(params, cfg, c):
    return jax.value_and_grad(_nll_from_consts)(params, cfg, c)


@partial(jax.jit, static_argnums=(1,))
def _jit_vag_hgp(params, cfg, c, times_scaled, lam):
    def loss(p):
        return _nll_from_consts(p, cfg, c) + lam * _grad_norm_mean(p, cfg, times_scaled, c["X"])

    return jax.value_and_grad(loss)(params)


@partial(jax.jit, static_argnums=(1, 4))
def _jit_vag_lp(params, cfg, c, alpha, power):
    def loss(p):
        pen = _l1_sum(p) if power == 1 else _l2_sum(p)
        return _nll_from_consts(p, cfg, c) + alpha * pen

    return jax.value_and_grad(loss)(params)


@partial(jax.jit, static_argnums=(1,))
def _jit_vag_lci(params, cfg, c, lci_c, alpha):
    def loss(p):
        return _nll_from_consts(p, cfg, c) + alpha * _lci_from_consts(p, cfg, lci_c)

    return jax.value_and_grad(loss)(params)


def total_loss_and_grad(
    params: HazardNetParams,
    cfg: ModelConfig,
    scaler,
    batch: Batch,
    spec: RegularizerSpec,
    rng: np.random.Generator | None = None,
) -> tuple[float, HazardNetParams]:
    """Loss value and parameter-gradient pytree for one training step.

    For the gradient-norm penalty, times are sampled first from the current
    curves and held fixed while differentiating.
    """
    c = _batch_consts(batch, scaler)
    if spec.kind == "none":
        value, grads = _jit_vag_none(params, cfg, c)
    elif spec.kind == "hgp":
        if rng is None:
            raise ValueError("hgp regularizer needs an rng")
        log_s = np.asarray(_jit_log_survival(params, cfg, c))
        times = _sample_times_matrix(log_s, batch.grid, spec.m_samples, rng)
        value, grads = _jit_vag_hgp(params, cfg, c, jnp.asarray(scaler.scale(times)), spec.lam)
    elif spec.kind in ("l1", "l2"):
        value, grads = _jit_vag_lp(params, cfg, c, spec.alpha, 1 if spec.kind == "l1" else 2)
    else:
        value, grads = _jit_vag_lci(params, cfg, c, _lci_consts(batch, scaler, default_lci_times(batch)), spec.alpha)
    value = float(value)
    if not np.isfinite(value):
        raise ObjectiveError("training loss is non-finite")
    return value, {k: np.asarray(v) for k, v in grads.items()}
