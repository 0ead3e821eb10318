"""Cumulative log-survival curves by composite trapezoidal quadrature.

log S(t | x) = -integral of h from 0 to t.  The integrand does not depend on
the running state, so the initial-value problem collapses to cumulative
quadrature: one sweep over refined panels yields log S at every checkpoint
time of a batch.  Differentiating the quadrature sum itself
(discretize-then-optimize) keeps parameter gradients exact.

Times in a :class:`TimeGrid` are in original dataset units; hazard
evaluations scale them internally through the ``TimeScaler``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import jax.numpy as jnp
import numpy as np

from .model import HazardNetParams, ModelConfig, _hazard_grid, _log_hazard_scalar


class IntegrationError(RuntimeError):
    """Non-finite hazard encountered during quadrature."""


class GridLookupError(KeyError):
    """Requested time is not a checkpoint of the grid."""


@dataclass(frozen=True)
class TimeGrid:
    """Sorted unique checkpoint times of a batch plus quadrature refinement."""

    unique_times: np.ndarray
    subdivisions_per_interval: int = 8

    def __post_init__(self):
        times = np.asarray(self.unique_times, dtype=float)
        times.flags.writeable = False
        object.__setattr__(self, "unique_times", times)
        if times.ndim != 1 or times.size == 0:
            raise ValueError("unique_times must be a non-empty 1-d array")
        if not np.all(times > 0) or not np.all(np.isfinite(times)):
            raise ValueError("unique_times must be finite and strictly positive")
        if np.any(np.diff(times) <= 0):
            raise ValueError("unique_times must be strictly increasing")
        if self.subdivisions_per_interval < 1:
            raise ValueError("subdivisions_per_interval must be >= 1")

    def __len__(self):
        return self.unique_times.size


@dataclass(frozen=True)
class SurvivalCurve:
    """Checkpointed log S(t_k | x) for one covariate vector."""

    log_s: np.ndarray
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))


def quadrature_nodes(grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Refined node locations and the index of each checkpoint among them.

    Every interval between consecutive checkpoints (and between 0 and the
    first checkpoint) is split into ``subdivisions_per_interval`` equal
    panels; node 0 is time 0.
    """
    s = grid.subdivisions_per_interval
    edges = np.concatenate([[0.0], grid.unique_times])
    chunks = [np.array([0.0])]
    for a, b in zip(edges[:-1], edges[1:]):
        chunks.append(np.linspace(a, b, s + 1)[1:])
    nodes = np.concatenate(chunks)
    checkpoint_idx = s * np.arange(1, len(grid) + 1)
    return nodes, checkpoint_idx


def cumulative_checkpoint_integrals(values, nodes, checkpoint_idx):
    """Trapezoid cumulative integral of ``values`` over ``nodes`` at checkpoints.

    ``values`` has the node axis last; works on numpy or jax arrays and is
    differentiable through ``values``.
    """
    nodes = jnp.asarray(nodes)
    widths = nodes[1:] - nodes[:-1]
    panel = widths * (values[..., 1:] + values[..., :-1]) / 2.0
    cum = jnp.cumsum(panel, axis=-1)
    return cum[..., np.asarray(checkpoint_idx) - 1]


def _log_survival_matrix_jnp(params, cfg: ModelConfig, nodes_scaled, nodes, checkpoint_idx, X):
    """Differentiable core: log S at every checkpoint for every row of X."""
    h = _hazard_grid(params, cfg, nodes_scaled, X)
    return -cumulative_checkpoint_integrals(h, nodes, checkpoint_idx)


def log_survival_matrix(params: HazardNetParams, cfg: ModelConfig, scaler, X, grid: TimeGrid) -> np.ndarray:
    """log S(t_k | x_i) for every record (rows) and checkpoint time (columns)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    nodes, checkpoint_idx = quadrature_nodes(grid)
    nodes_scaled = scaler.scale(nodes)
    out = np.asarray(_log_survival_matrix_jnp(params, cfg, jnp.asarray(nodes_scaled), nodes, checkpoint_idx, jnp.asarray(X)))
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite hazard integral")
    return out


def log_survival_curve(params: HazardNetParams, cfg: ModelConfig, scaler, x, grid: TimeGrid) -> SurvivalCurve:
    """Checkpointed log-survival curve for a single covariate vector."""
    x = np.asarray(x, dtype=float)
    log_s = log_survival_matrix(params, cfg, scaler, x[None, :], grid)[0]
    return SurvivalCurve(log_s=log_s, x=x)


def log_density(params: HazardNetParams, cfg: ModelConfig, scaler, x, t: float, log_s_at_t: float) -> float:
    """log p(t | x) = log h(t | x) + log S(t | x)."""
    x = jnp.asarray(np.asarray(x, dtype=float))
    log_h = float(_log_hazard_scalar(params, cfg, jnp.asarray(scaler.scale(float(t))), x))
    return log_h + float(log_s_at_t)


def lookup_log_survival(curve: SurvivalCurve, grid: TimeGrid, t: float) -> float:
    """Checkpoint value at ``t``; no re-integration.  ``t`` must be on the grid."""
    idx = int(np.searchsorted(grid.unique_times, t))
    if idx >= len(grid) or grid.unique_times[idx] != t:
        raise GridLookupError(f"time {t} is not a grid checkpoint")
    return float(curve.log_s[idx])
