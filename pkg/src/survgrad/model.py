"""Hazard network: MLP over (scaled time, covariates) with softplus output.

The network keeps the hazard strictly positive and exposes exact first- and
second-order derivatives (gradients of losses that themselves contain
``grad_x_hazard`` norms), which the gradient-penalty objective requires.

Architecture
------------
* time embedding: affine map of the scalar scaled time to ``time_embed_dim``
* layer 0 input: ``concat(x, time_embedding)``
* each hidden layer: affine -> layer norm -> add time injection -> ReLU
* output: affine -> softplus

``n_hidden_layers = 0`` is allowed; the output affine then acts directly on
``concat(x, time_embedding)``, so ``h = softplus(w . [x, z] + b)``.

Parameters are a flat ``dict`` keyed by dotted names (a JAX pytree).  The
canonical flat ordering used by :func:`flatten_params`, gradients, and the
JSON serialization is lexicographic in the key name, each array raveled in
row-major order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import jax
import jax.numpy as jnp
import numpy as np

jax.config.update("jax_enable_x64", True)

# Learnable state of the hazard network: dotted parameter name -> array.
HazardNetParams = dict


class NonFiniteLossError(RuntimeError):
    """A loss value or parameter gradient came out NaN/inf."""


@dataclass(frozen=True)
class ModelConfig:
    """Static shape/wiring description of the hazard network."""

    input_dim: int
    hidden_dim: int = 64
    n_hidden_layers: int = 2
    time_embed_dim: int = 8
    layer_norm_epsilon: float = 1e-5

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1 or self.time_embed_dim < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.n_hidden_layers < 0:
            raise ValueError("n_hidden_layers must be >= 0")
        if self.layer_norm_epsilon <= 0:
            raise ValueError("layer_norm_epsilon must be > 0")


@dataclass(frozen=True)
class GradientBundle:
    """Scalar loss value plus the parameter gradient in canonical flat order."""

    value: float
    grad: np.ndarray


@jax.custom_jvp
def _relu(x):
    return jnp.maximum(x, 0.0)


@_relu.defjvp
def _relu_jvp(primals, tangents):
    # Right-hand branch at the kink: derivative 1 at exactly 0.
    (x,), (t,) = primals, tangents
    return _relu(x), jnp.where(x >= 0, t, jnp.zeros_like(t))


def _layer_shapes(cfg: ModelConfig):
    """(name, shape) pairs for every learnable array, in declaration order."""
    d, h, e = cfg.input_dim, cfg.hidden_dim, cfg.time_embed_dim
    shapes = [("time_embed.w", (e,)), ("time_embed.b", (e,))]
    in_dim = d + e
    for i in range(cfg.n_hidden_layers):
        shapes += [
            (f"hidden.{i}.W", (h, in_dim)),
            (f"hidden.{i}.b", (h,)),
            (f"hidden.{i}.ln_gain", (h,)),
            (f"hidden.{i}.ln_bias", (h,)),
            (f"hidden.{i}.inject.W", (h, e)),
            (f"hidden.{i}.inject.b", (h,)),
        ]
        in_dim = h
    shapes += [("out.w", (in_dim,)), ("out.b", ())]
    return shapes


def param_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(shape, dtype=int)) for _, shape in _layer_shapes(cfg))


def init_params(cfg: ModelConfig, seed: int) -> HazardNetParams:
    """Deterministic initialization.

    Weights are uniform on ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``; biases are
    zero; layer-norm gain 1 and bias 0.  Identical ``(cfg, seed)`` give
    bitwise-identical parameters.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in _layer_shapes(cfg):
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("W", "w"):
            if name == "time_embed.w":
                fan_in = 1  # the scalar time is the only input
            else:
                fan_in = shape[1] if len(shape) == 2 else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif leaf == "ln_gain":
            params[name] = np.ones(shape)
        else:  # biases and ln_bias
            params[name] = np.zeros(shape)
    return params


def validate_params(params: HazardNetParams, cfg: ModelConfig) -> None:
    expected = dict(_layer_shapes(cfg))
    if set(params) != set(expected):
        raise ValueError(f"parameter names do not match config: {sorted(set(params) ^ set(expected))}")
    for name, arr in params.items():
        if tuple(np.shape(arr)) != expected[name]:
            raise ValueError(f"{name}: shape {np.shape(arr)} != expected {expected[name]}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name}: non-finite entries")


def _layer_norm(a, gain, bias, eps):
    mu = jnp.mean(a, axis=-1, keepdims=True)
    var = jnp.mean((a - mu) ** 2, axis=-1, keepdims=True)
    return (a - mu) / jnp.sqrt(var + eps) * gain + bias


def _raw_output(params, cfg: ModelConfig, t_scaled, x):
    """Pre-softplus scalar output for a single (t_scaled, x)."""
    z = params["time_embed.w"] * t_scaled + params["time_embed.b"]
    u = jnp.concatenate([x, z])
    for i in range(cfg.n_hidden_layers):
        a = params[f"hidden.{i}.W"] @ u + params[f"hidden.{i}.b"]
        n = _layer_norm(a, params[f"hidden.{i}.ln_gain"], params[f"hidden.{i}.ln_bias"], cfg.layer_norm_epsilon)
        u = _relu(n + params[f"hidden.{i}.inject.W"] @ z + params[f"hidden.{i}.inject.b"])
    return params["out.w"] @ u + params["out.b"]


def _hazard_scalar(params, cfg: ModelConfig, t_scaled, x):
    return jax.nn.softplus(_raw_output(params, cfg, t_scaled, x))


def _log_hazard_scalar(params, cfg: ModelConfig, t_scaled, x):
    # log(softplus(r)); for very negative r, softplus underflows but log h -> r.
    r = _raw_output(params, cfg, t_scaled, x)
    return jnp.where(r < -30.0, r, jnp.log(jax.nn.softplus(jnp.maximum(r, -30.0))))


def _hazard_grid(params, cfg: ModelConfig, ts_scaled, X):
    """Hazard on the product grid: (J,) times x (N, d) covariates -> (N, J).

    Equivalent to vmapping the scalar forward; written out so the
    time-embedding work is shared across records and the covariate affine is
    shared across times.
    """
    d = cfg.input_dim
    Z = ts_scaled[:, None] * params["time_embed.w"][None, :] + params["time_embed.b"]  # (J, e)
    if cfg.n_hidden_layers == 0:
        w = params["out.w"]
        raw = X @ w[:d] + (Z @ w[d:])[None, :] + params["out.b"]
        return jax.nn.softplus(raw)
    W0 = params["hidden.0.W"]
    a = X @ W0[:, :d].T
    a = a[:, None, :] + (Z @ W0[:, d:].T)[None, :, :] + params["hidden.0.b"]  # (N, J, h)
    u = None
    for i in range(cfg.n_hidden_layers):
        if i > 0:
            a = u @ params[f"hidden.{i}.W"].T + params[f"hidden.{i}.b"]
        n = _layer_norm(a, params[f"hidden.{i}.ln_gain"], params[f"hidden.{i}.ln_bias"], cfg.layer_norm_epsilon)
        inject = Z @ params[f"hidden.{i}.inject.W"].T + params[f"hidden.{i}.inject.b"]
        u = _relu(n + inject[None, :, :])
    raw = u @ params["out.w"] + params["out.b"]
    return jax.nn.softplus(raw)


def hazard(params: HazardNetParams, cfg: ModelConfig, t_scaled: float, x: np.ndarray) -> float:
    """Evaluate h(t | x) > 0 at an already-scaled time."""
    x = np.asarray(x, dtype=float)
    if x.shape != (cfg.input_dim,):
        raise ValueError(f"x has shape {x.shape}, expected ({cfg.input_dim},)")
    return float(_hazard_scalar(params, cfg, jnp.asarray(float(t_scaled)), jnp.asarray(x)))


def grad_x_hazard(params: HazardNetParams, cfg: ModelConfig, t_scaled: float, x: np.ndarray) -> np.ndarray:
    """Exact derivative of the hazard with respect to the covariates."""
    x = np.asarray(x, dtype=float)
    if x.shape != (cfg.input_dim,):
        raise ValueError(f"x has shape {x.shape}, expected ({cfg.input_dim},)")
    g = jax.grad(_hazard_scalar, argnums=3)(params, cfg, jnp.asarray(float(t_scaled)), jnp.asarray(x))
    return np.asarray(g)


def loss_and_param_grad(params: HazardNetParams, cfg: ModelConfig, loss) -> GradientBundle:
    """Value and parameter gradient of ``loss(params)``.

    ``loss`` may compose hazard evaluations, ``grad_x_hazard`` norms,
    quadrature sums, logs, and arithmetic; gradients of gradient-norm terms
    (second-order composition) are supported.
    """
    value, grads = jax.value_and_grad(loss)(params)
    value = float(value)
    if not np.isfinite(value):
        raise NonFiniteLossError("loss value is non-finite")
    for name in sorted(grads):
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteLossError(f"non-finite gradient in parameter block '{name}'")
    return GradientBundle(value=value, grad=flatten_params(grads))


def flatten_params(params: HazardNetParams) -> np.ndarray:
    """Canonical flat vector: keys in lexicographic order, arrays raveled."""
    return np.concatenate([np.ravel(np.asarray(params[k], dtype=float)) for k in sorted(params)])


def unflatten_params(flat: np.ndarray, cfg: ModelConfig) -> HazardNetParams:
    flat = np.asarray(flat, dtype=float)
    if flat.shape != (param_count(cfg),):
        raise ValueError(f"flat vector has length {flat.size}, expected {param_count(cfg)}")
    shapes = dict(_layer_shapes(cfg))
    params, offset = {}, 0
    for name in sorted(shapes):
        size = int(np.prod(shapes[name], dtype=int))
        params[name] = flat[offset : offset + size].reshape(shapes[name])
        offset += size
    return params


def params_to_json(params: HazardNetParams, cfg: ModelConfig) -> str:
    return json.dumps({"config": asdict(cfg), "values": flatten_params(params).tolist()})


def params_from_json(text: str) -> tuple[HazardNetParams, ModelConfig]:
    payload = json.loads(text)
    cfg = ModelConfig(**payload["config"])
    return unflatten_params(np.asarray(payload["values"]), cfg), cfg
