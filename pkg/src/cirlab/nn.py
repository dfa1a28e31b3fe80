"""Minimal feed-forward encoder with explicit forward/backward passes.

Weights live in plain numpy arrays so every gradient is inspectable and
checkable against finite differences. Hidden layers share one activation;
the output layer is always linear so embeddings are unconstrained reals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericError, ShapeError

ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass
class ModelParams:
    """Weights and biases of a feed-forward encoder.

    weights[l] has shape (layer_dims[l+1], layer_dims[l]); biases[l] has
    length layer_dims[l+1]. The hidden activation applies to all layers
    except the last, which stays linear.
    """

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "ModelParams":
        return ModelParams(
            layer_dims=self.layer_dims,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
        )


@dataclass
class ForwardCache:
    """Per-layer intermediates from one forward pass.

    inputs[l] is the batch fed into layer l (inputs[0] is the raw input);
    preacts[l] is the affine output of layer l before its activation.
    """

    inputs: list[np.ndarray]
    preacts: list[np.ndarray]


@dataclass
class ParamGrads:
    """Gradients shaped congruently with a ModelParams."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass(frozen=True)
class LrSchedule:
    """Constant rate until decay_start_epoch, exponential decay afterward."""

    initial_rate: float
    decay_start_epoch: int = 0
    decay_factor_per_epoch: float = 1.0
    total_epochs: int = 1

    def __post_init__(self):
        if self.initial_rate <= 0:
            raise ConfigurationError(f"initial_rate must be > 0, got {self.initial_rate}")
        if self.decay_start_epoch < 0:
            raise ConfigurationError("decay_start_epoch must be >= 0")
        if not 0.0 < self.decay_factor_per_epoch <= 1.0:
            raise ConfigurationError(
                f"decay_factor_per_epoch must lie in (0, 1], got {self.decay_factor_per_epoch}"
            )
        if self.total_epochs < 1:
            raise ConfigurationError("total_epochs must be >= 1")

    def rate(self, epoch: int) -> float:
        exponent = max(0, epoch - self.decay_start_epoch)
        return self.initial_rate * self.decay_factor_per_epoch**exponent


def _check_activation(activation: str) -> None:
    if activation not in ACTIVATIONS:
        raise ConfigurationError(
            f"unknown activation {activation!r}; expected one of {ACTIVATIONS}"
        )


def init_params(
    layer_dims: Sequence[int], activation: str = "relu", seed: int = 0
) -> ModelParams:
    """Create encoder weights scaled by 1/sqrt(fan-in), biases zero.

    Deterministic for a fixed seed.
    """
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise ConfigurationError(f"need at least input and output dims, got {dims}")
    if any(d <= 0 for d in dims):
        raise ConfigurationError(f"all layer dims must be positive, got {dims}")
    _check_activation(activation)

    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        scale = 1.0 / np.sqrt(fan_in)
        weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ModelParams(layer_dims=dims, weights=weights, biases=biases, activation=activation)


def _activate(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(pre, 0.0)
    if activation == "tanh":
        return np.tanh(pre)
    return pre


def _activate_grad(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (pre > 0.0).astype(pre.dtype)
    if activation == "tanh":
        t = np.tanh(pre)
        return 1.0 - t * t
    return np.ones_like(pre)


def forward(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the encoder on a B x d_in batch, returning B x d features and a cache."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"input batch must be 2-D, got shape {x.shape}")
    if x.shape[1] != params.input_dim:
        raise ShapeError(
            f"input has {x.shape[1]} columns, encoder expects {params.input_dim}"
        )
    if x.size and not np.all(np.isfinite(x)):
        raise NumericError("input batch contains non-finite values")

    inputs = [x]
    preacts = []
    h = x
    last = params.num_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        pre = h @ w.T + b
        preacts.append(pre)
        h = pre if l == last else _activate(pre, params.activation)
        if l != last:
            inputs.append(h)
    return h, ForwardCache(inputs=inputs, preacts=preacts)


def backward(params: ModelParams, cache: ForwardCache, grad_output: np.ndarray) -> ParamGrads:
    """Accumulate d(loss)/d(params) from d(loss)/d(output) by reverse passes."""
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if grad_output.shape != cache.preacts[-1].shape:
        raise ShapeError(
            f"grad_output shape {grad_output.shape} does not match the forward "
            f"output {cache.preacts[-1].shape}"
        )

    g_weights = [np.empty(0)] * params.num_layers
    g_biases = [np.empty(0)] * params.num_layers
    delta = grad_output  # d loss / d preact of the (linear) output layer
    for l in range(params.num_layers - 1, -1, -1):
        g_weights[l] = delta.T @ cache.inputs[l]
        g_biases[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l]) * _activate_grad(
                cache.preacts[l - 1], params.activation
            )
    return ParamGrads(weights=g_weights, biases=g_biases)


def input_gradient(params: ModelParams, cache: ForwardCache, grad_output: np.ndarray) -> np.ndarray:
    """d(loss)/d(input batch) for the same reverse pass as `backward`."""
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if grad_output.shape != cache.preacts[-1].shape:
        raise ShapeError("grad_output shape does not match the forward output")
    delta = grad_output
    for l in range(params.num_layers - 1, 0, -1):
        delta = (delta @ params.weights[l]) * _activate_grad(
            cache.preacts[l - 1], params.activation
        )
    return delta @ params.weights[0]


def sgd_step(params: ModelParams, grads: ParamGrads, rate: float) -> ModelParams:
    """Descend the loss: new = old - rate * grad, elementwise."""
    if rate <= 0:
        raise ConfigurationError(f"learning rate must be > 0, got {rate}")
    if len(grads.weights) != params.num_layers:
        raise ShapeError("gradient layer count does not match the params")
    new_w = []
    new_b = []
    for w, b, gw, gb in zip(params.weights, params.biases, grads.weights, grads.biases):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise ShapeError("gradient shapes do not match the params")
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NumericError("non-finite gradients")
        new_w.append(w - rate * gw)
        new_b.append(b - rate * gb)
    return ModelParams(
        layer_dims=params.layer_dims,
        weights=new_w,
        biases=new_b,
        activation=params.activation,
    )


def zero_grads(params: ModelParams) -> ParamGrads:
    return ParamGrads(
        weights=[np.zeros_like(w) for w in params.weights],
        biases=[np.zeros_like(b) for b in params.biases],
    )


def add_grads(a: ParamGrads, b: ParamGrads, scale: float = 1.0) -> ParamGrads:
    return ParamGrads(
        weights=[ga + scale * gb for ga, gb in zip(a.weights, b.weights)],
        biases=[ga + scale * gb for ga, gb in zip(a.biases, b.biases)],
    )


def grad_check(
    params: ModelParams,
    loss_closure: Callable[[ModelParams], tuple[float, ParamGrads]],
    epsilon: float = 1e-5,
) -> float:
    """Compare analytic gradients against central finite differences.

    loss_closure maps params to (loss, ParamGrads) and must be deterministic.
    Returns the maximum per-entry discrepancy, normalized by the largest
    gradient magnitude seen (per-entry relative error is meaningless for
    near-zero entries, where finite differences are pure rounding noise).
    """
    if epsilon <= 0:
        raise ConfigurationError(f"epsilon must be > 0, got {epsilon}")

    _, analytic = loss_closure(params)
    work = params.copy()

    def fd_entry(arr: np.ndarray, idx) -> float:
        orig = arr[idx]
        arr[idx] = orig + epsilon
        lo_hi, _ = loss_closure(work)
        arr[idx] = orig - epsilon
        lo_lo, _ = loss_closure(work)
        arr[idx] = orig
        return (lo_hi - lo_lo) / (2.0 * epsilon)

    max_diff = 0.0
    max_mag = 0.0
    for kind in ("weights", "biases"):
        arrays = getattr(work, kind)
        grads = getattr(analytic, kind)
        for arr, ga in zip(arrays, grads):
            for idx in np.ndindex(arr.shape):
                fd = fd_entry(arr, idx)
                an = float(ga[idx])
                max_diff = max(max_diff, abs(fd - an))
                max_mag = max(max_mag, abs(fd), abs(an))
    if max_mag == 0.0:
        return 0.0
    return max_diff / max_mag
