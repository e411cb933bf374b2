"""Fully connected networks with hand-written backprop and Adam.

Parameters are immutable snapshots: every update returns a new
:class:`MlpParameters` and leaves its input untouched, so rollout workers can
read a snapshot while the trainer produces the next one.

Weights are stored as ``(fan_in, fan_out)`` matrices and inputs are batches of
row vectors, ``y = tanh(x @ W + b)`` for hidden layers and ``y = x @ W + b``
(optionally ``tanh``-squashed) for the output layer.
"""

from __future__ import annotations

import dataclasses
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
LOG_2PI = math.log(2.0 * math.pi)
LOSSES = ("mse", "gaussian_nll")

FILE_MAGIC = b"CPI2MLP1"


class NonFiniteLossError(FloatingPointError):
    """Raised when a training step would apply a non-finite loss or gradient."""


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def _layer_views(sizes: tuple[int, ...], flat: np.ndarray):
    weights, biases = [], []
    pos = 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[pos : pos + a * b].reshape(a, b))
        pos += a * b
        biases.append(flat[pos : pos + b])
        pos += b
    return tuple(weights), tuple(biases)


def n_parameters(sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass(frozen=True)
class MlpParameters:
    """One network's parameters as a flat vector plus per-layer views.

    The flat layout is layer order, each layer's row-major weights before its
    biases (the on-disk layout as well).
    """

    layer_sizes: tuple[int, ...]
    flat: np.ndarray
    adam: AdamState
    output_activation: str = "linear"
    weights: tuple[np.ndarray, ...] = dataclasses.field(init=False, repr=False, compare=False)
    biases: tuple[np.ndarray, ...] = dataclasses.field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.flat.shape != (n_parameters(self.layer_sizes),):
            raise ValueError("flat parameter vector does not match layer sizes")
        weights, biases = _layer_views(self.layer_sizes, self.flat)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def with_flat(self, flat: np.ndarray, adam: AdamState | None = None) -> "MlpParameters":
        return MlpParameters(self.layer_sizes, flat, self.adam if adam is None else adam, self.output_activation)


def _zero_adam(n: int) -> AdamState:
    return AdamState(m=np.zeros(n), v=np.zeros(n), t=0)


def mlp_init(
    layer_sizes: Sequence[int],
    seed,
    output_scale: float = 1.0,
    output_activation: str = "linear",
) -> MlpParameters:
    """Fan-in scaled uniform weights (variance ``1/fan_in``), zero biases.

    ``output_scale`` shrinks the last layer, e.g. 0.01 for networks that
    should start close to a zero prediction.
    """
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValueError("an MLP needs at least an input and an output layer")
    if any(s < 1 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    if output_activation not in ("linear", "tanh"):
        raise ValueError(f"unknown output activation {output_activation!r}")
    rng = np.random.default_rng(seed)
    flat = np.zeros(n_parameters(sizes))
    weights, _ = _layer_views(sizes, flat)
    for i, w in enumerate(weights):
        limit = math.sqrt(3.0 / w.shape[0])
        w[...] = rng.uniform(-limit, limit, size=w.shape)
        if i == len(weights) - 1:
            w *= output_scale
    return MlpParameters(sizes, flat, _zero_adam(flat.size), output_activation)


def zeros_like_params(params: MlpParameters) -> MlpParameters:
    return MlpParameters(params.layer_sizes, np.zeros_like(params.flat), _zero_adam(params.flat.size), params.output_activation)


def _as_batch(params: MlpParameters, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValueError(f"expected input of width {params.in_dim}, got shape {x.shape}")
    return x, single


def mlp_forward(params: MlpParameters, x) -> np.ndarray:
    """Evaluates the network on one input vector or a ``(batch, in_dim)`` array."""
    h, single = _as_batch(params, x)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last or params.output_activation == "tanh":
            h = np.tanh(h)
    return h[0] if single else h


def forward_with_cache(params: MlpParameters, x) -> tuple[np.ndarray, list[np.ndarray]]:
    """Batched forward pass that also returns every layer's activation."""
    h, _ = _as_batch(params, x)
    acts = [h]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last or params.output_activation == "tanh":
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def backward(params: MlpParameters, acts: list[np.ndarray], grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reverse-mode pass. Returns ``(flat_param_grad, input_grad)``."""
    grad = np.empty_like(params.flat)
    gw, gb = _layer_views(params.layer_sizes, grad)
    n = len(params.weights)
    g = np.asarray(grad_out, dtype=float)
    for i in reversed(range(n)):
        if i < n - 1 or params.output_activation == "tanh":
            g = g * (1.0 - acts[i + 1] ** 2)
        np.matmul(acts[i].T, g, out=gw[i])
        np.sum(g, axis=0, out=gb[i])
        g = g @ params.weights[i].T
    return grad, g


def loss_and_grad_output(pred: np.ndarray, target: np.ndarray, loss: str, sigma=None):
    """Mean batch loss and its gradient with respect to ``pred``."""
    diff = pred - target
    batch = pred.shape[0]
    if loss == "mse":
        value = float(np.mean(diff**2))
        grad = 2.0 * diff / diff.size
    elif loss == "gaussian_nll":
        if sigma is None:
            raise ValueError("gaussian_nll needs sigma")
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (pred.shape[1],))
        if np.any(sigma <= 0):
            raise ValueError("sigma must be > 0")
        z = diff / sigma
        per_sample = 0.5 * np.sum(z**2, axis=1) + np.sum(np.log(sigma)) + 0.5 * pred.shape[1] * LOG_2PI
        value = float(np.mean(per_sample))
        grad = diff / sigma**2 / batch
    else:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    return value, grad


def loss_and_grads(params: MlpParameters, inputs, targets, loss: str = "mse", sigma=None):
    """Returns ``(loss, flat_param_grad)`` of the mean batch loss."""
    pred, acts = forward_with_cache(params, inputs)
    targets = np.asarray(targets, dtype=float).reshape(pred.shape)
    value, grad_out = loss_and_grad_output(pred, targets, loss, sigma)
    grad, _ = backward(params, acts, grad_out)
    return value, grad


def adam_step(
    params: MlpParameters,
    grad: np.ndarray,
    lr: float,
    betas: tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
) -> MlpParameters:
    if not np.all(np.isfinite(grad)):
        raise NonFiniteLossError("non-finite gradient")
    b1, b2 = betas
    t = params.adam.t + 1
    m = b1 * params.adam.m + (1.0 - b1) * grad
    v = b2 * params.adam.v + (1.0 - b2) * grad * grad
    step = (lr / (1.0 - b1**t)) * m / (np.sqrt(v / (1.0 - b2**t)) + eps)
    return params.with_flat(params.flat - step, AdamState(m=m, v=v, t=t))


def train_step(
    params: MlpParameters,
    inputs,
    targets,
    loss: str = "mse",
    lr: float = 1e-3,
    sigma=None,
) -> tuple[MlpParameters, float]:
    """One Adam step on the mean batch loss.

    Raises:
        NonFiniteLossError: if the loss or a gradient is not finite. The
            input parameters are left as they were.
    """
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    if inputs.shape[0] == 0:
        raise ValueError("empty batch")
    value, grad = loss_and_grads(params, inputs, targets, loss, sigma)
    if not math.isfinite(value):
        raise NonFiniteLossError(f"non-finite {loss} loss: {value}")
    return adam_step(params, grad, lr), value


def polyak(target: MlpParameters, online: MlpParameters, tau: float) -> MlpParameters:
    """``target <- tau * online + (1 - tau) * target``; optimizer state kept."""
    if tau == 0.0:
        return target
    if tau == 1.0:
        return target.with_flat(online.flat.copy())
    return target.with_flat(tau * online.flat + (1.0 - tau) * target.flat)


# ---------------------------------------------------------------------------
# Gaussian policy head
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianPolicyHead:
    """Diagonal Gaussian policy: network mean, fixed standard deviation."""

    mean_net: MlpParameters
    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), (self.mean_net.out_dim,)).copy()
        object.__setattr__(self, "sigma", sigma)

    def mean(self, state) -> np.ndarray:
        return mlp_forward(self.mean_net, state)


def gaussian_log_prob(head: GaussianPolicyHead, state, action) -> np.ndarray | float:
    """Log-density of ``action`` under the policy at ``state`` (batched or single)."""
    if np.any(head.sigma <= 0):
        raise ValueError("sigma must be > 0")
    mean = head.mean(state)
    return log_prob_from_mean(mean, head.sigma, action)


def log_prob_from_mean(mean, sigma, action):
    z = (np.asarray(action, dtype=float) - mean) / sigma
    out = -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(sigma)) - 0.5 * z.shape[-1] * LOG_2PI
    return float(out) if np.ndim(out) == 0 else out


def gaussian_sample(head: GaussianPolicyHead, state, rng: np.random.Generator) -> np.ndarray:
    mean = head.mean(state)
    return mean + head.sigma * rng.standard_normal(np.shape(mean))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_params(params: MlpParameters, path) -> None:
    """Writes ``magic, n_layers, layer_sizes`` then float64 LE parameters.

    Integers in the header are unsigned 32-bit little-endian. Parameters
    follow in layer order, each layer's row-major ``(fan_in, fan_out)``
    weights before its biases. Optimizer state is not saved.
    """
    header = FILE_MAGIC + struct.pack(f"<I{len(params.layer_sizes)}I", len(params.layer_sizes), *params.layer_sizes)
    payload = params.flat.astype("<f8").tobytes()
    Path(path).write_bytes(header + payload)


def load_params(path, output_activation: str = "linear") -> MlpParameters:
    data = Path(path).read_bytes()
    if not data.startswith(FILE_MAGIC):
        raise ValueError(f"{path}: not an MLP parameter file")
    offset = len(FILE_MAGIC)
    (n,) = struct.unpack_from("<I", data, offset)
    offset += 4
    sizes = struct.unpack_from(f"<{n}I", data, offset)
    offset += 4 * n
    flat = np.frombuffer(data, dtype="<f8", offset=offset).astype(float)
    if flat.size != n_parameters(sizes):
        raise ValueError(f"{path}: expected {n_parameters(sizes)} parameters, found {flat.size}")
    return MlpParameters(tuple(sizes), flat, _zero_adam(flat.size), output_activation)
