"""Minimal feedforward-network engine on numpy.

Provides forward evaluation, reverse-mode parameter gradients for training,
and reverse-mode input gradients for optimizing over the input (the action
optimizer differentiates the surrogate w.r.t. its action inputs).  Hidden
activations are tanh so the input gradient exists everywhere; the output
layer is linear.  Nets are immutable values for inference; training returns
a new net.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 256
    step_size: float = 0.05
    seed: int = 0
    # None -> uniform in +-1/sqrt(fan_in) per layer; a float fixes the scale.
    init_scale: float | None = None
    momentum: float = 0.9

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.step_size <= 0:
            raise ValueError(f"invalid train config: {self}")
        if self.init_scale is not None and self.init_scale <= 0:
            raise ValueError("init_scale must be positive")


def _init_layers(layer_sizes, rng, init_scale=None):
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        scale = init_scale if init_scale is not None else 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-scale, scale, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-scale, scale, size=fan_out))
    return weights, biases


@dataclass(frozen=True)
class FeedforwardNet:
    """Fully connected net: tanh hidden layers, linear output.

    ``x_mean``/``x_std`` standardize inputs per feature before the first
    layer; gradients returned by :meth:`grad_input` are w.r.t. the raw input,
    i.e. the standardization chain rule is applied.
    """

    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    x_mean: np.ndarray
    x_std: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and output layer sizes")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[k + 1], self.layer_sizes[k])
            if w.shape != expect or b.shape != (expect[0],):
                raise ValueError(f"layer {k}: shapes {w.shape}/{b.shape} do not match {expect}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {k}: non-finite parameters")
        if self.x_mean.shape != (self.layer_sizes[0],) or self.x_std.shape != (self.layer_sizes[0],):
            raise ValueError("standardization vectors must match the input size")
        if not (self.x_std > 0).all():
            raise ValueError("x_std must be strictly positive")

    # -- construction -------------------------------------------------------

    @classmethod
    def initialize(
        cls,
        layer_sizes,
        seed: int,
        init_scale: float | None = None,
        x_mean: np.ndarray | None = None,
        x_std: np.ndarray | None = None,
    ) -> "FeedforwardNet":
        rng = np.random.default_rng(seed)
        weights, biases = _init_layers(layer_sizes, rng, init_scale)
        d = layer_sizes[0]
        return cls(
            layer_sizes=tuple(layer_sizes),
            weights=tuple(weights),
            biases=tuple(biases),
            x_mean=np.zeros(d) if x_mean is None else np.asarray(x_mean, dtype=float),
            x_std=np.ones(d) if x_std is None else np.asarray(x_std, dtype=float),
        )

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    # -- evaluation ---------------------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        batch = x[None, :] if single else x
        if batch.ndim != 2 or batch.shape[1] != self.input_dim:
            raise ValueError(f"input shape {x.shape} does not match input size {self.input_dim}")
        return batch, single

    def _forward_cached(self, batch):
        """Hidden activations for a standardized batch; used by both gradients."""
        z = (batch - self.x_mean) / self.x_std
        hidden = []
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = np.tanh(z @ w.T + b)
            hidden.append(z)
        out = z @ self.weights[-1].T + self.biases[-1]
        return hidden, out

    def forward(self, x) -> float | np.ndarray:
        """Scalar output for a vector input; (n,) for a batch (output size 1)."""
        batch, single = self._check_input(x)
        _, out = self._forward_cached(batch)
        if self.output_dim == 1:
            out = out[:, 0]
        return float(out[0]) if single else out

    def grad_input(self, x) -> np.ndarray:
        """Exact gradient of the scalar output w.r.t. the raw input.

        Batch inputs give one gradient row per input row.  Only defined for
        scalar-output nets.
        """
        if self.output_dim != 1:
            raise ValueError("grad_input requires a scalar-output net")
        batch, single = self._check_input(x)
        hidden, _ = self._forward_cached(batch)
        g = np.broadcast_to(self.weights[-1], (batch.shape[0], self.layer_sizes[-2]))
        for w, h in zip(reversed(self.weights[:-1]), reversed(hidden)):
            g = (g * (1.0 - h * h)) @ w
        g = g / self.x_std
        return g[0] if single else g

    def value_and_grad_input(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Batch (values, input-gradients) in one pass."""
        if self.output_dim != 1:
            raise ValueError("value_and_grad_input requires a scalar-output net")
        batch, single = self._check_input(x)
        hidden, out = self._forward_cached(batch)
        g = np.broadcast_to(self.weights[-1], (batch.shape[0], self.layer_sizes[-2]))
        for w, h in zip(reversed(self.weights[:-1]), reversed(hidden)):
            g = (g * (1.0 - h * h)) @ w
        g = g / self.x_std
        values = out[:, 0]
        return (float(values[0]), g[0]) if single else (values, g)

    # -- persistence --------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "FeedforwardNet":
        return cls(
            layer_sizes=tuple(d["layer_sizes"]),
            weights=tuple(np.array(w) for w in d["weights"]),
            biases=tuple(np.array(b) for b in d["biases"]),
            x_mean=np.array(d["x_mean"]),
            x_std=np.array(d["x_std"]),
            activation=d["activation"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FeedforwardNet":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def standardizer_from(inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature (mean, std) of a training matrix; std floored at 1e-8."""
    inputs = np.asarray(inputs, dtype=float)
    mean = inputs.mean(axis=0)
    std = inputs.std(axis=0)
    return mean, np.maximum(std, 1e-8)


def _param_grads(net: FeedforwardNet, batch, targets):
    """Mean-squared-error gradients for one minibatch."""
    hidden, out = net._forward_cached(batch)
    z0 = (batch - net.x_mean) / net.x_std
    acts = [z0] + hidden
    n = batch.shape[0]
    delta = 2.0 * (out[:, 0] - targets)[:, None] / n  # (n, 1)
    grads_w, grads_b = [], []
    for k in range(len(net.weights) - 1, -1, -1):
        grads_w.append(delta.T @ acts[k])
        grads_b.append(delta.sum(axis=0))
        if k > 0:
            delta = (delta @ net.weights[k]) * (1.0 - acts[k] * acts[k])
    grads_w.reverse()
    grads_b.reverse()
    loss = float(np.mean((out[:, 0] - targets) ** 2))
    return grads_w, grads_b, loss


def train_regression(
    net: FeedforwardNet,
    inputs: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
) -> FeedforwardNet:
    """Minibatch SGD with momentum on mean squared error.

    Returns a trained copy; the input net is untouched.  Deterministic given
    ``cfg.seed``.  Standardization vectors are carried over unchanged, they
    are fixed at construction time.
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ValueError("inputs must be a nonempty (n, d) matrix")
    if targets.shape != (inputs.shape[0],):
        raise ValueError(f"targets shape {targets.shape} does not match inputs {inputs.shape}")
    weights = [w.copy() for w in net.weights]
    biases = [b.copy() for b in net.biases]
    vel_w = [np.zeros_like(w) for w in weights]
    vel_b = [np.zeros_like(b) for b in biases]
    work = FeedforwardNet(
        net.layer_sizes, tuple(weights), tuple(biases), net.x_mean, net.x_std
    )
    rng = np.random.default_rng(cfg.seed)
    n = inputs.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            gw, gb, loss = _param_grads(work, inputs[idx], targets[idx])
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite training loss at epoch {epoch}")
            for k in range(len(weights)):
                vel_w[k] = cfg.momentum * vel_w[k] - cfg.step_size * gw[k]
                vel_b[k] = cfg.momentum * vel_b[k] - cfg.step_size * gb[k]
                weights[k] += vel_w[k]
                biases[k] += vel_b[k]
    return FeedforwardNet(
        net.layer_sizes,
        tuple(w.copy() for w in weights),
        tuple(b.copy() for b in biases),
        net.x_mean,
        net.x_std,
    )
