"""Dense float64 numerics for fully-connected nets.

Forward/backward kernels for linear layers, ReLU, batch normalization and
softmax cross-entropy, plus a momentum-SGD update that respects connectivity
masks. Everything is plain numpy on 64-bit floats; no hidden state.
"""

from dataclasses import dataclass, field

import numpy as np


def tensor2(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Build a validated 2-D float64 array (row-major).

    Rejects non-finite entries and, when rows/cols are given, any shape or
    length mismatch.
    """
    arr = np.asarray(data, dtype=np.float64)
    if rows is not None and cols is not None:
        arr = arr.reshape(-1)
        if arr.size != rows * cols:
            raise ValueError(
                f"data length {arr.size} != rows*cols = {rows * cols}")
        arr = arr.reshape(rows, cols)
    if arr.ndim != 2:
        raise ValueError(f"expected 2-D data, got ndim={arr.ndim}")
    if not np.isfinite(arr).all():
        raise ValueError("non-finite values rejected at construction")
    return np.ascontiguousarray(arr)


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise ValueError(f"non-finite values in {name}")


@dataclass
class BatchNormState:
    """Per-feature batch normalization parameters and running statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.running_mean = np.asarray(self.running_mean, dtype=np.float64)
        self.running_var = np.asarray(self.running_var, dtype=np.float64)
        n = self.gamma.size
        for name in ("beta", "running_mean", "running_var"):
            if getattr(self, name).size != n:
                raise ValueError("batchnorm vectors must share one length")
        if np.any(self.running_var < 0):
            raise ValueError("running_var must be >= 0 elementwise")
        if not 0.0 < self.momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def identity(cls, n_features: int, momentum: float = 0.1,
                 epsilon: float = 1e-5) -> "BatchNormState":
        return cls(np.ones(n_features), np.zeros(n_features),
                   np.zeros(n_features), np.ones(n_features),
                   momentum=momentum, epsilon=epsilon)

    def copy(self) -> "BatchNormState":
        return BatchNormState(self.gamma.copy(), self.beta.copy(),
                              self.running_mean.copy(), self.running_var.copy(),
                              momentum=self.momentum, epsilon=self.epsilon)


@dataclass
class OptimizerState:
    """Momentum-SGD velocity buffers, one per named parameter."""

    momentum: float = 0.9
    weight_decay: float = 0.0
    velocities: dict = field(default_factory=dict)

    def velocity(self, name: str, shape) -> np.ndarray:
        v = self.velocities.get(name)
        if v is None or v.shape != tuple(shape):
            v = np.zeros(shape, dtype=np.float64)
            self.velocities[name] = v
        return v


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = x @ w + b, bias broadcast over the batch."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"shape mismatch: x {x.shape} @ w {w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"bias shape {b.shape} != ({w.shape[1]},)")
    return x @ w + b


def linear_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    """Gradients of a linear layer: (dx, dw, db)."""
    if dy.shape != (x.shape[0], w.shape[1]):
        raise ValueError(f"upstream shape {dy.shape} != {(x.shape[0], w.shape[1])}")
    dx = dy @ w.T
    dw = x.T @ dy
    db = dy.sum(axis=0)
    return dx, dw, db


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # Subgradient at exactly 0 is taken as 0.
    return np.where(x > 0.0, dy, 0.0)


def batchnorm_forward(x: np.ndarray, state: BatchNormState, train: bool):
    """Normalize per feature; returns (y, cache). Train mode uses batch
    statistics and updates the running ones, eval mode uses the running
    statistics (cache is None)."""
    if train:
        if x.shape[0] < 2:
            raise ValueError("batchnorm train mode needs batch >= 2")
        mean = x.mean(axis=0)
        var = x.var(axis=0)  # biased, used for normalization
        inv_std = 1.0 / np.sqrt(var + state.epsilon)
        xhat = (x - mean) * inv_std
        y = state.gamma * xhat + state.beta
        n = x.shape[0]
        unbiased = var * n / (n - 1)
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mean
        state.running_var = (1.0 - m) * state.running_var + m * unbiased
        cache = (xhat, inv_std, state.gamma)
        return y, cache
    inv_std = 1.0 / np.sqrt(state.running_var + state.epsilon)
    y = state.gamma * (x - state.running_mean) * inv_std + state.beta
    return y, None


def batchnorm_backward(cache, dy: np.ndarray):
    """Train-mode gradients: (dx, dgamma, dbeta)."""
    xhat, inv_std, gamma = cache
    n = dy.shape[0]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0)
                          - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with log-sum-exp shift."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean NLL of the true class and its gradient w.r.t. the logits.

    dlogits = (softmax - onehot) / batch, so gradient rows sum to zero.
    """
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} != ({n},)")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise IndexError("label out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logsumexp - shifted[np.arange(n), labels]))
    probs = softmax(logits)
    probs[np.arange(n), labels] -= 1.0
    return loss, probs / n


def sgd_momentum_step(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray,
                      lr: float, momentum: float, weight_decay: float,
                      mask: np.ndarray | None = None) -> None:
    """In-place momentum-SGD update: v <- mu*v + g + wd*w; w <- w - lr*v.

    With a mask, masked-out entries keep value and velocity exactly 0.
    """
    if grad.shape != param.shape:
        raise ValueError(f"grad shape {grad.shape} != param {param.shape}")
    if not np.isfinite(grad).all():
        raise ValueError("non-finite gradient")
    g = grad + weight_decay * param
    if mask is not None:
        g = np.where(mask, g, 0.0)
    velocity *= momentum
    velocity += g
    if mask is not None:
        velocity[~mask] = 0.0
    param -= lr * velocity
    if mask is not None:
        param[~mask] = 0.0
