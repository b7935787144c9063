"""Dense float64 kernels, parameters with explicit gradient storage, and Adam.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Batched
activations are laid out column-wise: a batch of ``B`` vectors of size ``n``
is an ``(n, B)`` array, so weights multiply from the left as ``W @ x``.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericError(FloatingPointError):
    """Raised when a non-finite value would be written into a parameter."""


class StaleCacheError(RuntimeError):
    """Raised when a forward cache is reused after its parameters changed."""


class Parameter:
    """A named weight tensor with gradient and Adam moment buffers.

    ``version`` is bumped on every in-place update so that forward caches can
    detect that the values they were computed from no longer exist.
    """

    __slots__ = ("name", "value", "grad", "m", "v", "step_count", "version")

    def __init__(self, name: str, value: np.ndarray):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise DimensionError(f"parameter {name!r} must be 2-d, got shape {value.shape}")
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)
        self.step_count = 0
        self.version = 0

    @classmethod
    def uniform(cls, name: str, shape: tuple[int, int], rng: np.random.Generator,
                scale: float = 0.1) -> "Parameter":
        return cls(name, rng.uniform(-scale, scale, size=shape))

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def touch(self) -> None:
        self.version += 1

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def tanh_(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction."""
    x = np.atleast_2d(x)
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(prob_row: np.ndarray, target_index: int) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``target_index`` and its gradient w.r.t. the logits.

    ``prob_row`` must already be a softmax output; the returned gradient is
    ``prob_row - one_hot(target_index)`` with the input's shape.
    """
    prob_row = np.asarray(prob_row, dtype=np.float64)
    flat = prob_row.reshape(-1)
    if not 0 <= target_index < flat.size:
        raise IndexError(f"target index {target_index} out of range for {flat.size} classes")
    loss = -np.log(max(flat[target_index], np.finfo(np.float64).tiny))
    grad = flat.copy()
    grad[target_index] -= 1.0
    return float(loss), grad.reshape(prob_row.shape)


def cross_entropy_columns(probs: np.ndarray, targets: np.ndarray,
                          weights: np.ndarray) -> tuple[float, np.ndarray]:
    """Weighted cross entropy for column-distributions ``probs`` of shape (V, B).

    Returns ``sum_b weights[b] * -log probs[targets[b], b]`` and its gradient
    with respect to the logits, ``weights * (probs - one_hot)``.
    """
    cols = np.arange(probs.shape[1])
    picked = np.maximum(probs[targets, cols], np.finfo(np.float64).tiny)
    loss = float(-(weights * np.log(picked)).sum())
    grad = probs.copy()
    grad[targets, cols] -= 1.0
    grad *= weights
    return loss, grad


def log_mean_exp_columns(logits: np.ndarray) -> np.ndarray:
    """``log(mean(exp(z)))`` per column, accurate to the last bit when logits are small.

    Log-sum-exp minus ``log V``; the ``log1p``/``expm1`` form keeps the
    absolute error far below one ulp of ``log V``.
    """
    if np.abs(logits).max(initial=0.0) < 1.0:
        return np.log1p(np.expm1(logits).mean(axis=0))
    top = logits.max(axis=0)
    return top + np.log(np.exp(logits - top).mean(axis=0))


def softmax_columns(logits: np.ndarray) -> np.ndarray:
    return softmax_rows(logits.T).T


def adam_step(p: Parameter, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> Parameter:
    """Bias-corrected Adam update of ``p`` in place; zeroes the gradient."""
    g = p.grad
    if not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite gradient in parameter {p.name!r}")
    p.step_count += 1
    t = p.step_count
    p.m *= beta1
    p.m += (1.0 - beta1) * g
    p.v *= beta2
    p.v += (1.0 - beta2) * (g * g)
    m_hat = p.m / (1.0 - beta1 ** t)
    v_hat = p.v / (1.0 - beta2 ** t)
    p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    p.grad.fill(0.0)
    p.touch()
    return p


def finite_diff_grad(loss_fn, p: Parameter, h: float = 1e-5) -> np.ndarray:
    """Central-difference estimate of d loss_fn(p) / d p.value, entry by entry."""
    est = np.zeros_like(p.value)
    flat = p.value.reshape(-1)
    out = est.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        p.touch()
        up = loss_fn(p)
        flat[k] = orig - h
        p.touch()
        down = loss_fn(p)
        flat[k] = orig
        p.touch()
        out[k] = (up - down) / (2.0 * h)
    return est


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Norm-wise relative error; tensors whose gradients are both ~0 compare absolutely."""
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < floor:
        return float(diff)
    return float(diff / scale)
