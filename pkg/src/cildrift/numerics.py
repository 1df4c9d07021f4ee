"""Trainable machinery: bias-free linear blocks, softmax CE, and AdamW.

Everything is float64 and functional: operations take explicit state and
return new arrays, never mutating inputs. Gradients are hand-derived; there
is no autodiff anywhere in the engine.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

WEIGHT_INIT_STD = 0.02


class NumericError(ValueError):
    """Shape mismatch or non-finite numeric input."""


@dataclass(frozen=True)
class SessionClassifier:
    """One weight block: rows score the classes learned in a single session.

    Logits are exactly ``weights @ feature``; there is no bias term. Row i
    scores ``class_order[i]``.
    """

    session_index: int
    class_order: tuple[str, ...]
    weights: np.ndarray

    def __post_init__(self):
        w = self.weights
        if w.ndim != 2 or w.shape[0] != len(self.class_order):
            raise NumericError(
                f"weights shape {w.shape} does not match {len(self.class_order)} classes"
            )

    @property
    def n_classes(self) -> int:
        return len(self.class_order)

    @property
    def dim(self) -> int:
        return int(self.weights.shape[1])

    def frozen(self) -> "SessionClassifier":
        w = self.weights
        if w.flags.writeable:
            w = w.copy()
            w.setflags(write=False)
        return replace(self, weights=w)


@dataclass(frozen=True)
class LogitVector:
    """Raw pre-softmax scores with their parallel class labels."""

    values: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        if self.values.shape != (len(self.labels),):
            raise NumericError("logit values and labels must have equal length")


def init_weights(n_classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Fresh block weights: zero-mean Gaussian, std 0.02, seeded."""
    return rng.normal(0.0, WEIGHT_INIT_STD, size=(n_classes, dim))


def forward(classifier: SessionClassifier, feature: np.ndarray) -> LogitVector:
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape != (classifier.dim,):
        raise NumericError(
            f"feature shape {feature.shape} does not match dim {classifier.dim}"
        )
    return LogitVector(classifier.weights @ feature, classifier.class_order)


def forward_batch(weights: np.ndarray, features: np.ndarray) -> np.ndarray:
    """(b, h) features -> (b, n) logits for one block."""
    return features @ weights.T


def softmax_ce_batch(logits: np.ndarray, gold: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row CE loss and gradient w.r.t. logits, max-subtracted for stability.

    Returns (losses of shape (b,), grads of shape (b, c)) where each grad row
    is softmax(row) - one_hot(gold).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    gold = np.asarray(gold)
    if gold.ndim != 1 or gold.shape[0] != logits.shape[0]:
        raise NumericError("gold indices must align with logit rows")
    if gold.size and (gold.min() < 0 or gold.max() >= logits.shape[1]):
        raise NumericError("gold index out of range")

    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    probs = exp / denom
    rows = np.arange(logits.shape[0])
    log_probs = shifted[rows, gold] - np.log(denom[:, 0])
    grads = probs
    grads[rows, gold] -= 1.0
    return -log_probs, grads


def softmax_ce_loss(logits: LogitVector | np.ndarray, gold_index: int) -> tuple[float, np.ndarray]:
    """CE loss of one instance and its gradient w.r.t. the logits."""
    values = logits.values if isinstance(logits, LogitVector) else np.asarray(logits, dtype=np.float64)
    if not 0 <= gold_index < values.shape[0]:
        raise NumericError(f"gold index {gold_index} out of range for {values.shape[0]} logits")
    losses, grads = softmax_ce_batch(values[None, :], np.array([gold_index]))
    return float(losses[0]), grads[0]


def grad_weights(grad_logits: np.ndarray, feature: np.ndarray) -> np.ndarray:
    """Chain rule through the linear layer: outer(grad_slice, feature)."""
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    feature = np.asarray(feature, dtype=np.float64)
    if grad_logits.ndim != 1 or feature.ndim != 1:
        raise NumericError("grad_weights expects 1-d inputs")
    return np.outer(grad_logits, feature)


def grad_weights_batch(grad_logits: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Mean outer product over a batch: (b, n) x (b, h) -> (n, h)."""
    if grad_logits.shape[0] != features.shape[0]:
        raise NumericError("batch sizes disagree")
    return grad_logits.T @ features / grad_logits.shape[0]


@dataclass(frozen=True)
class AdamWState:
    """Moment accumulators and hyperparameters for one weight matrix."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def __post_init__(self):
        if self.step < 0:
            raise NumericError("step count must be non-negative")


def adamw_step(
    state: AdamWState, weights: np.ndarray, grads: np.ndarray
) -> tuple[np.ndarray, AdamWState]:
    """One AdamW update with bias correction and decoupled weight decay.

    ``grads`` may be an average over an accumulation window; the update does
    not care how it was assembled. Returns new weights and new state.
    """
    if grads.shape != weights.shape:
        raise NumericError(f"grad shape {grads.shape} != weight shape {weights.shape}")
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradients")

    m = state.m if state.m is not None else np.zeros_like(weights)
    v = state.v if state.v is not None else np.zeros_like(weights)
    if m.shape != weights.shape or v.shape != weights.shape:
        raise NumericError("moment accumulator shape mismatch")

    t = state.step + 1
    m = state.beta1 * m + (1.0 - state.beta1) * grads
    v = state.beta2 * v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    # Decay is decoupled from the gradient term.
    new_weights = weights - update - state.lr * state.weight_decay * weights
    return new_weights, replace(state, step=t, m=m, v=v)
