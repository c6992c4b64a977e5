"""Evidential classifier head.

A linear map from features to logits followed by a non-negative evidence
activation. Gradients are derived by hand; see ``tests/test_model.py`` for
the finite-difference checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .mathcore import DirichletParams

CHECKPOINT_MAGIC = "evidential-head"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    """Dimension mismatch between a head and its inputs or another head."""


@dataclass
class EvidentialHead:
    weights: np.ndarray  # (K, d)
    bias: np.ndarray  # (K,)
    activation: str = "softplus"

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64)
        self.bias = np.array(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"weights must be (K, d) and bias (K,), got {self.weights.shape} and {self.bias.shape}"
            )
        if self.K < 2:
            raise ShapeError("need at least 2 classes")
        if self.activation not in kernels.ACTIVATIONS:
            raise ValueError(f"unknown evidence activation {self.activation!r}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("head parameters must be finite")

    @classmethod
    def init(cls, d: int, K: int, seed: int = 0, activation: str = "softplus") -> "EvidentialHead":
        """Fan-in uniform weights in [-1/sqrt(d), 1/sqrt(d)], zero bias."""
        rng = np.random.default_rng(seed)
        bound = 1.0 / math.sqrt(d)
        return cls(rng.uniform(-bound, bound, size=(K, d)), np.zeros(K), activation)

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]

    @property
    def activation_code(self) -> int:
        return kernels.ACTIVATIONS[self.activation]

    def copy(self) -> "EvidentialHead":
        return EvidentialHead(self.weights.copy(), self.bias.copy(), self.activation)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    def with_flat(self, theta: np.ndarray) -> "EvidentialHead":
        theta = np.asarray(theta, dtype=np.float64)
        n = self.weights.size
        if theta.shape != (n + self.K,):
            raise ShapeError(f"expected {n + self.K} parameters, got {theta.shape}")
        return EvidentialHead(theta[:n].reshape(self.weights.shape), theta[n:], self.activation)

    def check_compatible(self, other: "EvidentialHead"):
        if other.weights.shape != self.weights.shape:
            raise ShapeError(
                f"parameter shapes differ: (K={self.K}, d={self.d}) vs (K={other.K}, d={other.d})"
            )

    def logits(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ShapeError(f"expected features of dimension d={self.d}, got shape {X.shape}")
        if not np.isfinite(X).all():
            raise ValueError("features must be finite")
        return X @ self.weights.T + self.bias

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Argmax class per row; ties resolve to the lowest index."""
        return forward_batch(self, X).predicted_class


@dataclass(frozen=True)
class DirichletOutput:
    evidence: np.ndarray
    params: DirichletParams
    expected_probs: np.ndarray
    uncertainty: float
    predicted_class: int


@dataclass
class BatchOutput:
    """Row-wise counterpart of :class:`DirichletOutput`."""

    evidence: np.ndarray
    alpha: np.ndarray
    strength: np.ndarray
    expected_probs: np.ndarray
    uncertainty: np.ndarray
    predicted_class: np.ndarray = field(repr=False)

    def row(self, i: int) -> DirichletOutput:
        return DirichletOutput(
            evidence=self.evidence[i].copy(),
            params=DirichletParams(tuple(self.alpha[i])),
            expected_probs=self.expected_probs[i].copy(),
            uncertainty=float(self.uncertainty[i]),
            predicted_class=int(self.predicted_class[i]),
        )


def forward_batch(head: EvidentialHead, X: np.ndarray) -> BatchOutput:
    z = head.logits(X)
    e, _ = kernels.evidence(z, head.activation_code)
    alpha = e + 1.0
    S = alpha.sum(axis=1)
    probs = alpha / S[:, None]
    # np.argmax returns the first maximal index
    return BatchOutput(e, alpha, S, probs, head.K / S, np.argmax(probs, axis=1))


def forward(head: EvidentialHead, x) -> DirichletOutput:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a single feature vector, got shape {x.shape}")
    return forward_batch(head, x[None, :]).row(0)


def _check_labels(y: np.ndarray, K: int):
    if y.size and (y.min() < 0 or y.max() >= K):
        raise ValueError(f"labels must lie in [0, {K})")


def stage1_loss_grad(head: EvidentialHead, X, y, lambda_t: float, variant: str = "log_expected"):
    """Mean second-order loss over a batch and its gradient (dW, db)."""
    y = np.asarray(y, dtype=np.int64)
    _check_labels(y, head.K)
    z = head.logits(X)
    loss, gz = kernels.stage1_batch(z, y, float(lambda_t), kernels.VARIANTS[variant], head.activation_code)
    n = z.shape[0]
    gz = gz / n
    return float(loss.mean()), gz.T @ np.asarray(X, dtype=np.float64), gz.sum(axis=0)


def stage2_loss_grad(head: EvidentialHead, X, y, weights, theta1: EvidentialHead, beta: float):
    """Mean weighted -log E[p_y] plus beta * ||theta - theta1||^2, and its gradient."""
    head.check_compatible(theta1)
    y = np.asarray(y, dtype=np.int64)
    _check_labels(y, head.K)
    z = head.logits(X)
    loss, gz = kernels.stage2_batch(z, y, weights, head.activation_code)
    n = z.shape[0]
    gz = gz / n
    dW = head.weights - theta1.weights
    db = head.bias - theta1.bias
    prox = float(np.sum(dW * dW) + np.sum(db * db))
    gW = gz.T @ np.asarray(X, dtype=np.float64) + 2.0 * beta * dW
    gb = gz.sum(axis=0) + 2.0 * beta * db
    return float(loss.mean()) + beta * prox, gW, gb


def grad_stage1(head: EvidentialHead, x, y: int, lambda_t: float, variant: str = "log_expected"):
    """Per-sample gradient of the second-order loss; returns (dW, db)."""
    if not 0.0 <= lambda_t <= 1.0:
        raise ValueError(f"lambda_t must lie in [0, 1], got {lambda_t}")
    x = np.asarray(x, dtype=np.float64)
    _, gW, gb = stage1_loss_grad(head, x[None, :], [y], lambda_t, variant)
    return gW, gb


def grad_stage2(head: EvidentialHead, x, y: int, weight: float, theta1: EvidentialHead, beta: float):
    x = np.asarray(x, dtype=np.float64)
    _, gW, gb = stage2_loss_grad(head, x[None, :], [y], [weight], theta1, beta)
    return gW, gb


# -- checkpoints ---------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dumps_checkpoint(head: EvidentialHead) -> str:
    lines = [
        f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}",
        f"d {head.d}",
        f"K {head.K}",
        f"activation {head.activation}",
        "weights",
    ]
    lines += [" ".join(_fmt(v) for v in row) for row in head.weights]
    lines.append("bias")
    lines.append(" ".join(_fmt(v) for v in head.bias))
    return "\n".join(lines) + "\n"


def loads_checkpoint(text: str) -> EvidentialHead:
    lines = [ln.strip() for ln in text.strip().splitlines()]
    try:
        magic, version = lines[0].split()
        if magic != CHECKPOINT_MAGIC or version != f"v{CHECKPOINT_VERSION}":
            raise ValueError(f"not a v{CHECKPOINT_VERSION} evidential-head checkpoint")
        d = int(lines[1].split()[1])
        K = int(lines[2].split()[1])
        activation = lines[3].split()[1]
        if lines[4] != "weights" or lines[5 + K] != "bias":
            raise ValueError("malformed section markers")
        W = np.array([[float(v) for v in lines[5 + k].split()] for k in range(K)])
        b = np.array([float(v) for v in lines[6 + K].split()])
    except (IndexError, ValueError) as exc:
        raise ValueError(f"malformed checkpoint: {exc}") from exc
    if W.shape != (K, d) or b.shape != (K,):
        raise ValueError(f"checkpoint declares d={d}, K={K} but holds {W.shape} weights")
    return EvidentialHead(W, b, activation)


def save_checkpoint(head: EvidentialHead, path) -> None:
    Path(path).write_text(dumps_checkpoint(head))


def load_checkpoint(path) -> EvidentialHead:
    return loads_checkpoint(Path(path).read_text())
