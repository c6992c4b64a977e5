"""Two-stage training: second-order risk minimization, then evidential calibration."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import losses
from .data import Dataset
from .evaluation import GroupMetrics, evaluate
from .model import EvidentialHead, forward_batch, stage1_loss_grad, stage2_loss_grad

SELECTION_STRATEGIES = ("average_acc", "worst_class_acc", "worst_group_acc")


@dataclass
class TrainConfig:
    t1_epochs: int = 10
    t2_epochs: int = 20
    lr1: float = 0.1
    lr2: float = 0.01
    eta: int = 10
    beta: float = 10.0
    batch_size: int = 128
    seed: int = 0
    selection: str = "worst_class_acc"
    loss_variant: str = "log_expected"
    stage2_variant: str = "log_expected"
    calib_fraction: float = 0.5
    activation: str = "softplus"
    momentum: float = 0.0
    cosine: bool = False
    class_balanced: bool = True
    stage1_include_calib: bool = False
    beta_grid: tuple[float, ...] | None = None

    def __post_init__(self):
        for name in ("t1_epochs", "t2_epochs", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("lr1", "lr2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        losses.AnnealSchedule(self.eta)
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.selection not in SELECTION_STRATEGIES:
            raise ValueError(f"selection must be one of {SELECTION_STRATEGIES}")
        if self.loss_variant not in losses.LOSS_VARIANTS:
            raise ValueError(f"loss_variant must be one of {losses.LOSS_VARIANTS}")
        if self.stage2_variant != "log_expected":
            raise ValueError("stage2_variant supports only 'log_expected'")
        if not 0 < self.calib_fraction <= 1:
            raise ValueError("calib_fraction must lie in (0, 1]")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.beta_grid is not None:
            self.beta_grid = tuple(float(b) for b in self.beta_grid)
            if not self.beta_grid or min(self.beta_grid) < 0:
                raise ValueError("beta_grid must be a non-empty list of non-negative values")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class SGD:
    """theta <- theta - lr * g, with optional heavy-ball momentum."""

    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self._velocity = None

    def step(self, head: EvidentialHead, gW: np.ndarray, gb: np.ndarray, lr: float | None = None):
        lr = self.lr if lr is None else lr
        if self.momentum:
            if self._velocity is None:
                self._velocity = (np.zeros_like(gW), np.zeros_like(gb))
            vW, vb = self._velocity
            vW *= self.momentum
            vW += gW
            vb *= self.momentum
            vb += gb
            gW, gb = vW, vb
        head.weights -= lr * gW
        head.bias -= lr * gb

    def proximal_step(self, head, gW, gb, anchor: EvidentialHead, beta: float, lr: float | None = None):
        """Gradient step on the data term, then the exact prox of beta * ||theta - anchor||^2.

        Equivalent to SGD on the full objective to first order in lr, and
        stable for any beta.
        """
        lr = self.lr if lr is None else lr
        self.step(head, gW, gb, lr)
        shrink = 1.0 / (1.0 + 2.0 * lr * beta)
        head.weights = anchor.weights + shrink * (head.weights - anchor.weights)
        head.bias = anchor.bias + shrink * (head.bias - anchor.bias)


def _lr_at(base: float, epoch: int, total: int, cosine: bool) -> float:
    if not cosine:
        return base
    return 0.5 * base * (1.0 + math.cos(math.pi * (epoch - 1) / total))


def _check_trainable(data: Dataset, head: EvidentialHead | None = None):
    if len(data) == 0:
        raise ValueError("empty dataset")
    if head is not None and data.d != head.d:
        raise ValueError(f"feature dimension {data.d} does not match head d={head.d}")


def _check_finite(head: EvidentialHead, stage: str, epoch: int):
    if not (np.isfinite(head.weights).all() and np.isfinite(head.bias).all()):
        raise FloatingPointError(f"{stage} diverged at epoch {epoch}: non-finite parameters (lower the learning rate)")


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def run_stage1(train: Dataset, config: TrainConfig, head: EvidentialHead | None = None):
    """Mini-batch SGD on the annealed second-order loss.

    Returns ``(head, trace)`` where ``trace`` holds the mean per-sample loss of
    each epoch.
    """
    _check_trainable(train, head)
    if head is None:
        head = EvidentialHead.init(train.d, train.n_classes, seed=config.seed, activation=config.activation)
    else:
        head = head.copy()
    rng = _rng(config.seed, 1)
    opt = SGD(config.lr1, config.momentum)
    X, y = train.features, train.labels
    n = len(train)
    trace = []
    for epoch in range(1, config.t1_epochs + 1):
        lam = losses.lambda_at(config.eta, epoch)
        lr = _lr_at(config.lr1, epoch, config.t1_epochs, config.cosine)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, gW, gb = stage1_loss_grad(head, X[idx], y[idx], lam, config.loss_variant)
            opt.step(head, gW, gb, lr)
            total += loss * idx.size
        _check_finite(head, "stage 1", epoch)
        trace.append(total / n)
    return head, trace


@dataclass(frozen=True)
class CalibrationScores:
    """Frozen per-sample Stage-1 predictions, uncertainties and weights."""

    predicted: np.ndarray
    uncertainty: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        for a in (self.predicted, self.uncertainty, self.weights):
            a.setflags(write=False)

    def __len__(self):
        return self.weights.shape[0]

    def __iter__(self):
        return iter(zip(self.predicted.tolist(), self.uncertainty.tolist(), self.weights.tolist()))


def score_calibration(theta1: EvidentialHead, calib: Dataset) -> CalibrationScores:
    _check_trainable(calib, theta1)
    out = forward_batch(theta1, calib.features)
    pred = out.predicted_class.astype(np.int64)
    u = out.uncertainty.astype(np.float64)
    w = np.where(pred == calib.labels, 1.0, u)
    return CalibrationScores(pred, u, w)


class ClassBalancedSampler:
    """Draw a class uniformly, then a uniform member of that class, with replacement."""

    def __init__(self, labels: np.ndarray, n_classes: int, rng: np.random.Generator):
        self.by_class = [np.flatnonzero(labels == k) for k in range(n_classes)]
        empty = [k for k, idx in enumerate(self.by_class) if idx.size == 0]
        if empty:
            raise ValueError(f"calibration set has no samples of class(es) {empty}")
        self.rng = rng

    def sample(self, size: int) -> np.ndarray:
        classes = self.rng.integers(0, len(self.by_class), size=size)
        out = np.empty(size, dtype=np.int64)
        for k, members in enumerate(self.by_class):
            m = classes == k
            cnt = int(m.sum())
            if cnt:
                out[m] = members[self.rng.integers(0, members.size, size=cnt)]
        return out


class UniformSampler:
    """Uniform draws with replacement; the no-class-balancing ablation."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng

    def sample(self, size: int) -> np.ndarray:
        return self.rng.integers(0, self.n, size=size)


@dataclass
class Stage2Result:
    head: EvidentialHead
    checkpoints: list[EvidentialHead] = field(default_factory=list)
    selection_metrics: list[GroupMetrics] = field(default_factory=list)
    selected_epoch: int | None = None
    trace: list[float] = field(default_factory=list)
    beta: float | None = None


def run_stage2(
    theta1: EvidentialHead,
    calib: Dataset,
    scores: CalibrationScores,
    config: TrainConfig,
    selection: Dataset | None = None,
) -> Stage2Result:
    """Retrain the head on the calibration set with frozen weights and a proximal pull to theta1.

    One checkpoint is kept per epoch. With a ``selection`` split the returned
    head is chosen by ``config.selection``; otherwise it is the last epoch.
    """
    _check_trainable(calib, theta1)
    if len(scores) != len(calib):
        raise ValueError("scores were not computed on this calibration set")
    rng = _rng(config.seed, 2)
    if config.class_balanced:
        sampler = ClassBalancedSampler(calib.labels, theta1.K, rng)
    else:
        sampler = UniformSampler(len(calib), rng)
    head = theta1.copy()
    anchor = theta1.copy()
    opt = SGD(config.lr2, config.momentum)
    X, y, w = calib.features, calib.labels, scores.weights
    n_batches = math.ceil(len(calib) / config.batch_size)
    result = Stage2Result(head, beta=config.beta)
    for epoch in range(1, config.t2_epochs + 1):
        lr = _lr_at(config.lr2, epoch, config.t2_epochs, config.cosine)
        total = 0.0
        for _ in range(n_batches):
            idx = sampler.sample(config.batch_size)
            # data term only; the proximal pull is applied exactly below
            loss, gW, gb = stage2_loss_grad(head, X[idx], y[idx], w[idx], anchor, 0.0)
            opt.proximal_step(head, gW, gb, anchor, config.beta, lr)
            total += loss + config.beta * _sqdist(head, anchor)
        _check_finite(head, "stage 2", epoch)
        result.trace.append(total / n_batches)
        result.checkpoints.append(head.copy())
        if selection is not None:
            result.selection_metrics.append(evaluate(head, selection))
    if selection is not None:
        best = select_index(result.selection_metrics, config.selection)
        result.head = result.checkpoints[best]
        result.selected_epoch = best + 1
    else:
        result.head = result.checkpoints[-1]
        result.selected_epoch = config.t2_epochs
    return result


def calibrate(
    theta1: EvidentialHead,
    calib: Dataset,
    scores: CalibrationScores,
    config: TrainConfig,
    selection: Dataset | None = None,
) -> Stage2Result:
    """Stage 2 at ``config.beta``, or over ``config.beta_grid`` when one is set.

    With a grid, every (beta, epoch) checkpoint competes under
    ``config.selection`` on the selection split; ties go to the earlier beta
    in grid order.
    """
    if config.beta_grid is None:
        return run_stage2(theta1, calib, scores, config, selection)
    if selection is None:
        raise ValueError("beta_grid needs a selection split")
    runs = [
        run_stage2(theta1, calib, scores, replace(config, beta=b, beta_grid=None), selection)
        for b in config.beta_grid
    ]
    best = select_index([r.selection_metrics[r.selected_epoch - 1] for r in runs], config.selection)
    return runs[best]


def _sqdist(a: EvidentialHead, b: EvidentialHead) -> float:
    return float(np.sum((a.weights - b.weights) ** 2) + np.sum((a.bias - b.bias) ** 2))


def _score(metrics: GroupMetrics, strategy: str) -> float:
    if strategy == "average_acc":
        return metrics.average_acc
    if strategy == "worst_class_acc":
        return metrics.worst_class_acc
    if strategy == "worst_group_acc":
        if metrics.worst_group_acc is None:
            raise ValueError("worst_group_acc selection needs attribute labels on the selection split")
        return metrics.worst_group_acc
    raise ValueError(f"unknown selection strategy {strategy!r}")


def select_index(metrics: list[GroupMetrics], strategy: str) -> int:
    """Index of the best candidate; ties go to the earliest."""
    if not metrics:
        raise ValueError("no candidates to select from")
    scores = [_score(m, strategy) for m in metrics]
    return int(np.argmax(scores))


def select_model(candidates, strategy: str):
    """Pick the head whose metrics score highest under ``strategy``.

    ``candidates`` is a sequence of ``(head, GroupMetrics)`` pairs.
    """
    candidates = list(candidates)
    return candidates[select_index([m for _, m in candidates], strategy)][0]
