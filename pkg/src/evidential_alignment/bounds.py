"""PAC-Bayes worst-group bound and an empirical coverage check."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset, SpuriousSpec, generate_synthetic

WEIGHT_SUM_TOL = 1e-12


class BoundPreconditionError(ValueError):
    """A profile violates a precondition of the bound."""


@dataclass
class GroupRiskProfile:
    n_g: list[int]
    empirical_risks: list[float]
    weights: list[float]
    kl_qp: float = 0.0
    delta: float = 0.05

    def __post_init__(self):
        self.n_g = [int(n) for n in self.n_g]
        self.empirical_risks = [float(r) for r in self.empirical_risks]
        self.weights = [float(w) for w in self.weights]
        G = len(self.n_g)
        if G < 1 or len(self.empirical_risks) != G or len(self.weights) != G:
            raise ValueError("n_g, empirical_risks and weights must have the same non-zero length")
        if any(not 0.0 <= r <= 1.0 for r in self.empirical_risks):
            raise ValueError("empirical risks must lie in [0, 1]")
        if any(w < 0.0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if not self.kl_qp >= 0.0:
            raise ValueError("kl_qp must be non-negative")

    @property
    def group_count(self) -> int:
        return len(self.n_g)

    @property
    def alpha(self) -> float:
        return min(self.weights)

    @property
    def n_min(self) -> int:
        return min(self.n_g)

    @classmethod
    def from_dict(cls, d: dict) -> "GroupRiskProfile":
        try:
            return cls(d["n_g"], d["empirical_risks"], d["weights"], d.get("kl_qp", 0.0), d.get("delta", 0.05))
        except KeyError as exc:
            raise ValueError(f"profile is missing key {exc}") from exc
        except TypeError as exc:
            raise ValueError(f"malformed profile: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "GroupRiskProfile":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"profile is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ValueError("profile must be a JSON object")
        return cls.from_dict(d.get("pac_bayes_profile", d))

    def to_dict(self) -> dict:
        return {
            "n_g": self.n_g,
            "empirical_risks": self.empirical_risks,
            "weights": self.weights,
            "kl_qp": self.kl_qp,
            "delta": self.delta,
        }


def _check_weights(profile: GroupRiskProfile):
    total = math.fsum(profile.weights)
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise BoundPreconditionError(f"weights sum to {total!r}, not 1")


def reweighted_risk(profile: GroupRiskProfile) -> float:
    _check_weights(profile)
    return math.fsum(w * r for w, r in zip(profile.weights, profile.empirical_risks))


def complexity_term(profile: GroupRiskProfile) -> float:
    return math.sqrt((profile.kl_qp + math.log(profile.group_count / profile.delta)) / (2.0 * profile.n_min))


def pac_bayes_bound(profile: GroupRiskProfile) -> float:
    """Worst-group risk bound: reweighted risk / min weight + complexity term."""
    _check_weights(profile)
    if not 0.0 < profile.delta < 1.0:
        raise BoundPreconditionError(f"delta must lie in (0, 1), got {profile.delta}")
    if profile.alpha <= 0.0:
        raise BoundPreconditionError("the smallest group weight must be positive")
    if profile.n_min < 1:
        raise BoundPreconditionError("every group needs at least one sample")
    return reweighted_risk(profile) / profile.alpha + complexity_term(profile)


def bound_report(profile: GroupRiskProfile) -> dict:
    """Bound and its components under the ``pac_bayes`` key of the metrics schema."""
    return {
        "pac_bayes": {
            "bound": pac_bayes_bound(profile),
            "reweighted_risk": reweighted_risk(profile),
            "alpha": profile.alpha,
            "n_min": profile.n_min,
            "complexity": complexity_term(profile),
            "group_count": profile.group_count,
            "kl_qp": profile.kl_qp,
            "delta": profile.delta,
        }
    }


# -- empirical coverage -----------------------------------------------------------


def group_risks(head, data: Dataset, single_group: bool = False) -> tuple[list[float], list[int]]:
    """0-1 risk and sample count per (class, attribute) group, or for the whole set."""
    wrong = head.predict(data.features) != data.labels
    if single_group:
        return [float(wrong.mean())], [len(data)]
    risks, counts = [], []
    for g in range(data.n_classes * data.n_attributes):
        m = data.groups == g
        if not m.any():
            raise ValueError(f"group {g} is empty")
        risks.append(float(wrong[m].mean()))
        counts.append(int(m.sum()))
    return risks, counts


@dataclass
class CoverageResult:
    trials: int
    delta: float
    violations: int
    threshold: float
    bounds: list[float] = field(default_factory=list)
    worst_true_risks: list[float] = field(default_factory=list)

    @property
    def violation_rate(self) -> float:
        return self.violations / self.trials

    @property
    def passed(self) -> bool:
        return self.violation_rate <= self.threshold


def empirical_bound_check(
    task_seed: int,
    train_fn: Callable[[Dataset, int], object],
    trials: int,
    delta: float = 0.5,
    kl_qp: float = 5.0,
    train_counts: dict | None = None,
    heldout_per_group: int = 20_000,
    weights: list[float] | None = None,
    single_group: bool = False,
    spec_kwargs: dict | None = None,
) -> CoverageResult:
    """Resample training sets and count how often the worst true group risk exceeds the bound.

    ``train_fn(data, seed)`` returns a head with a ``predict`` method. True group
    risks are estimated on one large held-out draw (balanced across groups, or
    in training proportions when ``single_group`` pools them). Weights are
    fixed before any resampling (uniform by default).
    """
    if trials < 20:
        raise ValueError("empirical_bound_check needs at least 20 trials")
    counts = train_counts or {(0, 0): 150, (0, 1): 30, (1, 0): 30, (1, 1): 150}
    spec_kwargs = spec_kwargs or {}
    if single_group:
        # the pooled risk depends on group proportions, so keep the training mix
        scale = heldout_per_group * len(counts) / sum(counts.values())
        heldout_counts = {k: max(1, round(n * scale)) for k, n in counts.items()}
    else:
        heldout_counts = {k: heldout_per_group for k in counts}
    heldout = generate_synthetic(SpuriousSpec(heldout_counts, seed=task_seed * 1_000_003 + 7, **spec_kwargs))
    G = 1 if single_group else len(counts)
    w = weights or [1.0 / G] * G
    result = CoverageResult(trials, delta, 0, delta + 3.0 * math.sqrt(delta * (1.0 - delta) / trials))
    for t in range(trials):
        seed = task_seed * 1_000_003 + 101 + t
        train = generate_synthetic(SpuriousSpec(counts, seed=seed, **spec_kwargs))
        head = train_fn(train, seed)
        risks, n_g = group_risks(head, train, single_group)
        profile = GroupRiskProfile(n_g, risks, w, kl_qp, delta)
        bound = pac_bayes_bound(profile)
        true_risks, _ = group_risks(head, heldout, single_group)
        worst = max(true_risks)
        result.bounds.append(bound)
        result.worst_true_risks.append(worst)
        if worst > bound:
            result.violations += 1
    return result
