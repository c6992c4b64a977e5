"""Group-robustness metrics and reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset

JSON_KEYS = ("average_acc", "worst_group_acc", "worst_class_acc", "accuracy_gap", "per_group", "skipped_groups")


@dataclass
class GroupMetrics:
    per_class_acc: dict[int, float]
    average_acc: float
    worst_class_acc: float
    per_group_acc: dict[tuple[int, int], float] = field(default_factory=dict)
    worst_group_acc: float | None = None
    skipped_groups: list[tuple[int, int]] = field(default_factory=list)
    group_sizes: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def accuracy_gap(self) -> float | None:
        if self.worst_group_acc is None:
            return None
        return self.average_acc - self.worst_group_acc

    def to_dict(self) -> dict:
        return {
            "average_acc": self.average_acc,
            "worst_group_acc": self.worst_group_acc,
            "worst_class_acc": self.worst_class_acc,
            "accuracy_gap": self.accuracy_gap,
            "per_class": {str(k): v for k, v in sorted(self.per_class_acc.items())},
            "per_group": [
                {"class": y, "attribute": a, "n": self.group_sizes.get((y, a)), "acc": acc}
                for (y, a), acc in sorted(self.per_group_acc.items())
            ],
            "skipped_groups": [{"class": y, "attribute": a} for y, a in self.skipped_groups],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroupMetrics":
        return cls(
            per_class_acc={int(k): v for k, v in d["per_class"].items()},
            average_acc=d["average_acc"],
            worst_class_acc=d["worst_class_acc"],
            per_group_acc={(g["class"], g["attribute"]): g["acc"] for g in d["per_group"]},
            worst_group_acc=d["worst_group_acc"],
            skipped_groups=[(g["class"], g["attribute"]) for g in d["skipped_groups"]],
            group_sizes={(g["class"], g["attribute"]): g["n"] for g in d["per_group"] if g["n"] is not None},
        )


def metrics_from_predictions(pred, data: Dataset) -> GroupMetrics:
    pred = np.asarray(pred)
    correct = pred == data.labels
    per_class = {}
    for y in range(data.n_classes):
        m = data.labels == y
        if m.any():
            per_class[y] = float(correct[m].mean())
    metrics = GroupMetrics(
        per_class_acc=per_class,
        average_acc=float(correct.mean()),
        worst_class_acc=min(per_class.values()),
    )
    if data.has_attributes:
        for y in range(data.n_classes):
            for a in range(data.n_attributes):
                m = (data.labels == y) & (data.attributes == a)
                n = int(m.sum())
                if n == 0:
                    metrics.skipped_groups.append((y, a))
                    continue
                metrics.per_group_acc[(y, a)] = float(correct[m].mean())
                metrics.group_sizes[(y, a)] = n
        metrics.worst_group_acc = min(metrics.per_group_acc.values())
    return metrics


def evaluate(head, data: Dataset) -> GroupMetrics:
    """Argmax accuracy overall, per class and, with attributes, per (class, attribute) group."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    return metrics_from_predictions(head.predict(data.features), data)


def report(metrics: GroupMetrics, fmt: str = "table", attribute_name: str = "Color", extra: dict | None = None) -> str:
    if fmt == "json":
        payload = metrics.to_dict()
        if extra:
            payload.update(extra)
        return json.dumps(payload, indent=2, sort_keys=True)
    if fmt != "table":
        raise ValueError(f"unknown report format {fmt!r}")
    rows = [("Average", metrics.average_acc)]
    rows += [(f"Class {y}, {attribute_name} {a}", acc) for (y, a), acc in sorted(metrics.per_group_acc.items())]
    if metrics.worst_group_acc is not None:
        rows.append(("WGA", metrics.worst_group_acc))
    else:
        rows += [(f"Class {y}", acc) for y, acc in sorted(metrics.per_class_acc.items())]
    rows.append(("Worst class", metrics.worst_class_acc))
    width = max(len(r[0]) for r in rows)
    lines = [f"{'Accuracy':<{width}}  {'(%)':>7}", "-" * (width + 9)]
    lines += [f"{name:<{width}}  {100 * acc:7.2f}" for name, acc in rows]
    if metrics.skipped_groups:
        lines.append("skipped (empty): " + ", ".join(f"({y}, {a})" for y, a in metrics.skipped_groups))
    return "\n".join(lines)
