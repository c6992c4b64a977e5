"""Dataset construction for the presets and the end-to-end two-stage pipeline."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    TABLE2_TRAIN_COUNTS,
    CsvSchema,
    Dataset,
    SpuriousSpec,
    correlated_counts,
    generate_synthetic,
    load_csv,
    load_mnist_idx,
    make_colored_mnist,
    split_calibration,
)
from .evaluation import GroupMetrics, evaluate
from .model import EvidentialHead
from .training import Stage2Result, TrainConfig, calibrate, run_stage1, score_calibration

BETA_GRID = (0.0, 1e-3, 1e-2, 0.1, 1.0, 10.0)

PRESETS = {
    "table2": {
        "data": {
            "source": "colored_mnist",
            "mnist_dir": None,
            "class_digits": [1, 8],
            "train_counts": "table2",
            "val_p_corr": 0.5,
            "test_p_corr": 0.1,
        },
        "train": {
            "t1_epochs": 10,
            "eta": 10,
            "lr1": 0.01,
            "t2_epochs": 100,
            "lr2": 0.1,
            "beta": 10.0,
            "beta_grid": list(BETA_GRID),
            "batch_size": 128,
            "selection": "worst_class_acc",
        },
    },
    "synthetic": {
        "data": {
            "source": "synthetic",
            "train_counts": "table2",
            "n_val": 2000,
            "n_test": 4000,
            "val_p_corr": 0.5,
            "test_p_corr": 0.1,
            "core_separation": 1.0,
            "spurious_separation": 1.5,
            "noise_sigma": 0.5,
            "d": 10,
        },
        "train": {
            "t1_epochs": 10,
            "eta": 10,
            "lr1": 0.1,
            "t2_epochs": 100,
            "lr2": 0.1,
            "beta": 10.0,
            "beta_grid": list(BETA_GRID),
            "batch_size": 128,
            "selection": "worst_class_acc",
        },
    },
    "balanced": {
        "data": {
            "source": "synthetic",
            "train_counts": {"0,0": 3000, "0,1": 3000, "1,0": 3000, "1,1": 3000},
            "n_val": 2000,
            "n_test": 4000,
            "val_p_corr": 0.5,
            "test_p_corr": 0.5,
            "core_separation": 1.0,
            "spurious_separation": 1.5,
            "noise_sigma": 0.5,
            "d": 10,
        },
        "train": {
            "t1_epochs": 10,
            "eta": 10,
            "lr1": 0.1,
            "t2_epochs": 100,
            "lr2": 0.1,
            "beta": 10.0,
            "beta_grid": list(BETA_GRID),
            "batch_size": 128,
            "selection": "worst_class_acc",
        },
    },
}


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])


@dataclass
class Splits:
    """Train and test sets plus held-out data for Stage 2.

    Held-out data is either a ``validation`` set, split into calibration and
    selection halves on demand, or an explicit ``calib``/``selection`` pair.
    """

    train: Dataset
    validation: Dataset | None
    test: Dataset
    calib: Dataset | None = None
    selection: Dataset | None = None

    def __post_init__(self):
        if (self.validation is None) == (self.calib is None):
            raise ValueError("give either a validation set or an explicit calibration set")

    def calibration_split(self, fraction: float, seed: int) -> tuple[Dataset, Dataset | None]:
        if self.calib is not None:
            return self.calib, self.selection
        if fraction >= 1.0:
            return self.validation, None
        return split_calibration(self.validation, fraction, seed)


def parse_counts(counts) -> dict:
    """Group counts from the preset name ``"table2"`` or a mapping with ``"y,a"`` keys."""
    if counts == "table2":
        return dict(TABLE2_TRAIN_COUNTS)
    if not isinstance(counts, dict):
        raise ValueError(f"train_counts must be 'table2' or a mapping, got {counts!r}")
    out = {}
    for k, v in counts.items():
        key = tuple(int(p) for p in k.split(",")) if isinstance(k, str) else tuple(k)
        if len(key) != 2:
            raise ValueError(f"group key {k!r} is not 'class,attribute'")
        out[key] = int(v)
    return out


def class_totals(counts: dict) -> list[int]:
    n_classes = max(y for y, _ in counts) + 1
    return [sum(n for (y, _), n in counts.items() if y == k) for k in range(n_classes)]


def _split_by_prior(total: int, prior: list[int]) -> list[int]:
    # held-out splits keep the training class prior
    shares = [total * p / sum(prior) for p in prior]
    sizes = [int(round(s)) for s in shares]
    sizes[-1] = total - sum(sizes[:-1])
    return sizes


def synthetic_splits(cfg: dict, seed: int) -> Splits:
    counts = parse_counts(cfg.get("train_counts", "table2"))
    gen = {k: cfg[k] for k in ("core_separation", "spurious_separation", "noise_sigma", "d") if k in cfg}
    prior = class_totals(counts)
    val_counts = correlated_counts(_split_by_prior(int(cfg.get("n_val", 2000)), prior), cfg.get("val_p_corr", 0.5))
    test_counts = correlated_counts(_split_by_prior(int(cfg.get("n_test", 4000)), prior), cfg.get("test_p_corr", 0.1))
    base = int(seed) * 3
    return Splits(
        generate_synthetic(SpuriousSpec(counts, seed=base + 1, **gen)),
        generate_synthetic(SpuriousSpec(val_counts, seed=base + 2, **gen)),
        generate_synthetic(SpuriousSpec(test_counts, seed=base + 3, **gen)),
    )


MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def find_mnist_files(mnist_dir) -> dict[str, Path]:
    root = Path(mnist_dir)
    paths = {k: root / v for k, v in MNIST_FILES.items()}
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        raise FileNotFoundError(f"MNIST IDX files not found: {', '.join(missing)}")
    return paths


def colored_mnist_splits(cfg: dict, seed: int) -> Splits:
    """Training set from the MNIST training file; validation and test halves of t10k.

    The MNIST training file holds exactly the 6742 ones and 5851 eights the
    table2 counts use, so held-out data comes from the t10k file.
    """
    if not cfg.get("mnist_dir"):
        raise ValueError("colored_mnist data needs 'mnist_dir'")
    paths = find_mnist_files(cfg["mnist_dir"])
    digits = tuple(int(d) for d in cfg.get("class_digits", (1, 8)))
    tr_img, tr_lab = load_mnist_idx(paths["train_images"], paths["train_labels"])
    te_img, te_lab = load_mnist_idx(paths["test_images"], paths["test_labels"])
    counts = parse_counts(cfg.get("train_counts", "table2"))
    base = int(seed) * 3
    train = make_colored_mnist(tr_img, tr_lab, digits, counts, seed=base + 1)
    rng = np.random.default_rng(base + 4)
    pool = rng.permutation(np.flatnonzero(np.isin(te_lab, digits)))
    half = pool.size // 2
    val_idx, test_idx = np.sort(pool[:half]), np.sort(pool[half:])

    def held_out(idx, p_corr, s):
        totals = [int(np.sum(te_lab[idx] == d)) for d in digits]
        return make_colored_mnist(te_img[idx], te_lab[idx], digits, correlated_counts(totals, p_corr), seed=s)

    return Splits(
        train,
        held_out(val_idx, cfg.get("val_p_corr", 0.5), base + 2),
        held_out(test_idx, cfg.get("test_p_corr", 0.1), base + 3),
    )


CSV_KEYS = ("schema", "train", "test", "validation", "calib", "selection")


def csv_splits(cfg: dict) -> Splits:
    """Splits from CSV files: train, test and either validation or calib (+ optional selection)."""
    for key in ("schema", "train", "test"):
        if key not in cfg:
            raise ValueError(f"csv data needs {key!r}")
    if ("validation" in cfg) == ("calib" in cfg):
        raise ValueError("csv data needs exactly one of 'validation' or 'calib'")
    schema = cfg["schema"]
    if not isinstance(schema, CsvSchema):
        schema = CsvSchema.from_dict(schema)

    def load(key):
        return load_csv(cfg[key], schema) if cfg.get(key) else None

    return Splits(load("train"), load("validation"), load("test"), load("calib"), load("selection"))


def build_splits(data_cfg: dict, seed: int) -> Splits:
    source = data_cfg.get("source")
    if source == "synthetic":
        return synthetic_splits(data_cfg, seed)
    if source == "colored_mnist":
        return colored_mnist_splits(data_cfg, seed)
    if source == "csv":
        return csv_splits(data_cfg)
    raise ValueError(f"data.source must be synthetic, csv or colored_mnist, got {source!r}")


@dataclass
class RunResult:
    theta1: EvidentialHead
    stage1_trace: list[float]
    erm_metrics: GroupMetrics
    theta2: EvidentialHead | None = None
    stage2: Stage2Result | None = None
    final_metrics: GroupMetrics | None = None
    splits: Splits | None = field(default=None, repr=False)

    @property
    def head(self) -> EvidentialHead:
        return self.theta2 if self.theta2 is not None else self.theta1


def run_pipeline(splits: Splits, config: TrainConfig, stage: str = "full") -> RunResult:
    """Stage 1 on the training split, then (for ``stage="full"``) scoring and Stage 2.

    ``stage="erm-only"`` stops after Stage 1; the returned metrics describe the
    biased baseline.
    """
    if stage not in ("full", "erm-only"):
        raise ValueError(f"stage must be 'full' or 'erm-only', got {stage!r}")
    calib, selection = splits.calibration_split(config.calib_fraction, config.seed)
    train = splits.train.concat(calib) if config.stage1_include_calib else splits.train
    theta1, trace = run_stage1(train, config)
    result = RunResult(theta1, trace, evaluate(theta1, splits.test), splits=splits)
    if stage == "erm-only":
        result.final_metrics = result.erm_metrics
        return result
    scores = score_calibration(theta1, calib)
    stage2 = calibrate(theta1, calib, scores, config, selection)
    result.theta2 = stage2.head
    result.stage2 = stage2
    result.final_metrics = evaluate(stage2.head, splits.test)
    return result
