"""Datasets, the spurious-correlation generators, and file loaders."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049

# (class, color) counts of the Colored-MNIST training set; color 0 is red.
TABLE2_TRAIN_COUNTS = {(0, 0): 6398, (0, 1): 344, (1, 0): 325, (1, 1): 5526}


class DataFormatError(ValueError):
    """A file that does not parse under its declared format."""


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    attributes: np.ndarray | None = None
    n_classes: int | None = None
    n_attributes: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be a 2-d matrix, got shape {self.features.shape}")
        n = self.features.shape[0]
        if n < 1:
            raise ValueError("empty dataset")
        if self.labels.shape != (n,):
            raise ValueError(f"expected {n} labels, got {self.labels.shape}")
        if not np.isfinite(self.features).all():
            raise ValueError("features must be finite")
        if self.n_classes is None:
            self.n_classes = max(int(self.labels.max()) + 1, 2)
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        if self.attributes is not None:
            self.attributes = np.asarray(self.attributes, dtype=np.int64)
            if self.attributes.shape != (n,):
                raise ValueError(f"expected {n} attributes, got {self.attributes.shape}")
            if self.n_attributes is None:
                self.n_attributes = int(self.attributes.max()) + 1
            if self.attributes.min() < 0 or self.attributes.max() >= self.n_attributes:
                raise ValueError(f"attributes must lie in [0, {self.n_attributes})")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def has_attributes(self) -> bool:
        return self.attributes is not None

    @property
    def groups(self) -> np.ndarray:
        """Group id y * |A| + a per row."""
        if self.attributes is None:
            raise ValueError("dataset has no attribute labels")
        return self.labels * self.n_attributes + self.attributes

    def group_counts(self) -> dict[tuple[int, int], int]:
        counts = {}
        for y in range(self.n_classes):
            for a in range(self.n_attributes):
                counts[(y, a)] = int(np.sum((self.labels == y) & (self.attributes == a)))
        return counts

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.features[idx],
            self.labels[idx],
            None if self.attributes is None else self.attributes[idx],
            self.n_classes,
            self.n_attributes,
        )

    def concat(self, other: "Dataset") -> "Dataset":
        attrs = None
        if self.attributes is not None and other.attributes is not None:
            attrs = np.concatenate([self.attributes, other.attributes])
        return Dataset(
            np.vstack([self.features, other.features]),
            np.concatenate([self.labels, other.labels]),
            attrs,
            max(self.n_classes, other.n_classes),
            None if attrs is None else max(self.n_attributes, other.n_attributes),
        )


# -- synthetic Gaussian task ----------------------------------------------------


@dataclass
class SpuriousSpec:
    n_per_group: dict
    core_separation: float = 1.0
    spurious_separation: float = 1.5
    noise_sigma: float = 0.5
    d: int = 10
    seed: int = 0

    def __post_init__(self):
        counts = {tuple(int(v) for v in k): int(c) for k, c in self.n_per_group.items()}
        if not counts or min(counts.values()) < 1:
            raise ValueError("every group count must be >= 1")
        self.n_per_group = counts


def correlated_counts(n_per_class, p_corr: float) -> dict:
    """Split each class y so that a fraction ``p_corr`` carries its majority attribute.

    The majority attribute of class y is y (class 0 red, class 1 green), so
    ``p_corr`` above 0.5 reproduces the training correlation and below 0.5
    reverses it.
    """
    counts = {}
    for y, n in enumerate(n_per_class):
        major = int(round(p_corr * n))
        counts[(y, y)] = major
        counts[(y, 1 - y)] = n - major
    return counts


def generate_synthetic(spec: SpuriousSpec) -> Dataset:
    """Gaussian analog of a color-spurious task.

    Row = y * core_separation * e_0 + a * spurious_separation * e_1 + noise.
    """
    if spec.d < 2:
        raise ValueError("synthetic features need d >= 2")
    rng = np.random.default_rng(spec.seed)
    keys = sorted(spec.n_per_group)
    n_classes = max(max(k[0] for k in keys) + 1, 2)
    n_attr = max(max(k[1] for k in keys) + 1, 2)
    labels = np.concatenate([np.full(spec.n_per_group[k], k[0]) for k in keys])
    attrs = np.concatenate([np.full(spec.n_per_group[k], k[1]) for k in keys])
    X = spec.noise_sigma * rng.standard_normal((labels.size, spec.d))
    X[:, 0] += spec.core_separation * labels
    X[:, 1] += spec.spurious_separation * attrs
    order = rng.permutation(labels.size)
    return Dataset(X[order], labels[order], attrs[order], n_classes, n_attr)


# -- CSV ------------------------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    feature_columns: tuple[str, ...]
    label_column: str
    attribute_column: str | None = None
    n_classes: int | None = None
    n_attributes: int | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "CsvSchema":
        try:
            return cls(
                tuple(d["feature_columns"]),
                d["label_column"],
                d.get("attribute_column"),
                d.get("n_classes"),
                d.get("n_attributes"),
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed csv schema: missing or bad {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "feature_columns": list(self.feature_columns),
            "label_column": self.label_column,
            "attribute_column": self.attribute_column,
            "n_classes": self.n_classes,
            "n_attributes": self.n_attributes,
        }


def load_csv(path, schema: CsvSchema) -> Dataset:
    path = Path(path)
    feats, labels, attrs = [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        wanted = list(schema.feature_columns) + [schema.label_column]
        if schema.attribute_column:
            wanted.append(schema.attribute_column)
        missing = [c for c in wanted if c not in header]
        if missing:
            raise DataFormatError(f"{path}: missing columns {missing}")
        for row in reader:
            line = reader.line_num
            try:
                feats.append([float(row[c]) for c in schema.feature_columns])
                y = int(row[schema.label_column])
                a = int(row[schema.attribute_column]) if schema.attribute_column else None
            except (TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}:{line}: {exc}") from exc
            if not all(math.isfinite(v) for v in feats[-1]):
                raise DataFormatError(f"{path}:{line}: non-finite feature value")
            if y < 0 or (schema.n_classes is not None and y >= schema.n_classes):
                raise DataFormatError(f"{path}:{line}: label {y} outside [0, {schema.n_classes})")
            if a is not None and (a < 0 or (schema.n_attributes is not None and a >= schema.n_attributes)):
                raise DataFormatError(
                    f"{path}:{line}: attribute {a} outside [0, {schema.n_attributes})"
                )
            labels.append(y)
            attrs.append(a)
    if not labels:
        raise DataFormatError(f"{path}: empty dataset")
    return Dataset(
        np.array(feats, dtype=np.float64),
        np.array(labels),
        np.array(attrs) if schema.attribute_column else None,
        schema.n_classes,
        schema.n_attributes if schema.attribute_column else None,
    )


def default_schema(data: Dataset) -> CsvSchema:
    return CsvSchema(
        tuple(f"x{i}" for i in range(data.d)),
        "label",
        "attribute" if data.has_attributes else None,
        data.n_classes,
        data.n_attributes,
    )


def save_csv(data: Dataset, path) -> CsvSchema:
    """Write ``data`` with columns x0..x{d-1}, label[, attribute]."""
    schema = default_schema(data)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(schema.feature_columns) + ["label"] + (["attribute"] if data.has_attributes else []))
        for i in range(len(data)):
            row = [repr(float(v)) for v in data.features[i]] + [int(data.labels[i])]
            if data.has_attributes:
                row.append(int(data.attributes[i]))
            w.writerow(row)
    return schema


# -- MNIST IDX ------------------------------------------------------------------


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated header")
    got = struct.unpack(">i", raw[:4])[0]
    if got != magic:
        raise DataFormatError(f"{path}: bad magic {got:#010x}, expected {magic:#010x}")
    dims = struct.unpack(f">{ndim}i", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header != size:
        raise DataFormatError(f"{path}: payload has {len(raw) - header} bytes, header promises {size}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Read an IDX3 image file and IDX1 label file; returns (images, labels) as uint8."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return images, labels


def write_idx_images(images: np.ndarray, path) -> None:
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">4i", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">2i", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def make_colored_mnist(
    images: np.ndarray,
    digit_labels: np.ndarray,
    class_digits: tuple[int, int],
    counts: dict,
    seed: int = 0,
) -> Dataset:
    """Two-class colored digits: channel 0 (red) or channel 1 (green) carries the image.

    ``counts`` maps (class, color) to the number of images; each source image
    is used at most once. Features are pixels / 255 laid out as a flattened
    (2, H, W) array.
    """
    d0, d1 = class_digits
    if d0 == d1:
        raise ValueError("class digits must differ")
    rng = np.random.default_rng(seed)
    feats, labels, colors = [], [], []
    for cls, digit in enumerate((d0, d1)):
        pool = np.flatnonzero(digit_labels == digit)
        need = [int(counts.get((cls, c), 0)) for c in (0, 1)]
        if sum(need) > pool.size:
            raise ValueError(f"digit {digit}: {sum(need)} images requested, only {pool.size} available")
        pool = rng.permutation(pool)
        start = 0
        for color, n in enumerate(need):
            idx = pool[start : start + n]
            start += n
            block = np.zeros((n, 2) + images.shape[1:], dtype=np.float64)
            block[:, color] = images[idx] / 255.0
            feats.append(block)
            labels.append(np.full(n, cls))
            colors.append(np.full(n, color))
    X = np.concatenate(feats)
    y = np.concatenate(labels)
    a = np.concatenate(colors)
    order = rng.permutation(y.size)
    return Dataset(X[order].reshape(y.size, -1), y[order], a[order], 2, 2)


def split_calibration(data: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then floor(fraction * N) rows to calibration, the rest to selection."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(data)
    n_calib = int(math.floor(fraction * n))
    if n_calib == 0 or n_calib == n:
        raise ValueError(f"split of {n} rows at fraction {fraction} leaves an empty part")
    perm = np.random.default_rng(seed).permutation(n)
    return data.subset(np.sort(perm[:n_calib])), data.subset(np.sort(perm[n_calib:]))
