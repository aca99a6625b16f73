"""Univariate time-series dataset loading, normalization and batching."""

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

# Per-series standard deviations at or below this are treated as constant series:
# the series is centered but not divided.
ZNORM_STD_FLOOR = 1e-8


class SizeCategory(enum.Enum):
    SMALL = "small"      # at most 499 series
    MEDIUM = "medium"    # 500 to 1000 series
    LARGE = "large"      # more than 1000 series


def size_category(n: int) -> SizeCategory:
    if n < 0:
        raise ValueError(f"series count must be non-negative, got {n}")
    if n <= 499:
        return SizeCategory.SMALL
    if n <= 1000:
        return SizeCategory.MEDIUM
    return SizeCategory.LARGE


@dataclass(frozen=True)
class Dataset:
    """Immutable bundle of equal-length series with contiguous integer labels.

    ``labels`` are remapped to 0..C-1 in sorted order of the raw file labels;
    ``raw_class_labels[k]`` is the original label of class k.
    """

    name: str
    samples: np.ndarray            # (N, L) float64
    labels: np.ndarray             # (N,) int64, values in 0..C-1
    raw_class_labels: np.ndarray = None  # (C,) int64

    def __post_init__(self):
        samples = np.ascontiguousarray(np.asarray(self.samples, dtype=np.float64))
        labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        if samples.ndim != 2:
            raise ValueError(f"samples must be 2-D (N, L), got shape {samples.shape}")
        if labels.shape != (samples.shape[0],):
            raise ValueError("labels must be one per series")
        if not np.isfinite(samples).all():
            bad = np.where(~np.isfinite(samples).all(axis=1))[0]
            raise ValueError(f"non-finite values in series rows {bad.tolist()}")
        raw = self.raw_class_labels
        if raw is None:
            raw = np.unique(labels)
        raw = np.ascontiguousarray(np.asarray(raw, dtype=np.int64))
        for arr in (samples, labels, raw):
            arr.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "raw_class_labels", raw)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def class_ids(self) -> tuple:
        return tuple(int(c) for c in np.unique(self.labels))

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)

    def class_counts(self) -> dict:
        ids, counts = np.unique(self.labels, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}


def _parse_label(text: str, line_no: int) -> int:
    """Parse a class label rendered as integer text (a float spelling of an
    exact integer, e.g. '1.0', is tolerated)."""
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"line {line_no}: malformed class label {text!r}") from None
    if not value.is_integer():
        raise ValueError(f"line {line_no}: class label {text!r} is not an integer")
    return int(value)


def _parse_tsv(path: Path) -> tuple:
    """Parse one UCR-format TSV file into (labels, rows)."""
    labels = []
    rows = []
    expected_fields = None
    with open(path, "r") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split("\t")
            if expected_fields is None:
                if len(fields) < 2:
                    raise ValueError(
                        f"{path}: line {line_no}: expected a label and at least one value"
                    )
                expected_fields = len(fields)
            elif len(fields) != expected_fields:
                raise ValueError(
                    f"{path}: line {line_no}: expected {expected_fields} fields, got {len(fields)}"
                )
            labels.append(_parse_label(fields[0], line_no))
            try:
                rows.append([float(v) for v in fields[1:]])
            except ValueError:
                raise ValueError(f"{path}: line {line_no}: malformed numeric value") from None
    if not rows:
        raise ValueError(f"{path}: no records")
    return np.asarray(labels, dtype=np.int64), np.asarray(rows, dtype=np.float64)


def load_ucr(train_path, test_path=None, znorm: bool = True) -> Dataset:
    """Load a UCR-archive TSV file (optionally merged with its test split).

    Each line is one record: class label, tab, then the series values.
    Labels are remapped to contiguous 0..C-1 in sorted raw order.  Rows with
    non-finite values are rejected with their row indices.  Every series is
    z-normalized unless ``znorm`` is False.
    """
    train_path = Path(train_path)
    raw_labels, samples = _parse_tsv(train_path)
    if test_path is not None:
        test_labels, test_samples = _parse_tsv(Path(test_path))
        if test_samples.shape[1] != samples.shape[1]:
            raise ValueError(
                f"test split length {test_samples.shape[1]} differs from train length {samples.shape[1]}"
            )
        raw_labels = np.concatenate([raw_labels, test_labels])
        samples = np.vstack([samples, test_samples])

    if not np.isfinite(samples).all():
        bad = np.where(~np.isfinite(samples).all(axis=1))[0]
        raise ValueError(f"{train_path}: non-finite values in series rows {bad.tolist()}")

    distinct = np.unique(raw_labels)
    remap = {int(raw): k for k, raw in enumerate(distinct)}
    labels = np.asarray([remap[int(r)] for r in raw_labels], dtype=np.int64)
    if znorm:
        samples = znormalize(samples)

    name = train_path.name
    for suffix in ("_TRAIN.tsv", "_TRAIN.txt", ".tsv", ".txt"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            break
    return Dataset(name=name, samples=samples, labels=labels, raw_class_labels=distinct)


def znormalize(values: np.ndarray) -> np.ndarray:
    """Z-normalize each series (row) with the population standard deviation.

    Near-constant series (std <= 1e-8) are centered only.
    """
    values = np.asarray(values, dtype=np.float64)
    single = values.ndim == 1
    rows = values[None, :] if single else values
    mean = rows.mean(axis=1, keepdims=True)
    std = rows.std(axis=1, keepdims=True)
    out = (rows - mean) / np.where(std > ZNORM_STD_FLOOR, std, 1.0)
    return out[0] if single else out


def filter_class(d: Dataset, class_id: int) -> Dataset:
    """Restrict a dataset to one class; the result keeps the original label ids."""
    if class_id not in d.class_ids:
        raise ValueError(f"class {class_id} not in dataset {d.name!r} (classes {list(d.class_ids)})")
    mask = d.labels == class_id
    return Dataset(
        name=f"{d.name}_class{class_id}",
        samples=d.samples[mask],
        labels=d.labels[mask],
        raw_class_labels=d.raw_class_labels,
    )


def make_batches(d: Dataset, batch_size: int, seed: int) -> Iterator[np.ndarray]:
    """Yield index batches covering one epoch in a seeded random order.

    The final batch may be short; every index appears exactly once.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(d.n)
    for start in range(0, d.n, batch_size):
        yield order[start : start + batch_size]


def default_batch_size(n_class: int, cap: int = 64) -> int:
    """Batch-size rule: the full class if small, otherwise the cap."""
    if n_class < 1:
        raise ValueError("empty class")
    return min(cap, n_class)
