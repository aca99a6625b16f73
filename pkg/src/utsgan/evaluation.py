"""Synthetic-series quality metric: a per-dataset FCN classifier supplies a
128-dim pooled embedding, real and generated pools are summarized as
Gaussians in that embedding, and their Fréchet distance is averaged over
repeated generation runs."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import torch
from torch import nn

from .data import Dataset, filter_class
from .networks import FcnClassifier, init_weights
from .trainer import load_bundle, restore_state

FID_CSV_HEADER = (
    "dataset", "class", "mode", "epoch", "runs", "samples_per_run",
    "fid_mean", "fid_std", "classifier_val_acc",
)

SQRT_JITTER = 1e-6
IMAG_TOLERANCE = 1e-6
NEGATIVE_CLAMP = -1e-6


def _canonical_row_order(matrix: np.ndarray) -> np.ndarray:
    """Lexicographic row order, so moment sums are independent of how the
    caller happened to order the rows."""
    return np.lexsort(matrix.T[::-1])


@dataclass(frozen=True)
class FeatureSet:
    """Pooled classifier activations, one row per series."""

    features: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {feats.shape}")
        if feats.shape[0] < 2:
            raise ValueError(f"need at least 2 feature rows, got {feats.shape[0]}")
        if not np.isfinite(feats).all():
            raise ValueError("features contain non-finite values")
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class GaussianSummary:
    """Mean vector and positive-semidefinite covariance of a feature set."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(
                f"mean/covariance shapes {mean.shape}/{cov.shape} are inconsistent"
            )
        if not (np.isfinite(mean).all() and np.isfinite(cov).all()):
            raise ValueError("summary contains non-finite values")
        scale = max(1.0, float(np.abs(cov).max()))
        if np.abs(cov - cov.T).max() > 1e-10 * scale:
            raise ValueError("covariance is not symmetric")
        if float(np.linalg.eigvalsh(cov).min()) < -1e-8 * scale:
            raise ValueError("covariance has a significantly negative eigenvalue")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class FidReport:
    """Fréchet distance statistics for one checkpoint, over repeated runs."""

    dataset: str
    class_id: int
    mode: str
    epoch: int
    runs: int
    samples_per_run: int
    fid_mean: float
    fid_std: float

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError(f"runs must be >= 1, got {self.runs}")
        if self.fid_mean < 0.0 or self.fid_std < 0.0:
            raise ValueError("negative distance statistics")

    def row(self, classifier_val_acc: float) -> list:
        return [
            self.dataset, str(self.class_id), self.mode, str(self.epoch),
            str(self.runs), str(self.samples_per_run),
            f"{self.fid_mean:.6f}", f"{self.fid_std:.6f}",
            f"{classifier_val_acc:.4f}",
        ]


def stratified_split(labels: np.ndarray, val_fraction: float, seed: int) -> tuple:
    """Per-class shuffled index split; every class keeps at least one row on
    each side."""
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for class_id in np.unique(labels):
        members = np.flatnonzero(labels == class_id)
        if members.size < 2:
            raise ValueError(
                f"class {class_id} has {members.size} samples; need at least 2"
            )
        members = members[rng.permutation(members.size)]
        n_val = int(round(val_fraction * members.size))
        n_val = min(max(n_val, 1), members.size - 1)
        val_idx.append(members[:n_val])
        train_idx.append(members[n_val:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx))


def train_fcn(dataset: Dataset, seed: int = 0, max_epochs: int = 1000,
              patience: int = 100, lr: float = 1e-3) -> FcnClassifier:
    """Train a classifier on the dataset with cross-entropy and Adam over a
    stratified 80/20 split, stopping after `max_epochs` or once validation
    accuracy has not improved for `patience` consecutive epochs. Returns the
    best-validation-accuracy parameters, with `val_accuracy`, `best_epoch`,
    and `epochs_run` recorded on the module."""
    if dataset.n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {dataset.n_classes}")
    train_idx, val_idx = stratified_split(dataset.labels, 0.2, seed)

    classifier = FcnClassifier(dataset.length, dataset.n_classes)
    init_weights(classifier, torch.Generator().manual_seed(seed))
    optimizer = torch.optim.Adam(classifier.parameters(), lr=lr)

    x_train = torch.as_tensor(dataset.samples[train_idx], dtype=torch.float32).unsqueeze(1)
    y_train = torch.as_tensor(dataset.labels[train_idx], dtype=torch.long)
    x_val = torch.as_tensor(dataset.samples[val_idx], dtype=torch.float32).unsqueeze(1)
    y_val = torch.as_tensor(dataset.labels[val_idx], dtype=torch.long)

    best_acc = -1.0
    best_epoch = 0
    best_params = None
    since_improvement = 0
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        classifier.train()
        optimizer.zero_grad()
        loss = nn.functional.cross_entropy(classifier(x_train), y_train)
        loss.backward()
        optimizer.step()

        classifier.eval()
        with torch.no_grad():
            accuracy = float((classifier(x_val).argmax(dim=1) == y_val).double().mean())
        if accuracy > best_acc:
            best_acc = accuracy
            best_epoch = epoch
            best_params = copy.deepcopy(classifier.state_dict())
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= patience:
                break

    classifier.load_state_dict(best_params)
    classifier.eval()
    classifier.val_accuracy = best_acc
    classifier.best_epoch = best_epoch
    classifier.epochs_run = epoch
    return classifier


def extract_features(classifier: FcnClassifier, series) -> FeatureSet:
    """Pooled-embedding rows for each series row. Rows are forwarded in a
    canonical order so the result for a given multiset of series does not
    depend on their arrangement."""
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"series must be 2-D, got shape {arr.shape}")
    order = _canonical_row_order(arr)
    batch = torch.as_tensor(arr[order], dtype=torch.float32)
    was_training = classifier.training
    classifier.eval()
    with torch.no_grad():
        sorted_features = classifier.features(batch).double().numpy()
    classifier.train(was_training)
    features = np.empty_like(sorted_features)
    features[order] = sorted_features
    return FeatureSet(features)


def fit_gaussian(fs: FeatureSet) -> GaussianSummary:
    """Column means and unbiased sample covariance, symmetrized."""
    x = fs.features[_canonical_row_order(fs.features)]
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    cov = (cov + cov.T) / 2.0
    return GaussianSummary(mean=mean, cov=cov)


def _principal_root(product: np.ndarray) -> np.ndarray:
    # the residual estimate is discarded, and its computation divides by the
    # input norm, which warns on singular inputs
    with np.errstate(invalid="ignore", divide="ignore"):
        root, _ = scipy.linalg.sqrtm(product, disp=False)
    return np.asarray(root)


def _imag_residue(root: np.ndarray) -> float:
    """Imaginary magnitude of a matrix root relative to its real part."""
    if not np.iscomplexobj(root):
        return 0.0
    scale = max(1.0, float(np.abs(root.real).max()))
    return float(np.abs(root.imag).max()) / scale


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    """Squared 2-Wasserstein distance between two Gaussians:
    ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    cov_a, cov_b = a.cov, b.cov
    root = _principal_root(cov_a @ cov_b)
    if not np.isfinite(root).all() or _imag_residue(root) > IMAG_TOLERANCE:
        # rank-deficient pools (fewer rows than feature dimensions) can push
        # the root off the reals; retry on a ridge-regularized pair. Both
        # traces below use the same regularized covariances so identical
        # inputs still score zero.
        jitter = SQRT_JITTER * np.eye(a.dim)
        cov_a = cov_a + jitter
        cov_b = cov_b + jitter
        root = _principal_root(cov_a @ cov_b)
        if not np.isfinite(root).all():
            raise ValueError("matrix square root did not converge")
    if np.iscomplexobj(root):
        residue = _imag_residue(root)
        if residue > IMAG_TOLERANCE:
            raise ValueError(f"matrix square root has imaginary residue {residue:g}")
        root = root.real
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(root))
    if value < 0.0:
        if value < NEGATIVE_CLAMP:
            raise ValueError(f"distance {value:g} is negative beyond tolerance")
        value = 0.0
    return value


def fid_score(classifier: FcnClassifier, real_series, synthetic_series) -> float:
    """Fréchet distance between Gaussian summaries of classifier features of
    the two pools."""
    real = fit_gaussian(extract_features(classifier, real_series))
    synthetic = fit_gaussian(extract_features(classifier, synthetic_series))
    return frechet_distance(real, synthetic)


def _generate_rescaled(bundle, data_scale: float, n_samples: int, seed: int) -> np.ndarray:
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(n_samples, bundle.d_z, generator=gen)
    series = bundle.generate_series(z).double().numpy()
    return series * data_scale


def fid_scores(checkpoint, dataset: Dataset, class_id: int,
               classifier: FcnClassifier, runs: int = 25,
               samples_per_run: int | None = None, seed: int = 0) -> tuple:
    """Per-run Fréchet distances for one checkpoint, plus the checkpoint
    payload. Each run draws a fresh noise batch (seed XOR run index),
    generates series, maps them back to data scale, and scores them against
    the real class pool."""
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    if isinstance(checkpoint, (str, Path)):
        bundle, payload = load_bundle(checkpoint)
    else:
        payload = checkpoint
        state, _ = restore_state(payload)
        bundle = state.bundle
    pool = filter_class(dataset, class_id)
    if samples_per_run is None:
        samples_per_run = max(pool.n, 128)
    data_scale = float(payload["data_scale"])

    real_summary = fit_gaussian(extract_features(classifier, pool.samples))
    scores = []
    for run in range(runs):
        synthetic = _generate_rescaled(bundle, data_scale, samples_per_run, seed ^ run)
        summary = fit_gaussian(extract_features(classifier, synthetic))
        scores.append(frechet_distance(real_summary, summary))
    return np.asarray(scores, dtype=np.float64), int(samples_per_run), payload


def fid_report(checkpoint, dataset: Dataset, class_id: int,
               classifier: FcnClassifier, runs: int = 25,
               samples_per_run: int | None = None, seed: int = 0) -> FidReport:
    """Distance statistics over repeated generation runs: mean and population
    standard deviation of the per-run scores."""
    scores, samples_per_run, payload = fid_scores(
        checkpoint, dataset, class_id, classifier,
        runs=runs, samples_per_run=samples_per_run, seed=seed)
    return FidReport(
        dataset=payload["dataset_name"],
        class_id=int(payload["class_id"]),
        mode=payload["config"]["mode"],
        epoch=int(payload["epoch"]),
        runs=runs,
        samples_per_run=int(samples_per_run),
        fid_mean=float(scores.mean()),
        fid_std=float(scores.std()),
    )
