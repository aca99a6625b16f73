"""Shared toy-data builders and fixtures."""

from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest


def make_sine_square(n_per_class: int, length: int, seed: int, noise: float = 0.05):
    """Two-class toy set: noisy sines (class 0) vs. noisy square waves
    (class 1). Phase jitter is kept small so the classes stay linearly
    separable in raw sample space."""
    rng = np.random.default_rng(seed)
    t = np.arange(length) / length
    samples = []
    labels = []
    for i in range(n_per_class):
        cycles = 3.0 + rng.uniform(-0.05, 0.05)
        phase = rng.uniform(-0.2, 0.2)
        base = np.sin(2 * np.pi * cycles * t + phase)
        samples.append(base + noise * rng.standard_normal(length))
        labels.append(0)
    for i in range(n_per_class):
        cycles = 3.0 + rng.uniform(-0.05, 0.05)
        phase = rng.uniform(-0.2, 0.2)
        base = np.sign(np.sin(2 * np.pi * cycles * t + phase))
        samples.append(base + noise * rng.standard_normal(length))
        labels.append(1)
    return np.asarray(samples), np.asarray(labels, dtype=np.int64)


def make_two_tone(n_per_class: int, length: int, seed: int, f_low=3.0, f_high=9.0, noise=0.05):
    """Two-class toy set separated by dominant frequency."""
    rng = np.random.default_rng(seed)
    t = np.arange(length) / length
    samples = []
    labels = []
    for label, freq in ((0, f_low), (1, f_high)):
        for _ in range(n_per_class):
            cycles = freq + rng.uniform(-0.2, 0.2)
            phase = rng.uniform(0, 2 * np.pi)
            amp = 1.0 + rng.uniform(-0.1, 0.1)
            base = amp * np.sin(2 * np.pi * cycles * t + phase)
            base += 0.3 * np.sin(2 * np.pi * 2 * cycles * t + 2 * phase)
            samples.append(base + noise * rng.standard_normal(length))
            labels.append(label)
    return np.asarray(samples), np.asarray(labels, dtype=np.int64)


def write_ucr_tsv(path, samples, labels) -> Path:
    """Write a UCR-layout TSV: label, tab, series values, one record per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for label, row in zip(labels, samples):
            fields = [str(int(label))] + [f"{v:.6f}" for v in row]
            fh.write("\t".join(fields) + "\n")
    return path


@pytest.fixture(scope="session")
def beetlefly_like_path(tmp_path_factory) -> Path:
    """A 20-series, length-512, 2-class file matching the BeetleFly shape."""
    samples, labels = make_two_tone(n_per_class=10, length=512, seed=7)
    root = tmp_path_factory.mktemp("ucr")
    return write_ucr_tsv(root / "BeetleFlyLike_TRAIN.tsv", samples, labels + 1)


@pytest.fixture(scope="session")
def sine_square_path(tmp_path_factory) -> Path:
    samples, labels = make_sine_square(n_per_class=50, length=128, seed=11)
    root = tmp_path_factory.mktemp("toy")
    return write_ucr_tsv(root / "SineSquare_TRAIN.tsv", samples, labels)


@pytest.fixture(scope="session")
def tiny_run_env(tmp_path_factory):
    """One small trained run per mode, produced through the command line,
    shared by the reporting and CLI suites."""
    from utsgan.cli import main

    root = tmp_path_factory.mktemp("cliruns")
    samples, labels = make_two_tone(n_per_class=4, length=32, seed=5)
    data = write_ucr_tsv(root / "Toy_TRAIN.tsv", samples, labels)
    out = root / "out"
    rc = main([
        "train", "--dataset", str(data), "--class", "0",
        "--mode", "unified,serial", "--seed", "0", "--epochs", "2",
        "--checkpoints", "1,2", "--batch-size", "4", "--n-critic", "2",
        "--dz", "8", "--image-size", "16", "--nfft", "16", "--hop", "4",
        "--out", str(out),
    ])
    assert rc == 0
    return SimpleNamespace(
        data=data,
        out=out,
        unified=out / "Toy" / "0" / "unified" / "0",
        serial=out / "Toy" / "0" / "serial" / "0",
    )
