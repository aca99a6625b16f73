"""Figure rendering for training runs: loss curves, generated-spectrogram
grids, and real-vs-generated series overlays. All figures are written with a
fixed backend, dpi, and metadata so a rerun with the same seed produces
byte-identical files."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import torch

from .data import Dataset, filter_class
from .spectral import gan_to_unit
from .trainer import MODE_SERIAL, load_bundle

FIGURE_DPI = 100
PNG_METADATA = {"Software": "utsgan"}


def read_loss_table(run_dir) -> dict:
    """Column arrays from a run's loss log."""
    path = Path(run_dir) / "losses.csv"
    if not path.exists():
        raise FileNotFoundError(f"no loss log at {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not body:
        raise ValueError(f"loss log {path} has no data rows")
    columns = np.asarray(body, dtype=np.float64).T
    return {name: col for name, col in zip(header, columns)}


def read_run_config(run_dir) -> dict:
    path = Path(run_dir) / "config"
    if not path.exists():
        raise FileNotFoundError(f"no config file at {path}")
    entries = {}
    for line in path.read_text().splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries


def _save(fig, out_path: Path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=FIGURE_DPI, metadata=PNG_METADATA)
    plt.close(fig)
    return out_path


def plot_loss_curves(run_dir, out_path=None) -> Path:
    """Loss-vs-iteration curve: a single averaged curve for a unified run,
    separate image-side and series-side curves for a serial run."""
    run_dir = Path(run_dir)
    table = read_loss_table(run_dir)
    mode = read_run_config(run_dir).get("mode", "unified")
    out_path = Path(out_path) if out_path else run_dir / "plots" / "loss_curves.png"

    fig, ax = plt.subplots(figsize=(8.0, 4.5))
    if mode == MODE_SERIAL:
        ax.plot(table["step"], table["l_x"], label="image GAN loss", linewidth=1.0)
        ax.plot(table["step"], table["l_y"], label="series GAN loss", linewidth=1.0)
    else:
        ax.plot(table["step"], table["unified"], label="unified loss", linewidth=1.0)
    ax.set_xlabel("critic iteration")
    ax.set_ylabel("loss")
    ax.set_title(f"{mode} training loss")
    ax.legend(loc="upper right")
    fig.tight_layout()
    return _save(fig, out_path)


def generated_image_array(bundle, n_samples: int, seed: int) -> np.ndarray:
    """(n, H, W, 3) unit-range images sampled from the generator."""
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(n_samples, bundle.d_z, generator=gen)
    images = bundle.generate_images(z).numpy()
    return gan_to_unit(images).transpose(0, 2, 3, 1)


def plot_spectrogram_grid(bundle, seed: int, out_path, n_samples: int = 2,
                          title: str | None = None) -> Path:
    images = generated_image_array(bundle, n_samples, seed)
    fig, axes = plt.subplots(1, n_samples, figsize=(3.0 * n_samples, 3.2))
    axes = np.atleast_1d(axes)
    for i, ax in enumerate(axes):
        ax.imshow(images[i])
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, out_path)


def plot_series_overlay(bundle, data_scale: float, real_rows: np.ndarray,
                        seed: int, out_path, title: str | None = None) -> Path:
    """k generated series drawn over k real series from the training pool."""
    k = real_rows.shape[0]
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(k, bundle.d_z, generator=gen)
    synthetic = bundle.generate_series(z).numpy() * data_scale

    fig, ax = plt.subplots(figsize=(8.0, 4.5))
    for i in range(k):
        ax.plot(real_rows[i], color="C0", alpha=0.7, linewidth=1.0,
                label="real" if i == 0 else None)
    for i in range(k):
        ax.plot(synthetic[i], color="C1", alpha=0.8, linewidth=1.0,
                linestyle="--", label="generated" if i == 0 else None)
    ax.set_xlabel("time step")
    ax.set_ylabel("value")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right")
    fig.tight_layout()
    return _save(fig, out_path)


def render_run_plots(run_dir, dataset: Dataset, seed: int = 0, k: int = 3,
                     out_dir=None) -> list:
    """All figures for one run: the loss curve plus, per checkpoint, a
    generated-spectrogram grid and a real-vs-generated overlay."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir / "plots"
    checkpoints = sorted(run_dir.glob("epoch_*.ckpt"),
                         key=lambda p: int(p.stem.split("_")[1]))
    if not checkpoints:
        raise FileNotFoundError(f"no checkpoints under {run_dir}")

    written = [plot_loss_curves(run_dir, out_dir / "loss_curves.png")]
    for path in checkpoints:
        bundle, payload = load_bundle(path)
        epoch = int(payload["epoch"])
        pool = filter_class(dataset, int(payload["class_id"]))
        rng = np.random.default_rng(seed)
        rows = pool.samples[rng.choice(pool.n, size=min(k, pool.n), replace=False)]
        written.append(plot_spectrogram_grid(
            bundle, seed, out_dir / f"spectrograms_epoch_{epoch}.png",
            title=f"generated spectrograms, epoch {epoch}"))
        written.append(plot_series_overlay(
            bundle, float(payload["data_scale"]), rows, seed,
            out_dir / f"overlay_epoch_{epoch}.png",
            title=f"real vs. generated series, epoch {epoch}"))
    return written
