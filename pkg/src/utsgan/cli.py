"""Command-line surface: prepare spectrogram corpora, train runs, evaluate
checkpoints into FID tables, render figures, and export synthetic series.

Settings resolve with precedence: built-in defaults < config file (flat
``key = value`` lines, keys identical to flag names) < command-line flags.
The output root additionally honors the ``UTSGAN_OUT`` environment variable
between the built-in default and any config/flag value.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import multiprocessing
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.image as mpimg
import matplotlib.pyplot as plt
import numpy as np
import torch

from .data import Dataset, filter_class, load_ucr
from .evaluation import FID_CSV_HEADER, fid_report, train_fcn
from .networks import FcnClassifier
from .report import FIGURE_DPI, PNG_METADATA, render_run_plots
from .spectral import StftConfig, series_to_image
from .trainer import (
    MODE_SERIAL,
    MODE_UNIFIED,
    TrainingConfig,
    TrainingDivergedError,
    config_from_dict,
    config_to_dict,
    latest_checkpoint,
    load_bundle,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

OUT_ENV_VAR = "UTSGAN_OUT"
DEFAULT_OUT = "runs"
DEFAULT_CHECKPOINTS = (250, 500, 750, 1000)

CONFIG_KEYS = frozenset({
    "dataset", "class", "mode", "seed", "epochs", "checkpoints", "batch-size",
    "n-critic", "lambda", "dz", "image-size", "nfft", "hop", "runs", "jobs",
    "resume", "include-test", "out", "count",
})


class CliError(Exception):
    """User or configuration error (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


# ------------------------------------------------------------- settings

def parse_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    entries = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
        entries[key] = value.strip()
    return entries


def _cast(value: str, kind: str, key: str):
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "bool":
            lowered = value.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(value)
        return value
    except ValueError:
        raise CliError(f"config key {key!r}: cannot parse {value!r} as {kind}") from None


def setting(args, config: dict, key: str, kind: str = "str", default=None):
    """One resolved setting: flag beats config file beats default."""
    flag_value = getattr(args, key.replace("-", "_"), None)
    if flag_value is not None and flag_value is not False:
        return flag_value
    if key in config:
        return _cast(config[key], kind, key)
    return default


def _int_list(text: str, what: str) -> tuple:
    try:
        return tuple(int(tok) for tok in str(text).split(",") if tok.strip() != "")
    except ValueError:
        raise CliError(f"cannot parse {what} list from {text!r}") from None


def resolve_out_root(args, config: dict) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if "out" in config:
        return Path(config["out"])
    env = os.environ.get(OUT_ENV_VAR)
    if env:
        return Path(env)
    return Path(DEFAULT_OUT)


def _test_path_for(train_path: Path) -> Path:
    name = train_path.name
    if "_TRAIN" not in name:
        raise CliError(
            f"cannot derive test split for {train_path}: filename has no _TRAIN part"
        )
    return train_path.with_name(name.replace("_TRAIN", "_TEST"))


def load_dataset(path, include_test: bool) -> Dataset:
    if path is None:
        raise CliError("--dataset is required")
    path = Path(path)
    if not path.exists():
        raise CliError(f"dataset file not found: {path}")
    test_path = None
    if include_test:
        test_path = _test_path_for(path)
        if not test_path.exists():
            raise CliError(f"test split not found: {test_path}")
    return load_ucr(path, test_path)


# ------------------------------------------------------------- manifest

@dataclass(frozen=True)
class RunManifest:
    """One training request: datasets x classes x modes x seeds."""

    dataset_paths: tuple
    class_ids: tuple | None  # None selects every class of each dataset
    modes: tuple
    seeds: tuple
    out_root: Path
    include_test: bool

    def validate(self) -> None:
        if not self.dataset_paths:
            raise CliError("at least one dataset is required")
        for path in self.dataset_paths:
            if not Path(path).exists():
                raise CliError(f"dataset file not found: {path}")
        if self.class_ids is not None and not self.class_ids:
            raise CliError("class list is empty")
        if not self.modes:
            raise CliError("at least one mode is required")
        for mode in self.modes:
            if mode not in (MODE_UNIFIED, MODE_SERIAL):
                raise CliError(f"unknown mode {mode!r}")
        if not self.seeds:
            raise CliError("at least one seed is required")

    def jobs(self) -> list:
        """(dataset_path, class_id, mode, seed) tuples, one per run."""
        self.validate()
        out = []
        for path in self.dataset_paths:
            dataset = load_dataset(path, self.include_test)
            if self.class_ids is None:
                classes = dataset.class_ids
            else:
                missing = set(self.class_ids) - set(dataset.class_ids)
                if missing:
                    raise CliError(
                        f"{dataset.name} has no class ids {sorted(missing)}; "
                        f"available: {list(dataset.class_ids)}"
                    )
                classes = self.class_ids
            for class_id in classes:
                for mode in self.modes:
                    for seed in self.seeds:
                        out.append((Path(path), int(class_id), mode, int(seed)))
        if not out:
            raise CliError("manifest expands to zero runs")
        return out


def _train_one(dataset_path, include_test, class_id, cfg_dict, out_root, resume):
    """One isolated training run; returns (run key, result or error text)."""
    key = f"{Path(dataset_path).name} class={class_id} mode={cfg_dict['mode']} seed={cfg_dict['seed']}"
    try:
        dataset = load_dataset(dataset_path, include_test)
        cfg = config_from_dict(cfg_dict)
        run_dir = train(dataset, class_id, cfg, out_root, resume=resume)
        return key, str(run_dir), None
    except Exception as exc:  # per-run isolation: siblings keep going
        return key, None, f"{type(exc).__name__}: {exc}"


# ------------------------------------------------------------- commands

def cmd_prepare(args, config: dict) -> int:
    out_root = resolve_out_root(args, config)
    include_test = bool(setting(args, config, "include-test", "bool", False))
    dataset = load_dataset(setting(args, config, "dataset"), include_test)
    class_id = setting(args, config, "class", "int")
    pool = dataset if class_id is None else filter_class(dataset, int(class_id))

    image_size = int(setting(args, config, "image-size", "int", 64))
    n_fft = setting(args, config, "nfft", "int")
    hop = setting(args, config, "hop", "int")
    stft_cfg = StftConfig.for_length(pool.length, n_fft=n_fft, hop=hop)

    prep_dir = out_root / "prepared" / pool.name
    digest = hashlib.sha256()
    for path in sorted({str(p) for p in args._dataset_files}):
        digest.update(Path(path).read_bytes())
    digest.update(
        f"|{pool.name}|{stft_cfg.n_fft}|{stft_cfg.hop}|{image_size}".encode()
    )
    cache_key = digest.hexdigest()

    manifest_path = prep_dir / "prepare_manifest.txt"
    index_path = prep_dir / "index.csv"
    if manifest_path.exists() and manifest_path.read_text().strip() == cache_key:
        if index_path.exists():
            with open(index_path, newline="") as fh:
                rows = list(csv.reader(fh))[1:]
            if all((prep_dir / row[2]).exists() for row in rows):
                print(f"prepared corpus up to date: {prep_dir} ({len(rows)} images)")
                return EXIT_OK

    prep_dir.mkdir(parents=True, exist_ok=True)
    index_rows = []
    unit_images = []
    for row in range(pool.n):
        image = series_to_image(pool.samples[row], stft_cfg,
                                out_h=image_size, out_w=image_size)
        name = f"row_{row:05d}.png"
        mpimg.imsave(prep_dir / name, image.to_bytes())
        unit_images.append(image.pixels)
        index_rows.append((row, int(pool.labels[row]), name))

    with open(index_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("row", "label", "file"))
        writer.writerows(index_rows)

    n_preview = min(16, len(unit_images))
    cols = min(4, n_preview)
    rows_ = -(-n_preview // cols)
    fig, axes = plt.subplots(rows_, cols, figsize=(2.2 * cols, 2.2 * rows_))
    axes = np.atleast_1d(axes).reshape(-1)
    for i, ax in enumerate(axes):
        ax.set_xticks([])
        ax.set_yticks([])
        if i < n_preview:
            ax.imshow(unit_images[i])
        else:
            ax.axis("off")
    fig.suptitle(f"{pool.name}: spectrograms ({stft_cfg.n_fft}-point, hop {stft_cfg.hop})")
    fig.tight_layout()
    fig.savefig(prep_dir / "preview.png", dpi=FIGURE_DPI, metadata=PNG_METADATA)
    plt.close(fig)

    manifest_path.write_text(cache_key + "\n")
    print(f"prepared {len(index_rows)} images under {prep_dir}")
    return EXIT_OK


def _default_checkpoints(epochs: int) -> tuple:
    marks = tuple(e for e in DEFAULT_CHECKPOINTS if e <= epochs)
    if not marks or marks[-1] != epochs:
        marks = marks + (epochs,)
    return marks


def build_training_config(args, config: dict, mode: str, seed: int) -> TrainingConfig:
    epochs = int(setting(args, config, "epochs", "int", 1000))
    checkpoints = setting(args, config, "checkpoints")
    if checkpoints is None:
        checkpoint_epochs = _default_checkpoints(epochs)
    else:
        checkpoint_epochs = _int_list(checkpoints, "checkpoints")
    lam = float(setting(args, config, "lambda", "float", 10.0))
    cfg = TrainingConfig(
        mode=mode,
        epochs=epochs,
        n_critic=int(setting(args, config, "n-critic", "int", 5)),
        lam_x=lam,
        lam_y=lam,
        d_z=int(setting(args, config, "dz", "int", 100)),
        image_size=int(setting(args, config, "image-size", "int", 64)),
        n_fft=setting(args, config, "nfft", "int"),
        hop=setting(args, config, "hop", "int"),
        batch_size=setting(args, config, "batch-size", "int"),
        checkpoint_epochs=checkpoint_epochs,
        seed=seed,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise CliError(str(exc)) from None
    return cfg


def cmd_train(args, config: dict) -> int:
    out_root = resolve_out_root(args, config)
    include_test = bool(setting(args, config, "include-test", "bool", False))
    resume = bool(setting(args, config, "resume", "bool", False))
    jobs = int(setting(args, config, "jobs", "int", 1))
    if jobs < 1:
        raise CliError(f"jobs must be >= 1, got {jobs}")

    dataset_value = setting(args, config, "dataset")
    if not dataset_value:
        raise CliError("--dataset is required")
    class_value = setting(args, config, "class", "str", "all")
    mode_value = setting(args, config, "mode", "str", MODE_UNIFIED)
    seed_value = setting(args, config, "seed", "str", "0")

    manifest = RunManifest(
        dataset_paths=tuple(Path(p) for p in str(dataset_value).split(",") if p),
        class_ids=None if str(class_value) == "all" else _int_list(class_value, "class"),
        modes=tuple(str(mode_value).split(",")),
        seeds=_int_list(seed_value, "seed"),
        out_root=out_root,
        include_test=include_test,
    )
    runs = manifest.jobs()

    tasks = []
    for dataset_path, class_id, mode, seed in runs:
        cfg = build_training_config(args, config, mode, seed)
        tasks.append((dataset_path, include_test, class_id,
                      config_to_dict(cfg), out_root, resume))

    if jobs == 1:
        results = [_train_one(*task) for task in tasks]
    else:
        context = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=context) as pool:
            results = list(pool.map(_train_one, *zip(*tasks)))

    failures = 0
    for key, run_dir, error in results:
        if error is None:
            print(f"{key} -> {run_dir}")
        else:
            failures += 1
            print(f"{key} FAILED: {error}", file=sys.stderr)
    if failures:
        print(f"{failures} of {len(results)} runs failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


CLASSIFIER_FILE = "classifier.pt"


def _load_or_train_classifier(dataset: Dataset, path: Path, seed: int) -> FcnClassifier:
    if path.exists():
        payload = torch.load(path, map_location="cpu", weights_only=False)
        classifier = FcnClassifier(payload["series_length"], payload["n_classes"])
        classifier.load_state_dict(payload["state_dict"])
        classifier.eval()
        classifier.val_accuracy = float(payload["val_accuracy"])
        return classifier
    classifier = train_fcn(dataset, seed=seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "state_dict": classifier.state_dict(),
        "series_length": dataset.length,
        "n_classes": dataset.n_classes,
        "val_accuracy": classifier.val_accuracy,
        "seed": seed,
    }, path)
    return classifier


def _run_checkpoints(run_dir: Path) -> list:
    found = sorted(run_dir.glob("epoch_*.ckpt"), key=lambda p: int(p.stem.split("_")[1]))
    if not found:
        raise CliError(f"no checkpoints under {run_dir}")
    return found


def cmd_evaluate(args, config: dict) -> int:
    run_dir = Path(args.run)
    if not run_dir.is_dir():
        raise CliError(f"run directory not found: {run_dir}")
    checkpoints = _run_checkpoints(run_dir)
    include_test = bool(setting(args, config, "include-test", "bool", False))
    dataset = load_dataset(setting(args, config, "dataset"), include_test)
    runs = int(setting(args, config, "runs", "int", 25))
    seed = int(setting(args, config, "seed", "int", 0))

    first = load_bundle(checkpoints[0])[1]
    if first["dataset_name"] != dataset.name:
        raise CliError(
            f"run was trained on {first['dataset_name']!r} but --dataset loads "
            f"{dataset.name!r}"
        )

    if getattr(args, "out", None) or "out" in config:
        out_root = resolve_out_root(args, config)
        dataset_dir = out_root / dataset.name
    else:
        try:
            dataset_dir = run_dir.parents[2]
            out_root = run_dir.parents[3]
        except IndexError:
            raise CliError(
                f"{run_dir} is not nested under an output root; pass --out"
            ) from None
    classifier = _load_or_train_classifier(
        dataset, dataset_dir / CLASSIFIER_FILE, seed)

    rows = []
    for path in checkpoints:
        report = fid_report(path, dataset, int(first["class_id"]), classifier,
                            runs=runs, seed=seed)
        rows.append(report.row(classifier.val_accuracy))
        print("  ".join(f"{h}={v}" for h, v in zip(FID_CSV_HEADER, rows[-1])))

    with open(run_dir / "fid_report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FID_CSV_HEADER)
        writer.writerows(rows)

    comparison = out_root / "comparison.csv"
    comparison.parent.mkdir(parents=True, exist_ok=True)
    new_table = not comparison.exists()
    with open(comparison, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_table:
            writer.writerow(FID_CSV_HEADER)
        writer.writerows(rows)
    print(f"wrote {run_dir / 'fid_report.csv'} and appended to {comparison}")
    return EXIT_OK


def summarize_comparison(comparison_path) -> list:
    """Aggregate the global comparison table into per-epoch head-to-head
    fractions: for each epoch, the share of (dataset, class) pairs whose mean
    unified FID (over seeds) is <= the mean serial FID. Returns
    (epoch, fraction, pair_count) tuples sorted by epoch."""
    with open(comparison_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    by_key = {}
    for row in rows:
        key = (row["dataset"], row["class"], int(row["epoch"]), row["mode"])
        by_key.setdefault(key, []).append(float(row["fid_mean"]))
    epochs = sorted({key[2] for key in by_key})
    out = []
    for epoch in epochs:
        pairs = {(d, c) for (d, c, e, m) in by_key if e == epoch}
        wins = total = 0
        for d, c in sorted(pairs):
            unified = by_key.get((d, c, epoch, MODE_UNIFIED))
            serial = by_key.get((d, c, epoch, MODE_SERIAL))
            if unified is None or serial is None:
                continue
            total += 1
            if np.mean(unified) <= np.mean(serial):
                wins += 1
        if total:
            out.append((epoch, wins / total, total))
    return out


def cmd_plot(args, config: dict) -> int:
    run_dir = Path(args.run)
    if not run_dir.is_dir():
        raise CliError(f"run directory not found: {run_dir}")
    include_test = bool(setting(args, config, "include-test", "bool", False))
    dataset = load_dataset(setting(args, config, "dataset"), include_test)
    seed = int(setting(args, config, "seed", "int", 0))
    k = int(setting(args, config, "count", "int", 3))
    try:
        written = render_run_plots(run_dir, dataset, seed=seed, k=k)
    except FileNotFoundError as exc:
        raise CliError(str(exc)) from None
    for path in written:
        print(path)
    return EXIT_OK


def cmd_generate(args, config: dict) -> int:
    if args.checkpoint:
        ckpt_path = Path(args.checkpoint)
        if not ckpt_path.exists():
            raise CliError(f"checkpoint not found: {ckpt_path}")
    elif args.run:
        run_dir = Path(args.run)
        if not run_dir.is_dir():
            raise CliError(f"run directory not found: {run_dir}")
        if args.epoch is not None:
            ckpt_path = run_dir / f"epoch_{args.epoch}.ckpt"
            if not ckpt_path.exists():
                raise CliError(f"checkpoint not found: {ckpt_path}")
        else:
            ckpt_path = latest_checkpoint(run_dir)
            if ckpt_path is None:
                raise CliError(f"no checkpoints under {run_dir}")
    else:
        raise CliError("either --checkpoint or --run is required")

    count = int(setting(args, config, "count", "int", 10))
    if count < 1:
        raise CliError(f"count must be >= 1, got {count}")
    seed = int(setting(args, config, "seed", "int", 0))

    bundle, payload = load_bundle(ckpt_path)
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(count, bundle.d_z, generator=gen)
    series = bundle.generate_series(z).double().numpy() * float(payload["data_scale"])
    label = int(payload["class_id"])

    if args.output:
        out_path = Path(args.output)
    else:
        out_path = ckpt_path.parent / f"generated_epoch{payload['epoch']}_seed{seed}.tsv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as fh:
        for row in series:
            fh.write("\t".join([str(label)] + [f"{v:.6f}" for v in row]) + "\n")
    print(out_path)
    return EXIT_OK


# ------------------------------------------------------------- wiring

def _add_common(sub):
    sub.add_argument("--config", help="flat key = value settings file")
    sub.add_argument("--out", help="output root directory")
    sub.add_argument("--seed", help="random seed")


def build_parser() -> _Parser:
    parser = _Parser(prog="utsgan", description=__doc__)
    commands = parser.add_subparsers(dest="command")

    p = commands.add_parser("prepare", help="render and cache spectrogram images")
    _add_common(p)
    p.add_argument("--dataset", help="UCR-format TSV file")
    p.add_argument("--class", dest="class_", type=int, help="restrict to one class id")
    p.add_argument("--image-size", type=int, dest="image_size")
    p.add_argument("--nfft", type=int)
    p.add_argument("--hop", type=int)
    p.add_argument("--include-test", action="store_true", dest="include_test", default=None)
    p.set_defaults(func=cmd_prepare)

    p = commands.add_parser("train", help="train runs over classes x modes x seeds")
    _add_common(p)
    p.add_argument("--dataset", help="comma-separated UCR-format TSV files")
    p.add_argument("--class", dest="class_", help="comma-separated class ids, or 'all'")
    p.add_argument("--mode", help="comma-separated subset of {unified,serial}")
    p.add_argument("--epochs", type=int)
    p.add_argument("--checkpoints", help="comma-separated checkpoint epochs")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--n-critic", type=int, dest="n_critic")
    p.add_argument("--lambda", type=float, dest="lam", help="gradient penalty weight")
    p.add_argument("--dz", type=int)
    p.add_argument("--image-size", type=int, dest="image_size")
    p.add_argument("--nfft", type=int)
    p.add_argument("--hop", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--resume", action="store_true", default=None)
    p.add_argument("--include-test", action="store_true", dest="include_test", default=None)
    p.set_defaults(func=cmd_train)

    p = commands.add_parser("evaluate", help="compute FID reports for a run")
    _add_common(p)
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--dataset", help="UCR-format TSV file the run was trained on")
    p.add_argument("--runs", type=int, help="generation runs per checkpoint")
    p.add_argument("--include-test", action="store_true", dest="include_test", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = commands.add_parser("plot", help="render loss curves, grids, overlays")
    _add_common(p)
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--dataset", help="UCR-format TSV file the run was trained on")
    p.add_argument("--count", type=int, help="series per overlay")
    p.add_argument("--include-test", action="store_true", dest="include_test", default=None)
    p.set_defaults(func=cmd_plot)

    p = commands.add_parser("generate", help="export synthetic series as TSV")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint file")
    p.add_argument("--run", help="run directory (uses --epoch or the latest checkpoint)")
    p.add_argument("--epoch", type=int, help="checkpoint epoch within --run")
    p.add_argument("--count", type=int, help="number of series to export")
    p.add_argument("--output", help="output TSV path")
    p.set_defaults(func=cmd_generate)

    return parser


def _normalize_args(args) -> None:
    # argparse stores --class under class_ and --lambda under lam; expose the
    # names `setting` expects
    if hasattr(args, "class_"):
        setattr(args, "class", args.class_)
    if hasattr(args, "lam"):
        setattr(args, "lambda", args.lam)
    if getattr(args, "seed", None) is not None:
        args.seed = str(args.seed)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            raise CliError("a command is required (prepare, train, evaluate, plot, generate)")
        _normalize_args(args)
        config = parse_config_file(args.config) if getattr(args, "config", None) else {}
        if args.command == "prepare":
            first = setting(args, config, "dataset")
            if first is None:
                raise CliError("--dataset is required")
            files = [Path(first)]
            if setting(args, config, "include-test", "bool", False):
                files.append(_test_path_for(files[0]))
            args._dataset_files = files
        return args.func(args, config)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, NotADirectoryError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # pragma: no cover - defensive catch-all
        print(f"unexpected failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
