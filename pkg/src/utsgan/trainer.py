"""Training loops: the unified single-loss mode and the serial two-loop baseline."""

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import Dataset, default_batch_size, filter_class, make_batches
from .networks import ModelBundle, NetworkWidths, init_bundle
from .objective import (
    LossBreakdown,
    critic_term,
    generator_objective,
    gradient_penalty,
)
from .spectral import StftConfig, default_colormap, series_to_image, unit_to_gan

MODE_UNIFIED = "unified"
MODE_SERIAL = "serial"
CHECKPOINT_FORMAT_VERSION = 1
LOSS_CSV_HEADER = ("step", "epoch", "wgan_x", "gp_x", "wgan_y", "gp_y", "l_x", "l_y", "unified")

# floor under per-series amplitude so constant-zero series stay finite
SCALE_FLOOR = 1e-12


class TrainingDivergedError(RuntimeError):
    """Raised when a loss goes non-finite; carries the last healthy breakdown."""

    def __init__(self, message, last_breakdown=None, step=None):
        super().__init__(message)
        self.last_breakdown = last_breakdown
        self.step = step


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainingConfig:
    mode: str = MODE_UNIFIED
    epochs: int = 1000
    n_critic: int = 5
    adam: AdamConfig = AdamConfig()
    lam_x: float = 10.0
    lam_y: float = 10.0
    d_z: int = 100
    image_size: int = 64
    n_fft: int = None            # None -> length rule from the spectral module
    hop: int = None
    batch_size: int = None       # None -> min(64, class size)
    checkpoint_epochs: tuple = (250, 500, 750, 1000)
    seed: int = 0
    widths: NetworkWidths = NetworkWidths()

    def validate(self) -> None:
        if self.mode not in (MODE_UNIFIED, MODE_SERIAL):
            raise ValueError(f"mode must be '{MODE_UNIFIED}' or '{MODE_SERIAL}', got {self.mode!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.n_critic < 1:
            raise ValueError("n_critic must be >= 1")
        if self.adam.lr <= 0:
            raise ValueError("learning rate must be > 0")
        bad = [e for e in self.checkpoint_epochs if not 1 <= e <= self.epochs]
        if bad:
            raise ValueError(f"checkpoint epochs {bad} outside [1, {self.epochs}]")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def config_to_dict(cfg: TrainingConfig) -> dict:
    """Flatten a TrainingConfig into primitives for files and checkpoints."""
    return {
        "mode": cfg.mode,
        "epochs": cfg.epochs,
        "n_critic": cfg.n_critic,
        "lr": cfg.adam.lr,
        "beta1": cfg.adam.beta1,
        "beta2": cfg.adam.beta2,
        "adam_eps": cfg.adam.eps,
        "lambda_x": cfg.lam_x,
        "lambda_y": cfg.lam_y,
        "dz": cfg.d_z,
        "image_size": cfg.image_size,
        "nfft": cfg.n_fft,
        "hop": cfg.hop,
        "batch_size": cfg.batch_size,
        "checkpoints": ",".join(str(e) for e in cfg.checkpoint_epochs),
        "seed": cfg.seed,
        "g_base": cfg.widths.g_base,
        "f_encoder": cfg.widths.f_encoder,
        "f_bottleneck": cfg.widths.f_bottleneck,
        "f_decoder": cfg.widths.f_decoder,
        "d_y_widths": ",".join(str(w) for w in cfg.widths.d_y_widths),
        "d_y_kernels": ",".join(str(k) for k in cfg.widths.d_y_kernels),
    }


def config_from_dict(d: dict) -> TrainingConfig:
    def opt_int(key):
        value = d.get(key)
        return None if value in (None, "", "None") else int(value)

    def int_tuple(key, default):
        value = d.get(key)
        if value is None:
            return default
        if isinstance(value, (tuple, list)):
            return tuple(int(v) for v in value)
        return tuple(int(v) for v in str(value).split(",") if v != "")

    widths = NetworkWidths(
        g_base=int(d.get("g_base", 256)),
        f_encoder=int(d.get("f_encoder", 32)),
        f_bottleneck=int(d.get("f_bottleneck", 256)),
        f_decoder=int(d.get("f_decoder", 128)),
        d_y_widths=int_tuple("d_y_widths", (64, 128, 64)),
        d_y_kernels=int_tuple("d_y_kernels", (8, 5, 3)),
    )
    adam = AdamConfig(
        lr=float(d.get("lr", 1e-4)),
        beta1=float(d.get("beta1", 0.0)),
        beta2=float(d.get("beta2", 0.9)),
        eps=float(d.get("adam_eps", 1e-8)),
    )
    return TrainingConfig(
        mode=str(d.get("mode", MODE_UNIFIED)),
        epochs=int(d.get("epochs", 1000)),
        n_critic=int(d.get("n_critic", 5)),
        adam=adam,
        lam_x=float(d.get("lambda_x", 10.0)),
        lam_y=float(d.get("lambda_y", 10.0)),
        d_z=int(d.get("dz", 100)),
        image_size=int(d.get("image_size", 64)),
        n_fft=opt_int("nfft"),
        hop=opt_int("hop"),
        batch_size=opt_int("batch_size"),
        checkpoint_epochs=int_tuple("checkpoints", (250, 500, 750, 1000)),
        seed=int(d.get("seed", 0)),
        widths=widths,
    )


def adam_update(params, grads, moments, cfg: AdamConfig, step: int):
    """One bias-corrected Adam update over parallel tensor lists, in place.

    ``moments`` is an (m_list, v_list) pair; ``step`` is the 1-based update
    count used for bias correction.
    """
    m_list, v_list = moments
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, m_list, v_list):
            if g is None:
                g = torch.zeros_like(p)
            m.mul_(cfg.beta1).add_(g, alpha=1.0 - cfg.beta1)
            v.mul_(cfg.beta2).addcmul_(g, g, value=1.0 - cfg.beta2)
            m_hat = m / (1.0 - cfg.beta1 ** step)
            v_hat = v / (1.0 - cfg.beta2 ** step)
            p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps)
    return params, moments


class Adam:
    """Adam with explicit moment tensors (kept simple so checkpoints can
    serialize the full optimizer state as named arrays)."""

    def __init__(self, params, cfg: AdamConfig):
        self.params = list(params)
        self.cfg = cfg
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        adam_update(self.params, grads, (self.m, self.v), self.cfg, self.t)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [m.clone() for m in self.m], "v": [v.clone() for v in self.v]}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        for dst, src in zip(self.m, state["m"]):
            dst.copy_(src)
        for dst, src in zip(self.v, state["v"]):
            dst.copy_(src)


class TrainerState:
    """A model bundle plus its optimizers, RNG stream and step counters."""

    def __init__(self, bundle: ModelBundle, cfg: TrainingConfig):
        self.bundle = bundle
        self.cfg = cfg
        self.torch_gen = torch.Generator().manual_seed(cfg.seed)
        self.step = 0
        self.epoch = 0
        self.opt_d_x = Adam(bundle.d_x.parameters(), cfg.adam)
        self.opt_d_y = Adam(bundle.d_y.parameters(), cfg.adam)
        if cfg.mode == MODE_UNIFIED:
            self.opt_gen = Adam(
                list(bundle.g.parameters()) + list(bundle.f.parameters()), cfg.adam
            )
            self.optimizers = {"d_x": self.opt_d_x, "d_y": self.opt_d_y, "gen": self.opt_gen}
        else:
            self.opt_g = Adam(bundle.g.parameters(), cfg.adam)
            self.opt_f = Adam(bundle.f.parameters(), cfg.adam)
            self.optimizers = {
                "d_x": self.opt_d_x, "d_y": self.opt_d_y,
                "g": self.opt_g, "f": self.opt_f,
            }

    def randn(self, *shape) -> torch.Tensor:
        return torch.randn(*shape, generator=self.torch_gen)

    def rand(self, *shape) -> torch.Tensor:
        return torch.rand(*shape, generator=self.torch_gen)


def _grad_step(opt: Adam, loss: torch.Tensor) -> None:
    grads = torch.autograd.grad(loss, opt.params, allow_unused=True)
    opt.step(grads)


def _check_finite(value: torch.Tensor, label: str, last, step: int) -> None:
    if not math.isfinite(float(value.detach())):
        raise TrainingDivergedError(
            f"non-finite {label} at step {step}; last healthy breakdown: {last}",
            last_breakdown=last,
            step=step,
        )


def train_step_unified(state: TrainerState, real_images, real_series, last_breakdown=None):
    """One unified step: n_critic joint critic iterations (one shared G(z)
    forward feeds both critics), then one joint (G, F) generator update."""
    cfg = state.cfg
    bundle = state.bundle
    logs = []
    last = last_breakdown
    for _ in range(cfg.n_critic):
        z = state.randn(real_images.shape[0], cfg.d_z)
        with torch.no_grad():
            fake_images = bundle.g(z)
            fake_series = bundle.f(fake_images)

        wgan_x = critic_term(bundle.d_x(real_images), bundle.d_x(fake_images))
        gp_x = gradient_penalty(bundle.d_x, real_images, fake_images, cfg.lam_x,
                                state.rand(real_images.shape[0]))
        _check_finite(gp_x - wgan_x, "image-critic loss", last, state.step)
        _grad_step(state.opt_d_x, gp_x - wgan_x)

        wgan_y = critic_term(bundle.d_y(real_series), bundle.d_y(fake_series))
        gp_y = gradient_penalty(bundle.d_y, real_series, fake_series, cfg.lam_y,
                                state.rand(real_series.shape[0]))
        _check_finite(gp_y - wgan_y, "series-critic loss", last, state.step)
        _grad_step(state.opt_d_y, gp_y - wgan_y)

        last = LossBreakdown.from_components(
            wgan_x.item(), gp_x.item(), wgan_y.item(), gp_y.item(), cfg.lam_x, cfg.lam_y
        )
        logs.append(last)

    z = state.randn(real_images.shape[0], cfg.d_z)
    gen_loss = generator_objective(bundle.d_x, bundle.d_y, bundle.g, bundle.f, z)
    _check_finite(gen_loss, "generator objective", last, state.step)
    _grad_step(state.opt_gen, gen_loss)
    return logs


def train_step_serial(state: TrainerState, real_images, real_series, last_breakdown=None):
    """One serial-baseline step: a standalone image WGAN-GP update for
    (D_x, G), then a standalone series WGAN-GP update for (D_y, F) that treats
    G's outputs as fixed inputs (no gradient path back to G)."""
    cfg = state.cfg
    bundle = state.bundle
    last = last_breakdown

    image_logs = []
    for _ in range(cfg.n_critic):
        z = state.randn(real_images.shape[0], cfg.d_z)
        with torch.no_grad():
            fake_images = bundle.g(z)
        wgan_x = critic_term(bundle.d_x(real_images), bundle.d_x(fake_images))
        gp_x = gradient_penalty(bundle.d_x, real_images, fake_images, cfg.lam_x,
                                state.rand(real_images.shape[0]))
        _check_finite(gp_x - wgan_x, "image-critic loss", last, state.step)
        _grad_step(state.opt_d_x, gp_x - wgan_x)
        image_logs.append((wgan_x.item(), gp_x.item()))

    z = state.randn(real_images.shape[0], cfg.d_z)
    g_loss = -bundle.d_x(bundle.g(z)).mean()
    _check_finite(g_loss, "image-generator loss", last, state.step)
    _grad_step(state.opt_g, g_loss)

    series_logs = []
    for _ in range(cfg.n_critic):
        z = state.randn(real_series.shape[0], cfg.d_z)
        with torch.no_grad():
            fixed_images = bundle.g(z)
            fake_series = bundle.f(fixed_images)
        wgan_y = critic_term(bundle.d_y(real_series), bundle.d_y(fake_series))
        gp_y = gradient_penalty(bundle.d_y, real_series, fake_series, cfg.lam_y,
                                state.rand(real_series.shape[0]))
        _check_finite(gp_y - wgan_y, "series-critic loss", last, state.step)
        _grad_step(state.opt_d_y, gp_y - wgan_y)
        series_logs.append((wgan_y.item(), gp_y.item()))

    z = state.randn(real_series.shape[0], cfg.d_z)
    with torch.no_grad():
        fixed_images = bundle.g(z)
    f_loss = -bundle.d_y(bundle.f(fixed_images)).mean()
    _check_finite(f_loss, "series-generator loss", last, state.step)
    _grad_step(state.opt_f, f_loss)

    logs = []
    for (wx, gx), (wy, gy) in zip(image_logs, series_logs):
        last = LossBreakdown.from_components(wx, gx, wy, gy, cfg.lam_x, cfg.lam_y)
        logs.append(last)
    return logs


def stream_seed(seed: int, epoch: int, stream: int) -> int:
    """Stable per-epoch batch-stream seed derivation."""
    return int(np.random.SeedSequence((seed, epoch, stream)).generate_state(1)[0])


def prepare_training_arrays(pool: Dataset, cfg: TrainingConfig):
    """Rescaled series tensor, rendered image tensor (GAN range) and the
    recorded data scale for inverse mapping at export."""
    scales = np.maximum(np.abs(pool.samples).max(axis=1), SCALE_FLOOR)
    data_scale = float(scales.mean())
    series = torch.as_tensor(pool.samples / scales[:, None], dtype=torch.float32)

    stft_cfg = StftConfig.for_length(pool.length, cfg.n_fft, cfg.hop)
    colormap = default_colormap()
    images = np.stack([
        unit_to_gan(
            series_to_image(row, stft_cfg, colormap, cfg.image_size, cfg.image_size).pixels
        )
        for row in pool.samples
    ])
    images = torch.as_tensor(images, dtype=torch.float32).permute(0, 3, 1, 2).contiguous()
    return series, images, data_scale, stft_cfg


def run_directory(out_root, dataset_name: str, class_id: int, mode: str, seed: int) -> Path:
    return Path(out_root) / dataset_name / str(class_id) / mode / str(seed)


def save_checkpoint(path, state: TrainerState, data_scale: float,
                    dataset_name: str, class_id: int, extra: dict = None) -> None:
    bundle = state.bundle
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "epoch": state.epoch,
        "step": state.step,
        "models": {
            "g": bundle.g.state_dict(),
            "d_x": bundle.d_x.state_dict(),
            "f": bundle.f.state_dict(),
            "d_y": bundle.d_y.state_dict(),
        },
        "optimizers": {name: opt.state_dict() for name, opt in state.optimizers.items()},
        "torch_rng": state.torch_gen.get_state(),
        "config": config_to_dict(state.cfg),
        "data_scale": data_scale,
        "dataset_name": dataset_name,
        "class_id": class_id,
        "series_length": bundle.series_length,
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version}")
    return payload


def restore_state(payload: dict) -> tuple:
    """Rebuild (TrainerState, data_scale) from a checkpoint payload."""
    cfg = config_from_dict(payload["config"])
    bundle = init_bundle(
        cfg.seed, d_z=cfg.d_z, image_size=cfg.image_size,
        series_length=int(payload["series_length"]), widths=cfg.widths,
    )
    state = TrainerState(bundle, cfg)
    for name, module in (("g", bundle.g), ("d_x", bundle.d_x), ("f", bundle.f), ("d_y", bundle.d_y)):
        module.load_state_dict(payload["models"][name])
    for name, opt in state.optimizers.items():
        opt.load_state_dict(payload["optimizers"][name])
    state.torch_gen.set_state(payload["torch_rng"])
    state.step = int(payload["step"])
    state.epoch = int(payload["epoch"])
    return state, float(payload["data_scale"])


def load_bundle(path) -> tuple:
    """(ModelBundle, payload) from a checkpoint file, for generation/evaluation."""
    payload = load_checkpoint(path)
    state, _ = restore_state(payload)
    return state.bundle, payload


def _write_config_file(path: Path, cfg: TrainingConfig, extra: dict) -> None:
    entries = dict(config_to_dict(cfg))
    entries.update(extra)
    with open(path, "w") as fh:
        for key, value in entries.items():
            fh.write(f"{key} = {'' if value is None else value}\n")


def _truncate_csv(path: Path, keep_rows) -> None:
    """Drop rows failing the predicate (used when resuming past a crash)."""
    if not path.exists():
        return
    with open(path, "r", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    body = [r for r in body if keep_rows(r)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(body)


def latest_checkpoint(run_dir: Path):
    candidates = sorted(
        Path(run_dir).glob("epoch_*.ckpt"),
        key=lambda p: int(p.stem.split("_")[1]),
    )
    return candidates[-1] if candidates else None


def train(dataset: Dataset, class_id: int, cfg: TrainingConfig, out_root,
          resume: bool = False, extra_config: dict = None) -> Path:
    """Train one (dataset, class, mode, seed) run; returns the run directory.

    Writes config, losses.csv (one row per critic iteration), timing.csv
    (epoch, seconds) and epoch_<N>.ckpt at each checkpoint epoch.
    """
    cfg.validate()
    pool = filter_class(dataset, class_id)
    batch_size = cfg.batch_size or default_batch_size(pool.n)
    if batch_size > pool.n:
        batch_size = pool.n
    series, images, data_scale, stft_cfg = prepare_training_arrays(pool, cfg)

    run_dir = run_directory(out_root, dataset.name, class_id, cfg.mode, cfg.seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    losses_path = run_dir / "losses.csv"
    timing_path = run_dir / "timing.csv"

    if resume:
        ckpt_path = latest_checkpoint(run_dir)
        if ckpt_path is None:
            raise FileNotFoundError(f"no checkpoint to resume from in {run_dir}")
        payload = load_checkpoint(ckpt_path)
        if config_to_dict(cfg) != payload["config"]:
            raise ValueError("resume config does not match the checkpointed config")
        state, data_scale = restore_state(payload)
        _truncate_csv(losses_path, lambda r: int(r[0]) <= state.step)
        _truncate_csv(timing_path, lambda r: int(r[0]) <= state.epoch)
    else:
        bundle = init_bundle(cfg.seed, d_z=cfg.d_z, image_size=cfg.image_size,
                             series_length=pool.length, widths=cfg.widths)
        state = TrainerState(bundle, cfg)
        for path, header in ((losses_path, LOSS_CSV_HEADER), (timing_path, ("epoch", "seconds"))):
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow(header)

    extra = {"dataset": dataset.name, "class": class_id,
             "resolved_nfft": stft_cfg.n_fft, "resolved_hop": stft_cfg.hop,
             "resolved_batch_size": batch_size, "data_scale": data_scale}
    if extra_config:
        extra.update(extra_config)
    _write_config_file(run_dir / "config", cfg, extra)

    step_fn = train_step_unified if cfg.mode == MODE_UNIFIED else train_step_serial
    state.bundle.train()
    last_breakdown = None

    with open(losses_path, "a", newline="") as loss_fh, \
         open(timing_path, "a", newline="") as time_fh:
        loss_writer = csv.writer(loss_fh)
        time_writer = csv.writer(time_fh)
        for epoch in range(state.epoch + 1, cfg.epochs + 1):
            tic = time.perf_counter()
            image_stream = make_batches(pool, batch_size, stream_seed(cfg.seed, epoch, 0))
            series_stream = make_batches(pool, batch_size, stream_seed(cfg.seed, epoch, 1))
            for image_idx, series_idx in zip(image_stream, series_stream):
                state.step += 1
                logs = step_fn(state, images[image_idx], series[series_idx], last_breakdown)
                for lb in logs:
                    loss_writer.writerow((state.step, epoch) + lb.row())
                last_breakdown = logs[-1]
            state.epoch = epoch
            time_writer.writerow((epoch, f"{time.perf_counter() - tic:.6f}"))
            loss_fh.flush()
            time_fh.flush()
            if epoch in cfg.checkpoint_epochs:
                save_checkpoint(run_dir / f"epoch_{epoch}.ckpt", state, data_scale,
                                dataset.name, class_id)
    return run_dir
