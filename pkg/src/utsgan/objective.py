"""Critic terms, gradient penalties, component losses and the unified loss."""

import math
from dataclasses import dataclass

import torch

# Training-log column order (the trainer prepends step and epoch).
LOSS_COLUMNS = ("wgan_x", "gp_x", "wgan_y", "gp_y", "l_x", "l_y", "unified")


@dataclass(frozen=True)
class LossBreakdown:
    """One step's loss components; the derived fields satisfy
    l = wgan + gp and unified = (l_x + l_y)/2 exactly."""

    wgan_x: float
    gp_x: float
    wgan_y: float
    gp_y: float
    l_x: float
    l_y: float
    unified: float
    lam_x: float = 10.0
    lam_y: float = 10.0

    def __post_init__(self):
        for name in ("wgan_x", "gp_x", "wgan_y", "gp_y", "l_x", "l_y", "unified"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite loss component {name}")
        if self.gp_x < 0.0 or self.gp_y < 0.0:
            raise ValueError("gradient penalties must be non-negative")
        scale = max(1.0, abs(self.unified))
        if abs(self.unified - (self.l_x + self.l_y) / 2.0) > 1e-12 * scale:
            raise ValueError("unified must equal (l_x + l_y)/2")

    @classmethod
    def from_components(cls, wgan_x, gp_x, wgan_y, gp_y, lam_x=10.0, lam_y=10.0):
        wgan_x, gp_x, wgan_y, gp_y = (float(v) for v in (wgan_x, gp_x, wgan_y, gp_y))
        l_x = wgan_x + gp_x
        l_y = wgan_y + gp_y
        return cls(
            wgan_x=wgan_x, gp_x=gp_x, wgan_y=wgan_y, gp_y=gp_y,
            l_x=l_x, l_y=l_y, unified=(l_x + l_y) / 2.0,
            lam_x=lam_x, lam_y=lam_y,
        )

    def row(self) -> tuple:
        return tuple(getattr(self, name) for name in LOSS_COLUMNS)


def critic_term(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """Wasserstein critic term: mean real score minus mean fake score."""
    if real_scores.numel() == 0 or fake_scores.numel() == 0:
        raise ValueError("score batches must be non-empty")
    return real_scores.mean() - fake_scores.mean()


def gradient_penalty(critic, real_batch, fake_batch, lam, eps_draws) -> torch.Tensor:
    """Gulrajani penalty on per-row interpolates x_hat = eps*real + (1-eps)*fake:
    lam * mean_i (||grad_{x_hat_i} critic||_2 - 1)^2.

    The graph through the critic (and, when the fake batch carries one, through
    the generator) is retained so the result supports further differentiation.
    """
    if real_batch.shape != fake_batch.shape:
        raise ValueError(
            f"real and fake batches must share a shape, got {tuple(real_batch.shape)} vs {tuple(fake_batch.shape)}"
        )
    if lam < 0:
        raise ValueError(f"penalty weight must be >= 0, got {lam}")
    batch = real_batch.shape[0]
    eps = torch.as_tensor(eps_draws, dtype=real_batch.dtype)
    if eps.shape != (batch,):
        raise ValueError(f"need one epsilon per row, got shape {tuple(eps.shape)}")
    if eps.min() < 0.0 or eps.max() > 1.0:
        raise ValueError("epsilon draws must lie in [0, 1]")
    eps = eps.reshape(batch, *([1] * (real_batch.ndim - 1)))

    x_hat = eps * real_batch + (1.0 - eps) * fake_batch
    if not x_hat.requires_grad:
        x_hat.requires_grad_(True)
    scores = critic(x_hat)
    (grads,) = torch.autograd.grad(scores.sum(), x_hat, create_graph=True)
    norms = grads.reshape(batch, -1).norm(2, dim=1)
    return lam * ((norms - 1.0) ** 2).mean()


def loss_x(d_x, g, real_images, z_batch, lam_x, eps_draws) -> tuple:
    """Image-side loss pair (wgan_x, gp_x); the fake batch is G(z)."""
    fake_images = g(z_batch)
    wgan = critic_term(d_x(real_images), d_x(fake_images))
    gp = gradient_penalty(d_x, real_images, fake_images, lam_x, eps_draws)
    return wgan, gp


def loss_y(d_y, f, g, real_series, z_batch, lam_y, eps_draws) -> tuple:
    """Series-side loss pair (wgan_y, gp_y); the fake batch is F(G(z)),
    never F of a real image."""
    fake_series = f(g(z_batch))
    wgan = critic_term(d_y(real_series), d_y(fake_series))
    gp = gradient_penalty(d_y, real_series, fake_series, lam_y, eps_draws)
    return wgan, gp


def unified_loss(l_x, l_y):
    """The averaged objective (l_x + l_y) / 2."""
    for v in (l_x, l_y):
        value = float(v.detach()) if torch.is_tensor(v) else float(v)
        if not math.isfinite(value):
            raise ValueError(f"non-finite loss component {value}")
    return (l_x + l_y) / 2.0


def generator_objective(d_x, d_y, g, f, z_batch) -> torch.Tensor:
    """Joint generator loss -1/2 [mean D_x(G(z)) + mean D_y(F(G(z)))].

    One G(z) forward feeds both terms, so the gradient w.r.t. the image
    generator receives contributions from both critics.
    """
    fake_images = g(z_batch)
    return -0.5 * (d_x(fake_images).mean() + d_y(f(fake_images)).mean())
