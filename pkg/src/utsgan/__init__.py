"""Adversarial time-series generation through a spectrogram intermediary.

Two Wasserstein-GP games — a latent-to-spectrogram image generator and an
image-to-series translator, each with its own critic — trained jointly under
one averaged loss, with a serial (uncoupled) baseline, an FCN-feature
Fréchet-distance evaluation pipeline, and a CLI for the full workflow.
"""

__version__ = "0.1.0"
