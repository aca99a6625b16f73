"""Network definitions: spectrogram generator/critic, series generator/critic,
and the FCN classifier used for feature extraction."""

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


def _stages_for(image_size: int) -> int:
    """Number of 2x upsampling stages from the 4x4 projection to image_size."""
    if image_size < 8 or (image_size & (image_size - 1)) != 0:
        raise ValueError(f"image_size must be a power of two >= 8, got {image_size}")
    return int(math.log2(image_size // 4))


@dataclass(frozen=True)
class NetworkWidths:
    """Channel plan for all four networks; defaults match the desk-scale setup."""

    g_base: int = 256          # generator channels at the 4x4 projection
    f_encoder: int = 32        # first encoder width of the image-to-series net
    f_bottleneck: int = 256
    f_decoder: int = 128       # decoder channels at the shortest resolution
    d_y_widths: tuple = (64, 128, 64)
    d_y_kernels: tuple = (8, 5, 3)


class ImageGenerator(nn.Module):
    """Noise vector to RGB spectrogram image in [-1, 1] (tanh)."""

    def __init__(self, d_z: int = 100, image_size: int = 64, base_channels: int = 256):
        super().__init__()
        if d_z < 1:
            raise ValueError(f"d_z must be >= 1, got {d_z}")
        stages = _stages_for(image_size)
        self.d_z = d_z
        self.image_size = image_size
        self.project = nn.Linear(d_z, base_channels * 4 * 4)
        blocks = [nn.BatchNorm2d(base_channels), nn.ReLU(inplace=True)]
        channels = base_channels
        for _ in range(stages - 1):
            blocks += [
                nn.ConvTranspose2d(channels, channels // 2, 4, stride=2, padding=1),
                nn.BatchNorm2d(channels // 2),
                nn.ReLU(inplace=True),
            ]
            channels //= 2
        blocks += [nn.ConvTranspose2d(channels, 3, 4, stride=2, padding=1), nn.Tanh()]
        self.blocks = nn.Sequential(*blocks)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 2 or z.shape[1] != self.d_z:
            raise ValueError(f"z must be (B, {self.d_z}), got {tuple(z.shape)}")
        x = self.project(z).view(z.shape[0], -1, 4, 4)
        return self.blocks(x)


class ImageCritic(nn.Module):
    """Strided-conv critic on spectrogram images; unbounded scalar score.

    No normalization layers: the gradient penalty is computed per sample.
    """

    def __init__(self, image_size: int = 64, base_channels: int = 256):
        super().__init__()
        stages = _stages_for(image_size)
        self.image_size = image_size
        width = max(8, base_channels >> (stages - 1))
        blocks = []
        in_ch = 3
        for _ in range(stages):
            blocks += [nn.Conv2d(in_ch, width, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True)]
            in_ch = width
            width *= 2
        self.blocks = nn.Sequential(*blocks)
        self.score = nn.Linear(in_ch * 4 * 4, 1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        expected = (3, self.image_size, self.image_size)
        if images.ndim != 4 or tuple(images.shape[1:]) != expected:
            raise ValueError(f"images must be (B, {expected}), got {tuple(images.shape)}")
        h = self.blocks(images)
        return self.score(h.flatten(1)).squeeze(1)


class SignalGenerator(nn.Module):
    """Spectrogram image to 1-D series in [-1, 1]: three strided 2-D conv
    stages into a bottleneck, then a 1-D transposed-conv decoder."""

    DECODER_STAGES = 4

    def __init__(
        self,
        image_size: int = 64,
        series_length: int = 512,
        encoder_width: int = 32,
        bottleneck: int = 256,
        decoder_width: int = 128,
    ):
        super().__init__()
        if image_size % 8 != 0:
            raise ValueError(f"image_size must be divisible by 8, got {image_size}")
        if series_length < 1:
            raise ValueError("series_length must be >= 1")
        self.image_size = image_size
        self.series_length = series_length

        enc = []
        in_ch = 3
        width = encoder_width
        for _ in range(3):
            enc += [nn.Conv2d(in_ch, width, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True)]
            in_ch = width
            width *= 2
        self.encoder = nn.Sequential(*enc)
        spatial = image_size // 8
        self.to_bottleneck = nn.Linear(in_ch * spatial * spatial, bottleneck)

        self.base_len = -(-series_length // (2 ** self.DECODER_STAGES))
        self.decoder_width = decoder_width
        self.from_bottleneck = nn.Linear(bottleneck, decoder_width * self.base_len)
        dec = [nn.BatchNorm1d(decoder_width), nn.ReLU(inplace=True)]
        channels = decoder_width
        for _ in range(self.DECODER_STAGES - 1):
            dec += [
                nn.ConvTranspose1d(channels, channels // 2, 4, stride=2, padding=1),
                nn.BatchNorm1d(channels // 2),
                nn.ReLU(inplace=True),
            ]
            channels //= 2
        dec += [nn.ConvTranspose1d(channels, 1, 4, stride=2, padding=1), nn.Tanh()]
        self.decoder = nn.Sequential(*dec)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        expected = (3, self.image_size, self.image_size)
        if images.ndim != 4 or tuple(images.shape[1:]) != expected:
            raise ValueError(f"images must be (B, {expected}), got {tuple(images.shape)}")
        h = self.encoder(images).flatten(1)
        code = self.to_bottleneck(h)
        h = self.from_bottleneck(code).view(code.shape[0], self.decoder_width, self.base_len)
        series = self.decoder(h).squeeze(1)
        return series[:, : self.series_length]


class SignalCritic(nn.Module):
    """1-D fully convolutional critic with global average pooling; unbounded
    scalar score, no normalization layers."""

    def __init__(self, series_length: int, widths=(64, 128, 64), kernels=(8, 5, 3)):
        super().__init__()
        if series_length < max(kernels):
            raise ValueError(f"series_length must be >= {max(kernels)}, got {series_length}")
        self.series_length = series_length
        blocks = []
        in_ch = 1
        for width, kernel in zip(widths, kernels):
            blocks += [nn.Conv1d(in_ch, width, kernel, padding="same"), nn.LeakyReLU(0.2, inplace=True)]
            in_ch = width
        self.blocks = nn.Sequential(*blocks)
        self.score = nn.Linear(in_ch, 1)

    def forward(self, series: torch.Tensor) -> torch.Tensor:
        if series.ndim == 2:
            series = series.unsqueeze(1)
        if series.shape[2] != self.series_length:
            raise ValueError(
                f"series length {series.shape[2]} does not match construction length {self.series_length}"
            )
        h = self.blocks(series)
        pooled = h.mean(dim=2)
        return self.score(pooled).squeeze(1)


class FcnClassifier(nn.Module):
    """Fully convolutional classifier: three conv blocks with batch
    normalization, global average pooling into a 128-dim feature vector,
    then a softmax head."""

    FEATURE_DIM = 128

    def __init__(self, series_length: int, n_classes: int, widths=(128, 256, 128), kernels=(8, 5, 3)):
        super().__init__()
        if n_classes < 2:
            raise ValueError(f"need at least 2 classes, got {n_classes}")
        if widths[-1] != self.FEATURE_DIM:
            raise ValueError(f"final conv width must be {self.FEATURE_DIM}")
        self.series_length = series_length
        self.n_classes = n_classes
        blocks = []
        in_ch = 1
        for width, kernel in zip(widths, kernels):
            blocks += [
                nn.Conv1d(in_ch, width, kernel, padding="same"),
                nn.BatchNorm1d(width),
                nn.ReLU(inplace=True),
            ]
            in_ch = width
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Linear(in_ch, n_classes)

    def features(self, series: torch.Tensor) -> torch.Tensor:
        if series.ndim == 2:
            series = series.unsqueeze(1)
        if series.shape[2] != self.series_length:
            raise ValueError(
                f"series length {series.shape[2]} does not match construction length {self.series_length}"
            )
        return self.blocks(series).mean(dim=2)

    def forward(self, series: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(series))


def fcn_forward(classifier: FcnClassifier, series_batch) -> tuple:
    """Class probabilities and pooled features for a batch of series."""
    # copy so read-only inputs convert cleanly and the tensor owns its memory
    tensor = torch.as_tensor(np.array(series_batch, dtype=np.float32))
    was_training = classifier.training
    classifier.eval()
    with torch.no_grad():
        features = classifier.features(tensor)
        probs = torch.softmax(classifier.head(features), dim=1)
    classifier.train(was_training)
    return probs.numpy(), features.numpy()


def init_weights(module: nn.Module, generator: torch.Generator) -> None:
    """Deterministic init: conv/linear weights ~ N(0, 0.02), biases zero,
    normalization gains ~ N(1, 0.02)."""
    for m in module.modules():
        if isinstance(m, (nn.Conv1d, nn.Conv2d, nn.ConvTranspose1d, nn.ConvTranspose2d, nn.Linear)):
            m.weight.data.normal_(0.0, 0.02, generator=generator)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, (nn.BatchNorm1d, nn.BatchNorm2d)):
            m.weight.data.normal_(1.0, 0.02, generator=generator)
            m.bias.data.zero_()


@dataclass
class ModelBundle:
    """The two generator/critic pairs plus their shared dimensions."""

    g: ImageGenerator
    d_x: ImageCritic
    f: SignalGenerator
    d_y: SignalCritic
    d_z: int
    image_size: int
    series_length: int

    def modules(self) -> tuple:
        return (self.g, self.d_x, self.f, self.d_y)

    def train(self) -> None:
        for m in self.modules():
            m.train()

    def eval(self) -> None:
        for m in self.modules():
            m.eval()

    def generate_images(self, z: torch.Tensor) -> torch.Tensor:
        """Evaluation-mode image generation (pure given parameters)."""
        was_training = self.g.training
        self.g.eval()
        with torch.no_grad():
            images = self.g(z)
        self.g.train(was_training)
        return images

    def generate_series(self, z: torch.Tensor) -> torch.Tensor:
        """Evaluation-mode series generation through both networks."""
        g_training, f_training = self.g.training, self.f.training
        self.g.eval()
        self.f.eval()
        with torch.no_grad():
            series = self.f(self.g(z))
        self.g.train(g_training)
        self.f.train(f_training)
        return series


def init_bundle(
    seed: int,
    d_z: int = 100,
    image_size: int = 64,
    series_length: int = 512,
    widths: NetworkWidths = None,
) -> ModelBundle:
    """Build and deterministically initialize all four networks."""
    if widths is None:
        widths = NetworkWidths()
    g = ImageGenerator(d_z=d_z, image_size=image_size, base_channels=widths.g_base)
    d_x = ImageCritic(image_size=image_size, base_channels=widths.g_base)
    f = SignalGenerator(
        image_size=image_size,
        series_length=series_length,
        encoder_width=widths.f_encoder,
        bottleneck=widths.f_bottleneck,
        decoder_width=widths.f_decoder,
    )
    d_y = SignalCritic(series_length, widths=widths.d_y_widths, kernels=widths.d_y_kernels)
    generator = torch.Generator().manual_seed(seed)
    for module in (g, d_x, f, d_y):
        init_weights(module, generator)
    return ModelBundle(
        g=g, d_x=d_x, f=f, d_y=d_y,
        d_z=d_z, image_size=image_size, series_length=series_length,
    )


def has_normalization(module: nn.Module) -> bool:
    """True if the module contains any normalization layer."""
    norm_types = (
        nn.BatchNorm1d, nn.BatchNorm2d, nn.BatchNorm3d,
        nn.LayerNorm, nn.GroupNorm, nn.InstanceNorm1d, nn.InstanceNorm2d,
    )
    return any(isinstance(m, norm_types) for m in module.modules())
