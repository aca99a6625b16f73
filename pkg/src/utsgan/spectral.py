"""Spectrogram pipeline: STFT power in dB, colormap rendering, image resizing."""

import importlib.resources
from dataclasses import dataclass, field

import numpy as np

DB_FLOOR = -80.0
POWER_EPS = 1e-10


def hann_window(n_fft: int) -> np.ndarray:
    """Periodic Hann window; entries in [0, 1] with an exact 1 at n_fft/2."""
    n = np.arange(n_fft, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / n_fft))


def default_n_fft(length: int) -> int:
    """Window rule: the largest power of two at most length/4, floored at 8."""
    if length < 8:
        raise ValueError(f"series length must be >= 8, got {length}")
    return max(8, 1 << (max(1, length // 4).bit_length() - 1))


@dataclass(frozen=True)
class StftConfig:
    n_fft: int
    hop: int
    window: np.ndarray = field(default=None, repr=False)
    db_floor: float = DB_FLOOR
    eps: float = POWER_EPS

    def __post_init__(self):
        if self.n_fft < 8 or (self.n_fft & (self.n_fft - 1)) != 0:
            raise ValueError(f"n_fft must be a power of two >= 8, got {self.n_fft}")
        if not 1 <= self.hop <= self.n_fft:
            raise ValueError(f"hop must be in [1, n_fft], got {self.hop}")
        window = self.window
        if window is None:
            window = hann_window(self.n_fft)
        window = np.asarray(window, dtype=np.float64)
        if window.shape != (self.n_fft,):
            raise ValueError(f"window must have length n_fft={self.n_fft}")
        if window.min() < 0.0 or window.max() > 1.0 or not np.isclose(window.max(), 1.0):
            raise ValueError("window entries must lie in [0, 1] with max 1")
        window = window.copy()
        window.flags.writeable = False
        object.__setattr__(self, "window", window)

    @classmethod
    def for_length(cls, length: int, n_fft: int = None, hop: int = None) -> "StftConfig":
        """Config for a series length; n_fft and hop default to the window rule."""
        if n_fft is None:
            n_fft = default_n_fft(length)
        if hop is None:
            hop = max(1, n_fft // 4)
        if length < n_fft:
            raise ValueError(
                f"series length {length} is shorter than n_fft={n_fft}; pass a smaller n_fft"
            )
        return cls(n_fft=n_fft, hop=hop)

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def n_frames(self, length: int) -> int:
        return -(-length // self.hop)  # ceil(length / hop)


@dataclass(frozen=True)
class PowerSpectrogram:
    """Peak-normalized power in dB: entries in [db_floor, 0], max exactly 0."""

    db: np.ndarray          # (F, T) float64
    db_floor: float = DB_FLOOR

    def __post_init__(self):
        db = np.asarray(self.db, dtype=np.float64)
        if db.ndim != 2:
            raise ValueError("db must be 2-D (F, T)")
        if not np.isfinite(db).all():
            raise ValueError("non-finite dB entries")
        if db.max() > 0.0 or db.min() < self.db_floor:
            raise ValueError("dB entries must lie in [db_floor, 0]")
        db = db.copy()
        db.flags.writeable = False
        object.__setattr__(self, "db", db)


def stft_power(series: np.ndarray, cfg: StftConfig) -> PowerSpectrogram:
    """Windowed DFT magnitudes on a centered hop grid, in peak-normalized dB.

    Frames are centered at t*hop for t = 0..ceil(L/hop)-1 with reflect padding,
    so T = ceil(L/hop).  Rows run from frequency bin 0 (DC) to n_fft/2.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1:
        raise ValueError("series must be 1-D")
    length = series.shape[0]
    if length < cfg.n_fft:
        raise ValueError(
            f"series length {length} is shorter than n_fft={cfg.n_fft}; pass a smaller n_fft"
        )
    if not np.isfinite(series).all():
        raise ValueError("non-finite values in series")

    half = cfg.n_fft // 2
    padded = np.pad(series, half, mode="reflect")
    n_frames = cfg.n_frames(length)
    frames = np.stack(
        [padded[t * cfg.hop : t * cfg.hop + cfg.n_fft] for t in range(n_frames)]
    )
    spectrum = np.fft.rfft(frames * cfg.window[None, :], axis=1)
    power = np.abs(spectrum.T) ** 2
    db = 10.0 * np.log10(power + cfg.eps)
    peak = db.max()
    if peak > 10.0 * np.log10(cfg.eps):
        db -= peak  # peak-normalize; a silent signal stays at the eps floor
    np.clip(db, cfg.db_floor, 0.0, out=db)
    return PowerSpectrogram(db=db, db_floor=cfg.db_floor)


def default_colormap() -> np.ndarray:
    """The committed 256-entry RGB lookup table, rows indexed 0..255."""
    ref = importlib.resources.files("utsgan") / "assets" / "colormap_256.csv"
    with ref.open("r") as fh:
        table = np.loadtxt(fh, delimiter=",", comments="#", dtype=np.float64)
    if table.shape != (256, 3):
        raise ValueError(f"colormap table must be (256, 3), got {table.shape}")
    return table


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centers and edge clamping."""
    in_h, in_w = img.shape[:2]
    rows = (np.arange(out_h, dtype=np.float64) + 0.5) * in_h / out_h - 0.5
    cols = (np.arange(out_w, dtype=np.float64) + 0.5) * in_w / out_w - 0.5
    r_floor = np.floor(rows)
    c_floor = np.floor(cols)
    r_frac = (rows - r_floor)[:, None, None]
    c_frac = (cols - c_floor)[None, :, None]
    r0 = np.clip(r_floor.astype(np.int64), 0, in_h - 1)
    r1 = np.clip(r_floor.astype(np.int64) + 1, 0, in_h - 1)
    c0 = np.clip(c_floor.astype(np.int64), 0, in_w - 1)
    c1 = np.clip(c_floor.astype(np.int64) + 1, 0, in_w - 1)
    top = img[r0][:, c0] * (1.0 - c_frac) + img[r0][:, c1] * c_frac
    bottom = img[r1][:, c0] * (1.0 - c_frac) + img[r1][:, c1] * c_frac
    return top * (1.0 - r_frac) + bottom * r_frac


@dataclass(frozen=True)
class SpectrogramImage:
    """RGB image with float pixels in [0, 1], low frequencies at the bottom row."""

    pixels: np.ndarray      # (H, W, 3) float64 in [0, 1]

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ValueError("pixels must be (H, W, 3)")
        if not np.isfinite(pixels).all():
            raise ValueError("non-finite pixel values")
        if pixels.min() < 0.0 or pixels.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        pixels = pixels.copy()
        pixels.flags.writeable = False
        object.__setattr__(self, "pixels", pixels)

    def to_bytes(self) -> np.ndarray:
        """Quantize to uint8 via round(p * 255) for file export."""
        return np.rint(self.pixels * 255.0).astype(np.uint8)


def render(ps: PowerSpectrogram, colormap: np.ndarray, out_h: int, out_w: int) -> SpectrogramImage:
    """Map dB linearly onto the 256-entry colormap and resample to (out_h, out_w).

    The frequency axis is flipped so the lowest bin lands on the bottom row.
    """
    colormap = np.asarray(colormap, dtype=np.float64)
    if colormap.shape != (256, 3):
        raise ValueError("colormap must be a (256, 3) table")
    if colormap.min() < 0.0 or colormap.max() > 1.0:
        raise ValueError("colormap entries must lie in [0, 1]")
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be positive")
    scale = 255.0 / (0.0 - ps.db_floor)
    idx = np.rint((ps.db - ps.db_floor) * scale).astype(np.int64)
    np.clip(idx, 0, 255, out=idx)
    rgb = colormap[idx]                      # (F, T, 3), row 0 = DC
    rgb = rgb[::-1, :, :]                    # low frequency at the bottom
    pixels = _resize_bilinear(rgb, out_h, out_w)
    return SpectrogramImage(pixels=np.clip(pixels, 0.0, 1.0))


def series_to_image(
    series: np.ndarray,
    cfg: StftConfig = None,
    colormap: np.ndarray = None,
    out_h: int = 64,
    out_w: int = 64,
) -> SpectrogramImage:
    """Full pipeline from a 1-D series to a fixed-size RGB spectrogram image."""
    series = np.asarray(series, dtype=np.float64)
    if cfg is None:
        cfg = StftConfig.for_length(series.shape[0])
    if colormap is None:
        colormap = default_colormap()
    return render(stft_power(series, cfg), colormap, out_h, out_w)


def unit_to_gan(pixels: np.ndarray) -> np.ndarray:
    """Map [0, 1] image pixels to the [-1, 1] range the networks use."""
    return pixels * 2.0 - 1.0


def gan_to_unit(values: np.ndarray) -> np.ndarray:
    """Map network outputs in [-1, 1] back to [0, 1] pixels."""
    return np.clip((values + 1.0) / 2.0, 0.0, 1.0)
