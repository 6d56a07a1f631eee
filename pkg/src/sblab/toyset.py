"""Synthetic two-peak spectral images and image-set I/O.

Each toy image is designed in the frequency domain: a radial magnitude
field with two Gaussian bumps, uniform random phase on one half-plane,
conjugate symmetry on the other, then an inverse transform.  The result
is real by construction and peak-normalized to [-1, 1].
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError, DataError
from .spectral import nyquist_frequency

RAW_MAGIC = b"SBLABIMG"


@dataclass
class ToysetConfig:
    resolution: int = 64
    n_images: int = 10
    mu1_range: tuple[float, float] = (0.05, 0.15)  # fractions of f_nyq
    mu2_range: tuple[float, float] = (0.75, 0.85)
    sigma: float | None = None  # radial std in frequency units; None = f_nyq/sqrt(2)
    seed: int = 0

    def __post_init__(self):
        r = self.resolution
        if r < 8 or (r & (r - 1)) != 0:
            raise ConfigurationError(f"resolution must be a power of two >= 8, got {r}")
        for lo, hi in (self.mu1_range, self.mu2_range):
            if not (0.0 < lo <= hi < 1.0):
                raise ConfigurationError(f"mu range ({lo}, {hi}) must lie inside (0, 1)")
        if self.sigma is not None and self.sigma <= 0:
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")

    @property
    def f_nyq(self) -> float:
        return nyquist_frequency(self.resolution)

    @property
    def sigma_value(self) -> float:
        return self.sigma if self.sigma is not None else self.f_nyq / math.sqrt(2.0)

    @classmethod
    def with_relative_sigma(cls, resolution: int, sigma_rel: float, **kw) -> "ToysetConfig":
        sigma = sigma_rel * nyquist_frequency(resolution)
        return cls(resolution=resolution, sigma=sigma, **kw)


def _centered_radius(h: int) -> np.ndarray:
    k = np.arange(h)
    kc = np.where(k < h / 2, k, k - h).astype(np.float64)
    return np.sqrt(kc[:, None] ** 2 + kc[None, :] ** 2)


def magnitude_field(config: ToysetConfig, mu1: float, mu2: float) -> np.ndarray:
    """Two-bump radial magnitude target on the unshifted frequency grid."""
    rho = _centered_radius(config.resolution)
    s2 = 2.0 * config.sigma_value ** 2
    return np.exp(-((rho - mu1) ** 2) / s2) + np.exp(-((rho - mu2) ** 2) / s2)


def synthesize_from_magnitude(mag: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Random-phase image with the given spectral magnitude.

    Conjugate symmetry is enforced explicitly (self-conjugate coefficients
    get zero phase), so the designed magnitude survives exactly.  Returns
    the peak-normalized image and the residual imaginary magnitude
    relative to the real peak.
    """
    h, w = mag.shape
    kk, ll = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    pk, pl = (-kk) % h, (-ll) % w
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(h, w))
    phase[(pk == kk) & (pl == ll)] = 0.0
    coeff = mag * np.exp(1j * phase)
    canonical = (kk < pk) | ((kk == pk) & (ll <= pl))
    coeff = np.where(canonical, coeff, np.conj(coeff[pk, pl]))
    img = np.fft.ifft2(coeff)
    peak = np.abs(img.real).max()
    residual_imag = float(np.abs(img.imag).max() / max(peak, 1e-30))
    if peak == 0.0:
        return np.zeros((h, w), dtype=np.float32), 0.0
    return (img.real / peak).astype(np.float32), residual_imag


@dataclass
class ToySample:
    image: np.ndarray  # [H, W] in [-1, 1]
    mu1: float
    mu2: float
    residual_imag: float


def synthesize_toy_sample(config: ToysetConfig, rng: np.random.Generator) -> ToySample:
    f = config.f_nyq
    mu1 = rng.uniform(config.mu1_range[0] * f, config.mu1_range[1] * f)
    mu2 = rng.uniform(config.mu2_range[0] * f, config.mu2_range[1] * f)
    mag = magnitude_field(config, mu1, mu2)
    img, residual = synthesize_from_magnitude(mag, rng)
    return ToySample(image=img, mu1=mu1, mu2=mu2, residual_imag=residual)


def generate_toy_image(config: ToysetConfig, rng: np.random.Generator) -> np.ndarray:
    return synthesize_toy_sample(config, rng).image


def toy_rngs(config: ToysetConfig) -> list[np.random.Generator]:
    """Independent per-image streams split from the config seed."""
    seqs = np.random.SeedSequence(config.seed).spawn(config.n_images)
    return [np.random.default_rng(s) for s in seqs]


# ---------------------------------------------------------------------------
# image sets


@dataclass
class ImageSet:
    images: np.ndarray  # [N, H, W, C] float32 in [-1, 1]
    labels: np.ndarray
    source: str
    samples: list[ToySample] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def resolution(self) -> int:
        return self.images.shape[1]

    def rgb(self) -> np.ndarray:
        """Images with single channels replicated to three."""
        if self.images.shape[-1] == 3:
            return self.images
        return np.repeat(self.images, 3, axis=-1)


def build_image_set(source: ToysetConfig | str | Path, n: int | None = None,
                    resolution: int | None = None) -> ImageSet:
    """Deterministically ordered image set from a toyset config or PNG folder."""
    if isinstance(source, ToysetConfig):
        cfg = source
        count = n if n is not None else cfg.n_images
        if count != cfg.n_images:
            cfg = ToysetConfig(resolution=cfg.resolution, n_images=count,
                               mu1_range=cfg.mu1_range, mu2_range=cfg.mu2_range,
                               sigma=cfg.sigma, seed=cfg.seed)
        samples = [synthesize_toy_sample(cfg, rng) for rng in toy_rngs(cfg)]
        images = np.stack([s.image for s in samples])[..., None]
        images = np.clip(images, -1.0, 1.0)
        return ImageSet(images=images.astype(np.float32),
                        labels=np.arange(cfg.n_images), source="toyset", samples=samples)
    return _load_folder(Path(source), n, resolution)


def _load_folder(folder: Path, n: int | None, resolution: int | None) -> ImageSet:
    if not folder.is_dir():
        raise DataError(f"{folder}: not a directory")
    paths = sorted(p for p in folder.iterdir() if p.suffix.lower() == ".png")
    if n is None:
        n = len(paths)
    if len(paths) < n:
        raise DataError(f"{folder}: found {len(paths)} PNG images, need {n}")
    images = []
    for p in paths[:n]:
        try:
            with Image.open(p) as im:
                arr = np.asarray(im)
        except Exception as exc:
            raise DataError(f"{p}: cannot decode PNG ({exc})") from exc
        if arr.ndim == 2:
            arr = arr[..., None]
        if arr.shape[-1] == 4:
            arr = arr[..., :3]
        if resolution is not None and arr.shape[:2] != (resolution, resolution):
            raise DataError(
                f"{p}: resolution {arr.shape[1]}x{arr.shape[0]} does not match "
                f"required {resolution}x{resolution} (no silent resampling)")
        images.append(arr)
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise DataError(f"{folder}: mixed image shapes {sorted(shapes)}")
    stack = np.stack(images).astype(np.float32) / 127.5 - 1.0
    stack = np.clip(stack, -1.0, 1.0)
    return ImageSet(images=stack, labels=np.arange(n), source="folder")


# ---------------------------------------------------------------------------
# on-disk formats


def to_uint8(images: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.clip(images, -1.0, 1.0) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def save_png(path, image: np.ndarray) -> None:
    """8-bit PNG of one [H, W, C] image in [-1, 1]."""
    arr = to_uint8(image)
    if arr.shape[-1] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path)


def save_raw(path, image: np.ndarray) -> None:
    """Lossless float32 dump: magic, u32 C/H/W, then H*W*C little-endian floats."""
    arr = np.ascontiguousarray(image, dtype="<f4")
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<III", c, h, w))
        fh.write(arr.tobytes())


def load_raw(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:8] != RAW_MAGIC:
        raise DataError(f"{path}: not a raw image file (bad magic)")
    c, h, w = struct.unpack_from("<III", blob, 8)
    arr = np.frombuffer(blob, dtype="<f4", count=h * w * c, offset=20)
    return arr.reshape(h, w, c).copy()


def save_image_set(out_dir, imgset: ImageSet, raw: bool = True) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i in range(imgset.n):
        png = out_dir / f"img_{i:04d}.png"
        save_png(png, imgset.images[i])
        written.append(png)
        if raw:
            rawp = out_dir / f"img_{i:04d}.raw"
            save_raw(rawp, imgset.images[i])
            written.append(rawp)
    return written
