"""Differentiable 2-D Fourier analysis and reduced-spectrum machinery.

The DFT is evaluated with precomputed cosine/sine matrices so that it is
an exact linear map in both directions; a numpy FFT fast path exists for
analysis-only work.  Spectra carry the 1/(HW) normalization, so Parseval
reads ``mean(I^2) / (HW) * HW == sum(S)`` i.e. ``(1/(HW)) * sum(I^2) == sum(S)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import TensorNode
from .errors import ConfigurationError

LOG_FLOOR = 1e-12

_trig_cache: dict = {}
_bin_cache: dict = {}


def _require_square_pow2(h: int, w: int) -> None:
    if h != w:
        raise ConfigurationError(f"expected a square image, got {h}x{w}")
    if h < 8 or (h & (h - 1)) != 0:
        raise ConfigurationError(f"side must be a power of two >= 8, got {h}")


def _trig(h: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    key = (h, np.dtype(dtype).str)
    if key not in _trig_cache:
        k = np.arange(h, dtype=np.float64)
        ang = 2.0 * np.pi * np.outer(k, k) / h
        _trig_cache[key] = (np.cos(ang).astype(dtype), np.sin(ang).astype(dtype))
    return _trig_cache[key]


def n_bins(h: int) -> int:
    return int(math.floor(h / math.sqrt(2.0)))


def nyquist_frequency(h: int) -> float:
    return h / math.sqrt(2.0)


def bin_centers(b: int) -> np.ndarray:
    return (np.arange(b) + 0.5) / b


def radial_bin_index(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-coefficient bin assignment on the centered frequency grid.

    Returns (flat bin index array of length H*W, per-bin counts).  Radii
    are normalized so the image-diagonal Nyquist frequency sits at 1;
    corner coefficients are clamped into the last bin.
    """
    b = n_bins(h)
    k = np.arange(h)
    l = np.arange(w)
    kc = np.where(k < h / 2, k, k - h).astype(np.float64)
    lc = np.where(l < w / 2, l, l - w).astype(np.float64)
    rho = np.sqrt(kc[:, None] ** 2 + lc[None, :] ** 2)
    r = rho / np.sqrt(0.25 * (h * h + w * w))
    idx = np.minimum((r * b).astype(np.int64), b - 1).reshape(-1)
    counts = np.bincount(idx, minlength=b)
    return idx, counts


def _bin_matrix(h: int, w: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    key = (h, w, np.dtype(dtype).str)
    if key not in _bin_cache:
        idx, counts = radial_bin_index(h, w)
        b = n_bins(h)
        m = np.zeros((h * w, b), dtype=np.float64)
        m[np.arange(h * w), idx] = 1.0 / counts[idx]
        _bin_cache[key] = (m.astype(dtype), counts)
    return _bin_cache[key]


# ---------------------------------------------------------------------------
# spectra


@dataclass
class Spectrum2D:
    """Unshifted DFT coefficients of a real image, 1/(HW)-normalized."""

    real: TensorNode
    imag: TensorNode

    @property
    def height(self) -> int:
        return self.real.shape[-2]

    @property
    def width(self) -> int:
        return self.real.shape[-1]


@dataclass
class ReducedSpectrum:
    """Azimuthally averaged power per normalized-radius bin."""

    bins: TensorNode
    counts: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.bins.shape[-1]

    def values(self) -> np.ndarray:
        return np.asarray(self.bins.data, dtype=np.float64)


def dft2(image: TensorNode) -> Spectrum2D:
    """Differentiable 2-D DFT of ``[H, W]`` or ``[N, H, W]`` images."""
    h, w = image.shape[-2], image.shape[-1]
    _require_square_pow2(h, w)
    cos_m, sin_m = _trig(h, image.data.dtype)
    ca = ad.constant(cos_m)
    sa = ad.constant(sin_m)
    cx = ad.matmul(ca, image)
    sx = ad.matmul(sa, image)
    scale = 1.0 / (h * w)
    real = ad.mul(ad.sub(ad.matmul(cx, ca), ad.matmul(sx, sa)), scale)
    imag = ad.mul(ad.neg(ad.add(ad.matmul(cx, sa), ad.matmul(sx, ca))), scale)
    return Spectrum2D(real=real, imag=imag)


def dft2_np(images: np.ndarray) -> np.ndarray:
    """FFT fast path for analysis-only work (complex, same normalization)."""
    h, w = images.shape[-2], images.shape[-1]
    return np.fft.fft2(images) / (h * w)


def power_spectrum(spec: Spectrum2D) -> TensorNode:
    return ad.add(ad.mul(spec.real, spec.real), ad.mul(spec.imag, spec.imag))


def power_spectrum_np(images: np.ndarray) -> np.ndarray:
    f = dft2_np(images)
    return (f.real * f.real + f.imag * f.imag).astype(np.float64)


def reduce_spectrum(spec_power: TensorNode) -> ReducedSpectrum:
    """Azimuthal mean of a ``[H, W]`` power field over radius bins."""
    h, w = spec_power.shape[-2], spec_power.shape[-1]
    if h != w:
        raise ConfigurationError(f"reduce_spectrum expects a square field, got {h}x{w}")
    m, counts = _bin_matrix(h, w, spec_power.data.dtype)
    flat = ad.reshape(spec_power, spec_power.shape[:-2] + (h * w,))
    bins = ad.matmul(flat, ad.constant(m))
    return ReducedSpectrum(bins=bins, counts=counts)


def reduce_spectrum_np(power: np.ndarray) -> np.ndarray:
    """Numpy-only reduced spectrum of ``[..., H, W]`` power fields."""
    h, w = power.shape[-2], power.shape[-1]
    m, _ = _bin_matrix(h, w, np.float64)
    return power.reshape(power.shape[:-2] + (h * w,)) @ m


def image_reduced_spectrum(images: np.ndarray, grayscale: str = "mean") -> np.ndarray:
    """Reduced spectra of ``[N, H, W, C]`` (or grayscale) image arrays."""
    gray = to_grayscale_np(images, grayscale)
    return reduce_spectrum_np(power_spectrum_np(gray))


GRAYSCALE_MODES = ("mean", "luma601")
_LUMA601 = np.array([0.299, 0.587, 0.114])


def to_grayscale_np(images: np.ndarray, mode: str = "mean") -> np.ndarray:
    if images.ndim == 3:
        return np.asarray(images, dtype=np.float64)
    if images.shape[-1] == 1:
        return np.asarray(images[..., 0], dtype=np.float64)
    if mode == "mean":
        return images.mean(axis=-1, dtype=np.float64)
    if mode == "luma601":
        return np.asarray(images, dtype=np.float64) @ _LUMA601
    raise ConfigurationError(f"unknown grayscale mode {mode!r}")


def to_grayscale(images: TensorNode, mode: str = "mean") -> TensorNode:
    """Differentiable grayscale reduction of ``[N, H, W, C]`` nodes."""
    n, h, w, c = images.shape
    if c == 1:
        return ad.reshape(images, (n, h, w))
    if mode == "mean":
        weights = np.full((c, 1), 1.0 / c)
    elif mode == "luma601":
        if c != 3:
            raise ConfigurationError("luma601 grayscale needs 3 channels")
        weights = _LUMA601.reshape(3, 1)
    else:
        raise ConfigurationError(f"unknown grayscale mode {mode!r}")
    out = ad.matmul(ad.reshape(images, (n * h * w, c)), ad.constant(weights))
    return ad.reshape(out, (n, h, w))


# ---------------------------------------------------------------------------
# losses and error metrics


def log_reduced_spectrum(pred: TensorNode, grayscale: str = "mean") -> TensorNode:
    """log(reduced power spectrum + floor) of image nodes [N,H,W,C] -> [N,B]."""
    gray = to_grayscale(pred, grayscale)
    power = power_spectrum(dft2(gray))
    bins = reduce_spectrum(power).bins
    return ad.log(ad.add(bins, LOG_FLOOR))


def spectral_loss(pred: TensorNode, target_reduced: ReducedSpectrum | np.ndarray) -> TensorNode:
    """Mean squared log-ratio of reduced spectra, differentiable in ``pred``.

    ``pred`` may be a single ``[H, W]`` image or a batch ``[N, H, W]``;
    the target holds per-image reduced spectra of matching leading shape.
    """
    power = power_spectrum(dft2(pred))
    bins = reduce_spectrum(power).bins
    target = target_reduced.values() if isinstance(target_reduced, ReducedSpectrum) else target_reduced
    log_t = np.log(np.asarray(target, dtype=np.float64) + LOG_FLOOR)
    diff = ad.sub(ad.log(ad.add(bins, LOG_FLOOR)), ad.constant(log_t))
    return ad.mean_all(ad.mul(diff, diff))


def relative_spectrum_error(pred_mean: np.ndarray, gt_mean: np.ndarray) -> np.ndarray:
    """Signed per-bin relative error; zero-truth bins become +inf sentinels."""
    pred = np.asarray(pred_mean, dtype=np.float64)
    gt = np.asarray(gt_mean, dtype=np.float64)
    out = np.full_like(gt, np.inf)
    ok = gt > 0
    out[ok] = (pred[ok] - gt[ok]) / gt[ok]
    return out


# ---------------------------------------------------------------------------
# evolution logging


@dataclass
class SpectrumEvolutionLog:
    """Signed relative spectrum errors across training checkpoints."""

    checkpoints: list[int] = field(default_factory=list)
    errors: np.ndarray | None = None
    clip_applied: bool = False

    def append(self, iteration: int, pred_mean: np.ndarray, gt_mean: np.ndarray) -> None:
        row = relative_spectrum_error(pred_mean, gt_mean)[None, :]
        self.errors = row if self.errors is None else np.vstack([self.errors, row])
        self.checkpoints.append(int(iteration))

    @property
    def n_checkpoints(self) -> int:
        return len(self.checkpoints)

    def to_csv(self, path) -> None:
        write_spectrum_csv(path, self.checkpoints, self.errors)

    @classmethod
    def from_csv(cls, path) -> "SpectrumEvolutionLog":
        iters, mat = read_spectrum_csv(path)
        log = cls(checkpoints=list(iters), errors=mat)
        return log


def write_spectrum_csv(path, iterations, matrix, sidecar: dict | None = None) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration"] + [f"bin_{i}" for i in range(matrix.shape[1])])
        for it, row in zip(iterations, matrix):
            wr.writerow([int(it)] + [repr(float(v)) for v in row])
    if sidecar is not None:
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def read_spectrum_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    iters = np.array([int(r[0]) for r in rows[1:]], dtype=np.int64)
    mat = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    return iters, mat


def spectrum_sidecar(h: int, w: int, grayscale: str) -> dict:
    return {"height": h, "width": w, "bins": n_bins(h), "grayscale": grayscale}


# ---------------------------------------------------------------------------
# identities used as test probes


def parseval_gap(image: np.ndarray) -> float:
    """Relative gap of the 1/(HW)-normalized Parseval identity."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[-2], image.shape[-1]
    lhs = np.sum(image * image, axis=(-2, -1)) / (h * w)
    rhs = np.sum(power_spectrum_np(image), axis=(-2, -1))
    denom = np.maximum(np.abs(lhs), 1e-12)
    return float(np.max(np.abs(lhs - rhs) / denom))


def hermitian_gap(spec: Spectrum2D) -> float:
    """Max deviation from conjugate symmetry (zero for real inputs)."""
    f = np.asarray(spec.real.data, dtype=np.float64) + 1j * np.asarray(spec.imag.data, np.float64)
    mirrored = np.conj(f[..., ::-1, ::-1])
    mirrored = np.roll(np.roll(mirrored, 1, axis=-2), 1, axis=-1)
    return float(np.abs(f - mirrored).max())
