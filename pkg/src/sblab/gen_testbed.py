"""Isolated generator experiment: reconstruct N fixed images from N
frozen latent codes under pixel-space L2, optionally plus the
log-reduced-spectrum loss."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses, spectral
from .errors import ConfigurationError, DivergenceError
from .generator import GeneratorNet, LATENT_DIM
from .optim import Adam
from .spectral import SpectrumEvolutionLog
from .toyset import ImageSet, ToysetConfig, build_image_set


@dataclass
class DataSpec:
    """Where training images come from: the synthetic toyset or a PNG folder."""

    source: str = "toyset"  # "toyset" or a folder path
    resolution: int = 64
    n_images: int = 10
    sigma: float | None = None  # toyset radial std (None = f_nyq/sqrt(2))
    seed: int = 0

    def load(self) -> ImageSet:
        if self.source == "toyset":
            cfg = ToysetConfig(resolution=self.resolution, n_images=self.n_images,
                               sigma=self.sigma, seed=self.seed)
            return build_image_set(cfg)
        return build_image_set(self.source, n=self.n_images, resolution=self.resolution)


@dataclass
class GenTestbedConfig:
    data: DataSpec = field(default_factory=DataSpec)
    upsample_mode: str = "bilinear"
    spectral_loss: bool = False
    steps: int = 20000
    log_every: int = 200
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.99
    latent_dim: int = LATENT_DIM
    seed: int = 0
    grayscale: str = "mean"

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class GenRunReport:
    config: dict
    psnr_per_image: list[float]
    psnr_mean: float
    evolution: SpectrumEvolutionLog
    pred_mean: np.ndarray
    pred_std: np.ndarray
    gt_mean: np.ndarray
    gt_std: np.ndarray
    loss_pixel: np.ndarray
    loss_spectral: np.ndarray
    mu1_values: list[float]
    mu2_values: list[float]
    reconstructions: np.ndarray
    elapsed_seconds: float

    def final_relative_error(self) -> np.ndarray:
        return spectral.relative_spectrum_error(self.pred_mean, self.gt_mean)


def train_generator(config: GenTestbedConfig, data: ImageSet | None = None) -> GenRunReport:
    """Optimize the generator to reconstruct paired images; log spectra."""
    t0 = time.time()
    if data is None:
        data = config.data.load()
    rgb = data.rgb()
    n = rgb.shape[0]
    res = rgb.shape[1]
    if res != config.data.resolution:
        raise ConfigurationError(f"data resolution {res} != configured {config.data.resolution}")

    seq = np.random.SeedSequence(config.seed)
    rng_init, rng_latent = (np.random.default_rng(s) for s in seq.spawn(2))
    gen = GeneratorNet(rng_init, resolution=res, upsample_mode=config.upsample_mode,
                       latent_dim=config.latent_dim)
    z = ad.constant(rng_latent.standard_normal((n, config.latent_dim)))
    targets = ad.constant(rgb)

    gt_bins = spectral.image_reduced_spectrum(rgb, config.grayscale)
    gt_mean, gt_std = gt_bins.mean(axis=0), gt_bins.std(axis=0)

    opt = Adam(gen.parameters(), lr=config.lr, betas=(config.beta1, config.beta2))
    evolution = SpectrumEvolutionLog()
    loss_pixel = np.zeros(config.steps)
    loss_spectral = np.zeros(config.steps)

    def log_spectra(iteration: int, pred_np: np.ndarray) -> None:
        pred_bins = spectral.image_reduced_spectrum(np.clip(pred_np, -1, 1), config.grayscale)
        evolution.append(iteration, pred_bins.mean(axis=0), gt_mean)

    pred_np = None
    for step in range(config.steps):
        pred = gen(z)
        loss = losses.pixel_l2_loss(pred, targets)
        loss_pixel[step] = loss.item()
        if config.spectral_loss:
            gray = spectral.to_grayscale(pred, config.grayscale)
            l_s = spectral.spectral_loss(gray, gt_bins)
            loss_spectral[step] = l_s.item()
            loss = ad.add(loss, l_s)
        if not np.isfinite(loss.item()):
            raise DivergenceError(f"non-finite loss at step {step}")
        if step % config.log_every == 0:
            log_spectra(step, pred.data)
        ad.backward(loss)
        opt.step()
        pred_np = pred.data

    with ad.no_grad():
        final = gen(z).data
    log_spectra(config.steps, final)

    clipped = np.clip(final, -1, 1)
    psnrs = losses.psnr_batch(clipped, rgb)
    pred_bins = spectral.image_reduced_spectrum(clipped, config.grayscale)
    mu1 = [s.mu1 for s in data.samples]
    mu2 = [s.mu2 for s in data.samples]
    return GenRunReport(
        config=config.as_dict(),
        psnr_per_image=[float(v) for v in psnrs],
        psnr_mean=float(psnrs.mean()),
        evolution=evolution,
        pred_mean=pred_bins.mean(axis=0),
        pred_std=pred_bins.std(axis=0),
        gt_mean=gt_mean,
        gt_std=gt_std,
        loss_pixel=loss_pixel,
        loss_spectral=loss_spectral,
        mu1_values=mu1,
        mu2_values=mu2,
        reconstructions=clipped,
        elapsed_seconds=time.time() - t0,
    )


def peak_bin_window(mu_range: tuple[float, float], n_bins: int) -> tuple[int, int]:
    """Inclusive bin window covering a relative-frequency interval."""
    lo = int(np.floor(mu_range[0] * n_bins))
    hi = min(int(np.ceil(mu_range[1] * n_bins)), n_bins - 1)
    return lo, hi
