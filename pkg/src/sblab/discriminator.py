"""Reduced-channel discriminator with swappable downsampling and
frequency-domain input variants.

Spatial topology: 1x1 conv from the input, conv-conv-pool blocks down to
4x4, a minibatch-stddev channel, a 3x3 conv, a valid 4x4 conv to 1x1 and
a linear head emitting one logit per class.  ``stride`` mode puts the
factor-2 stride on each block's second conv instead of a pooling layer;
``mlp`` mode replaces the whole stack with a parameter-matched MLP on the
flattened image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn, spectral
from .autodiff import TensorNode
from .errors import ConfigurationError

LEAKY_SLOPE = 0.2
MLP_HIDDEN_LAYERS = 4


def _n_downs(resolution: int) -> int:
    n = int(math.log2(resolution)) - 2
    if resolution < 16 or (resolution & (resolution - 1)) != 0:
        raise ConfigurationError(f"resolution must be a power of two >= 16, got {resolution}")
    return n


def _block_plans(n_downs: int) -> list[tuple[int, int, int]]:
    plans = [(16, 32, 32), (32, 64, 64)]
    plans += [(64, 64, 64)] * (n_downs - 2)
    return plans


class DiscriminatorNet(nn.Module):
    def __init__(self, rng: np.random.Generator, resolution: int = 64, n_classes: int = 10,
                 downsample_mode: str = "avgpool", in_channels: int = 3):
        super().__init__()
        if downsample_mode not in nn.DOWNSAMPLE_MODES:
            raise ConfigurationError(f"unknown downsample mode {downsample_mode!r}")
        self.resolution = resolution
        self.n_classes = n_classes
        self.downsample_mode = downsample_mode
        self.in_channels = in_channels
        if downsample_mode == "mlp":
            self._build_mlp(rng)
            return
        stride = 2 if downsample_mode == "stride" else 1
        self.from_rgb = nn.Conv2d(rng, in_channels, 16, k=1, padding=0)
        self.register("from_rgb", self.from_rgb)
        self.blocks = []
        for i, (c_in, c_mid, c_out) in enumerate(_block_plans(_n_downs(resolution))):
            conv_a = nn.Conv2d(rng, c_in, c_mid, k=3, padding=1)
            conv_b = nn.Conv2d(rng, c_mid, c_out, k=3, padding=1, stride=stride)
            self.blocks.append((conv_a, conv_b))
            self.register(f"block{i}.conv0", conv_a)
            self.register(f"block{i}.conv1", conv_b)
        self.post_stddev = nn.Conv2d(rng, 65, 64, k=3, padding=1)
        self.final_conv = nn.Conv2d(rng, 64, 64, k=4, padding=0)
        self.head = nn.Linear(rng, 64, n_classes)
        self.register("post_stddev", self.post_stddev)
        self.register("final_conv", self.final_conv)
        self.register("head", self.head)

    def _build_mlp(self, rng: np.random.Generator) -> None:
        in_f = self.resolution * self.resolution * self.in_channels
        width = mlp_width(self.resolution, self.n_classes, self.in_channels)
        self.mlp_width = width
        self.mlp_layers = []
        f = in_f
        for i in range(MLP_HIDDEN_LAYERS):
            layer = nn.Linear(rng, f, width)
            self.mlp_layers.append(layer)
            self.register(f"mlp{i}", layer)
            f = width
        self.head = nn.Linear(rng, width, self.n_classes)
        self.register("head", self.head)

    def forward(self, x: TensorNode) -> TensorNode:
        if x.shape[1] != self.resolution or x.shape[3] != self.in_channels:
            raise ConfigurationError(
                f"discriminator expects [N,{self.resolution},{self.resolution},"
                f"{self.in_channels}], got {x.shape}")
        if self.downsample_mode == "mlp":
            h = nn.flatten(x)
            for layer in self.mlp_layers:
                h = ad.leaky_relu(layer(h), LEAKY_SLOPE)
            return self.head(h)
        h = ad.leaky_relu(self.from_rgb(x), LEAKY_SLOPE)
        for conv_a, conv_b in self.blocks:
            h = ad.leaky_relu(conv_a(h), LEAKY_SLOPE)
            h = ad.leaky_relu(conv_b(h), LEAKY_SLOPE)
            if self.downsample_mode != "stride":
                h = nn.downsample(h, self.downsample_mode)
        h = nn.minibatch_stddev(h)
        h = ad.leaky_relu(self.post_stddev(h), LEAKY_SLOPE)
        h = ad.leaky_relu(self.final_conv(h), LEAKY_SLOPE)
        return self.head(nn.flatten(h))

    def __call__(self, x: TensorNode) -> TensorNode:
        return self.forward(x)


def conv_param_count(resolution: int, n_classes: int, in_channels: int = 3) -> int:
    def conv(cin, cout, k):
        return k * k * cin * cout + cout

    total = conv(in_channels, 16, 1)
    for c_in, c_mid, c_out in _block_plans(_n_downs(resolution)):
        total += conv(c_in, c_mid, 3) + conv(c_mid, c_out, 3)
    total += conv(65, 64, 3) + conv(64, 64, 4)
    return total + 64 * n_classes + n_classes


def mlp_width(resolution: int, n_classes: int, in_channels: int = 3) -> int:
    """Hidden width matching the conv variant's parameter count (within 15%)."""
    target = conv_param_count(resolution, n_classes, in_channels)
    in_f = resolution * resolution * in_channels

    def count(w: int) -> int:
        return (in_f * w + w) + (MLP_HIDDEN_LAYERS - 1) * (w * w + w) + (w * n_classes + n_classes)

    # 3w^2 + (in_f + 4 + n_c)w + n_c = target
    a = MLP_HIDDEN_LAYERS - 1
    b = in_f + MLP_HIDDEN_LAYERS + n_classes
    root = (-b + math.sqrt(b * b + 4 * a * (target - n_classes))) / (2 * a)
    candidates = [max(1, int(root) + d) for d in (-1, 0, 1, 2)]
    return min(candidates, key=lambda w: abs(count(w) / target - 1.0))


# ---------------------------------------------------------------------------
# frequency-domain variants

FREQ_VARIANTS = ("none", "sd", "sd_ft", "sd_cnn_ft", "f_mining", "wavelet")
SD_WIDTH = 128


class SpectrumMLP(nn.Module):
    """3-layer MLP used by the spectral discriminator variants."""

    def __init__(self, rng: np.random.Generator, in_features: int, n_classes: int,
                 width: int = SD_WIDTH):
        super().__init__()
        self.layers = [nn.Linear(rng, in_features, width), nn.Linear(rng, width, width)]
        self.head = nn.Linear(rng, width, n_classes)
        for i, layer in enumerate(self.layers):
            self.register(f"fc{i}", layer)
        self.register("head", self.head)

    def forward(self, x: TensorNode) -> TensorNode:
        for layer in self.layers:
            x = ad.leaky_relu(layer(x), LEAKY_SLOPE)
        return self.head(x)

    def __call__(self, x: TensorNode) -> TensorNode:
        return self.forward(x)


class ComposedDiscriminator:
    """Spatial discriminator plus an optional frequency-domain module."""

    def __init__(self, spatial: DiscriminatorNet, variant: str = "none",
                 freq_net: nn.Module | None = None, grayscale: str = "mean",
                 image_resolution: int | None = None):
        if variant not in FREQ_VARIANTS:
            raise ConfigurationError(f"unknown frequency variant {variant!r}")
        self.spatial = spatial
        self.variant = variant
        self.freq_net = freq_net
        self.grayscale = grayscale
        self.image_resolution = image_resolution or spatial.resolution
        if variant == "wavelet":
            if spatial.in_channels % 4 != 0:
                raise ConfigurationError(
                    "wavelet variant needs a spatial discriminator built for 4x input channels")
            if spatial.resolution * 2 != self.image_resolution:
                raise ConfigurationError(
                    "wavelet variant needs a spatial discriminator at half the image resolution")

    @property
    def n_classes(self) -> int:
        return self.spatial.n_classes

    def spatial_logits(self, images: TensorNode) -> TensorNode:
        if self.variant == "wavelet":
            images = nn.haar_dwt(images)
        return self.spatial(images)

    def freq_logits(self, images: TensorNode) -> TensorNode | None:
        if self.variant == "sd":
            feats = spectral.log_reduced_spectrum(images, self.grayscale)
            return self.freq_net(feats)
        if self.variant == "sd_ft":
            spec = spectral.dft2(spectral.to_grayscale(images, self.grayscale))
            n = images.shape[0]
            hw = spec.height * spec.width
            flat = ad.concat([ad.reshape(spec.real, (n, hw)), ad.reshape(spec.imag, (n, hw))], axis=1)
            return self.freq_net(flat)
        if self.variant == "sd_cnn_ft":
            spec = spectral.dft2(spectral.to_grayscale(images, self.grayscale))
            n, h, w = images.shape[0], spec.height, spec.width
            stacked = ad.concat([ad.reshape(spec.real, (n, h, w, 1)),
                                 ad.reshape(spec.imag, (n, h, w, 1))], axis=-1)
            return self.freq_net(stacked)
        return None

    def parameters(self):
        ps = self.spatial.parameters()
        if self.freq_net is not None:
            ps = ps + self.freq_net.parameters()
        return ps

    def named_parameters(self):
        items = [(f"spatial.{k}", v) for k, v in self.spatial.named_parameters()]
        if self.freq_net is not None:
            items += [(f"freq.{k}", v) for k, v in self.freq_net.named_parameters()]
        return items

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())


def attach_frequency_module(disc: DiscriminatorNet, variant: str,
                            rng: np.random.Generator | None = None,
                            grayscale: str = "mean",
                            image_resolution: int | None = None) -> ComposedDiscriminator:
    """Wrap a spatial discriminator with one frequency-domain variant."""
    if variant not in FREQ_VARIANTS:
        raise ConfigurationError(f"unknown frequency variant {variant!r}")
    res = image_resolution or disc.resolution
    freq_net: nn.Module | None = None
    if variant in ("sd", "sd_ft", "sd_cnn_ft"):
        if rng is None:
            raise ConfigurationError(f"variant {variant!r} needs an rng to build its network")
        if variant == "sd":
            freq_net = SpectrumMLP(rng, spectral.n_bins(res), disc.n_classes)
        elif variant == "sd_ft":
            freq_net = SpectrumMLP(rng, 2 * res * res, disc.n_classes)
        else:
            freq_net = DiscriminatorNet(rng, resolution=res, n_classes=disc.n_classes,
                                        downsample_mode=disc.downsample_mode, in_channels=2)
    return ComposedDiscriminator(disc, variant, freq_net, grayscale, image_resolution=res)


def build_discriminator(rng: np.random.Generator, resolution: int, n_classes: int,
                        downsample_mode: str, freq_variant: str = "none",
                        grayscale: str = "mean", in_channels: int = 3) -> ComposedDiscriminator:
    """Construct the spatial net (wavelet-aware) and attach the variant."""
    if freq_variant == "wavelet":
        spatial = DiscriminatorNet(rng, resolution // 2, n_classes, downsample_mode,
                                   in_channels=4 * in_channels)
    else:
        spatial = DiscriminatorNet(rng, resolution, n_classes, downsample_mode,
                                   in_channels=in_channels)
    return attach_frequency_module(spatial, freq_variant, rng, grayscale, image_resolution=resolution)


def f_mining_weights(fake_images: np.ndarray, real_log_mean: np.ndarray,
                     grayscale: str = "mean") -> np.ndarray:
    """Per-sample weights from mean |log-spectrum| deviation, summing to N."""
    spectra = spectral.image_reduced_spectrum(fake_images, grayscale)
    dev = np.abs(np.log(spectra + spectral.LOG_FLOOR) - real_log_mean[None, :]).mean(axis=1)
    total = dev.sum()
    n = len(dev)
    if total <= 0:
        return np.ones(n)
    return dev / total * n


@dataclass
class LearnableCanvas:
    """Directly optimized fake images with an EMA shadow for evaluation."""

    tensors: TensorNode
    ema_tensors: np.ndarray
    decay: float = 0.999

    @classmethod
    def create(cls, rng: np.random.Generator, n: int, resolution: int,
               channels: int = 3, init_std: float = 0.1, decay: float = 0.999) -> "LearnableCanvas":
        data = rng.normal(0.0, init_std, size=(n, resolution, resolution, channels))
        node = ad.parameter(data)
        return cls(tensors=node, ema_tensors=node.data.copy(), decay=decay)

    def ema_update(self) -> None:
        self.ema_tensors = self.decay * self.ema_tensors + (1.0 - self.decay) * self.tensors.data

    def eval_images(self) -> np.ndarray:
        return np.clip(self.ema_tensors, -1.0, 1.0)
