"""Reduced-channel progressive-style generator with swappable upsampling.

Structure: a 4x4 conv consumes the latent as a 1x1 spatial map (padding 3
yields a 4x4 grid), then repeated [upsample, conv, conv] blocks grow to
the target resolution, finishing with a linear 1x1 conv to RGB.  Every
conv except the output one is followed by leaky ReLU and pixel norm.

In ``reshape`` mode upsampling is depth-to-space, so each conv feeding an
upsample emits 4x channels and all widths shrink by 1.5x to keep the
parameter count comparable.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import TensorNode
from .errors import ConfigurationError

LATENT_DIM = 64
LEAKY_SLOPE = 0.2
BASE_WIDTHS = (64, 32, 16)


def _n_base_blocks(resolution: int) -> int:
    n = int(math.log2(resolution)) - 4
    if resolution < 16 or (resolution & (resolution - 1)) != 0:
        raise ConfigurationError(f"resolution must be a power of two >= 16, got {resolution}")
    return n


def _width(w: int, reshape_mode: bool) -> int:
    if not reshape_mode:
        return w
    return max(4, round(w / 1.5))


class GeneratorNet(nn.Module):
    def __init__(self, rng: np.random.Generator, resolution: int = 64,
                 upsample_mode: str = "bilinear", latent_dim: int = LATENT_DIM,
                 out_channels: int = 3):
        super().__init__()
        if upsample_mode not in nn.UPSAMPLE_MODES:
            raise ConfigurationError(f"unknown upsample mode {upsample_mode!r}")
        self.resolution = resolution
        self.upsample_mode = upsample_mode
        self.latent_dim = latent_dim
        n = _n_base_blocks(resolution)
        rs = upsample_mode == "reshape"
        w1, w2, w3 = (_width(w, rs) for w in BASE_WIDTHS)

        def pre_up(c: int) -> int:
            return 4 * c if rs else c

        self.from_latent = nn.Conv2d(rng, latent_dim, w1, k=4, padding=3)
        self.head = nn.Conv2d(rng, w1, pre_up(w1), k=3, padding=1)
        self.register("from_latent", self.from_latent)
        self.register("head", self.head)

        # block channel plan: n blocks at w1, then w1->w2, then w2->w3
        plans = [(w1, w1, w1)] * n + [(w1, w2, w2), (w2, w3, w3)]
        self.blocks = []
        for i, (c_in, c_mid, c_out) in enumerate(plans):
            last = i == len(plans) - 1
            conv_a = nn.Conv2d(rng, c_in, c_mid, k=3, padding=1)
            conv_b = nn.Conv2d(rng, c_mid, c_out if last else pre_up(c_out), k=3, padding=1)
            self.blocks.append((conv_a, conv_b))
            self.register(f"block{i}.conv0", conv_a)
            self.register(f"block{i}.conv1", conv_b)
        self.to_rgb = nn.Conv2d(rng, w3, out_channels, k=1, padding=0)
        self.register("to_rgb", self.to_rgb)

    def _act(self, x: TensorNode) -> TensorNode:
        return nn.pixel_norm(ad.leaky_relu(x, LEAKY_SLOPE))

    def forward(self, z: TensorNode) -> TensorNode:
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ConfigurationError(f"latent batch must be [N, {self.latent_dim}], got {z.shape}")
        x = ad.reshape(z, (z.shape[0], 1, 1, self.latent_dim))
        x = self._act(self.from_latent(x))
        x = self._act(self.head(x))
        for conv_a, conv_b in self.blocks:
            x = nn.upsample(x, self.upsample_mode)
            x = self._act(conv_a(x))
            x = self._act(conv_b(x))
        return self.to_rgb(x)

    def __call__(self, z: TensorNode) -> TensorNode:
        return self.forward(z)


def generator_param_count(resolution: int, upsample_mode: str,
                          latent_dim: int = LATENT_DIM, out_channels: int = 3) -> int:
    """Closed-form parameter count (used by the parity checks)."""
    n = _n_base_blocks(resolution)
    rs = upsample_mode == "reshape"
    w1, w2, w3 = (_width(w, rs) for w in BASE_WIDTHS)

    def pre_up(c):
        return 4 * c if rs else c

    def conv(cin, cout, k):
        return k * k * cin * cout + cout

    total = conv(latent_dim, w1, 4) + conv(w1, pre_up(w1), 3)
    plans = [(w1, w1, w1)] * n + [(w1, w2, w2), (w2, w3, w3)]
    for i, (c_in, c_mid, c_out) in enumerate(plans):
        last = i == len(plans) - 1
        total += conv(c_in, c_mid, 3)
        total += conv(c_mid, c_out if last else pre_up(c_out), 3)
    return total + conv(w3, out_channels, 1)
