"""Network operations built on the autodiff engine.

Image tensors are channel-last ``[N, H, W, C]``; convolution weights are
``[kh, kw, C_in, C_out]``.  The resampling operations come in mutually
adjoint pairs so that gradients of gradients stay inside the engine.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import TensorNode, _record
from .errors import ConfigurationError, ContractViolation

# ---------------------------------------------------------------------------
# convolution: three mutually differentiable primitives


def _conv_base(x: TensorNode, w: TensorNode, pad: int) -> TensorNode:
    def vjp(g, need):
        gx = _conv_dx(g, w, pad, x.shape[1], x.shape[2]) if need[0] else None
        gw = _conv_dw(x, g, pad, w.shape[0], w.shape[1]) if need[1] else None
        return (gx, gw)

    return _record(kernels.conv2d_fwd(x.data, w.data, pad), (x, w), vjp, "conv")


def _conv_dx(g: TensorNode, w: TensorNode, pad: int, h: int, width: int) -> TensorNode:
    def vjp(u, need):
        gg = _conv_base(u, w, pad) if need[0] else None
        gw = _conv_dw(u, g, pad, w.shape[0], w.shape[1]) if need[1] else None
        return (gg, gw)

    return _record(kernels.conv2d_dx(g.data, w.data, pad, h, width), (g, w), vjp, "conv_dx")


def _conv_dw(x: TensorNode, g: TensorNode, pad: int, kh: int, kw: int) -> TensorNode:
    def vjp(u, need):
        gx = _conv_dx(g, u, pad, x.shape[1], x.shape[2]) if need[0] else None
        gg = _conv_base(x, u, pad) if need[1] else None
        return (gx, gg)

    return _record(kernels.conv2d_dw(x.data, g.data, pad, kh, kw), (x, g), vjp, "conv_dw")


def bias_add(x: TensorNode, b: TensorNode) -> TensorNode:
    def vjp(g, need):
        gb = ad.sum_axes(g, tuple(range(g.ndim - 1)), keepdims=False) if need[1] else None
        return (g if need[0] else None, gb)

    return _record(x.data + b.data, (x, b), vjp, "bias_add")


def conv2d(x: TensorNode, w: TensorNode, b: TensorNode | None = None,
           padding: int = 0, stride: int = 1) -> TensorNode:
    """Cross-correlation of ``x`` [N,H,W,C] with ``w`` [kh,kw,C,K]."""
    if x.ndim != 4 or w.ndim != 4:
        raise ConfigurationError(f"conv2d expects 4-d input/weight, got {x.shape}, {w.shape}")
    if x.shape[3] != w.shape[2]:
        raise ConfigurationError(
            f"conv2d channel mismatch: input has {x.shape[3]}, weight expects {w.shape[2]}")
    if stride not in (1, 2):
        raise ConfigurationError(f"conv2d stride must be 1 or 2, got {stride}")
    out = _conv_base(x, w, padding)
    if stride == 2:
        out = subsample2(out)
    if b is not None:
        if b.shape != (w.shape[3],):
            raise ConfigurationError(f"conv2d bias shape {b.shape} != ({w.shape[3]},)")
        out = bias_add(out, b)
    return out


def linear(x: TensorNode, w: TensorNode, b: TensorNode | None = None) -> TensorNode:
    """Affine map of ``x`` [N,F] with ``w`` [O,F] and bias [O]."""
    if x.shape[1] != w.shape[1]:
        raise ConfigurationError(f"linear: input features {x.shape[1]} != weight {w.shape[1]}")
    out = ad.matmul(x, ad.transpose(w, (1, 0)))
    if b is not None:
        out = bias_add(out, b)
    return out


# ---------------------------------------------------------------------------
# normalization and statistics


def pixel_norm(x: TensorNode, eps: float = 1e-8) -> TensorNode:
    """Scale each pixel's channel vector to unit RMS (fused, first-order)."""
    m = np.mean(np.square(x.data), axis=-1, keepdims=True) + x.data.dtype.type(eps)
    inv = 1.0 / np.sqrt(m)
    out_data = x.data * inv

    def vjp(g, need):
        if ad.grad_enabled():
            raise ContractViolation("pixel_norm gradient is first-order only")
        c = x.shape[-1]
        dot = np.sum(g.data * x.data, axis=-1, keepdims=True) / c
        gx = g.data * inv - x.data * (dot * inv * inv * inv)
        return (TensorNode(gx),)

    return _record(out_data, (x,), vjp, "pixel_norm")


def minibatch_stddev(x: TensorNode) -> TensorNode:
    """Append a channel holding the mean across-batch population std."""
    n = x.shape[0]
    chan_shape = (n, x.shape[1], x.shape[2], 1)
    if n == 1:
        zeros = ad.tensor(np.zeros(chan_shape, dtype=x.data.dtype))
        return ad.concat([x, zeros], axis=-1)
    mu = ad.mean_axes(x, (0,), keepdims=True)
    diff = ad.sub(x, ad.broadcast_to(mu, x.shape))
    var = ad.mean_axes(ad.mul(diff, diff), (0,), keepdims=True)
    std = ad.sqrt(var)
    scalar = ad.mean_all(std)
    chan = ad.broadcast_to(ad.reshape(scalar, (1, 1, 1, 1)), chan_shape)
    return ad.concat([x, chan], axis=-1)


def flatten(x: TensorNode) -> TensorNode:
    return ad.reshape(x, (x.shape[0], -1))


# ---------------------------------------------------------------------------
# resampling primitives (adjoint pairs)


def nearest_up2(x: TensorNode) -> TensorNode:
    def vjp(g, need):
        return (sumpool2(g),)

    return _record(kernels.nearest_up2(x.data), (x,), vjp, "nearest_up2")


def sumpool2(x: TensorNode) -> TensorNode:
    def vjp(g, need):
        return (nearest_up2(g),)

    return _record(kernels.sumpool2(x.data), (x,), vjp, "sumpool2")


def avgpool2(x: TensorNode) -> TensorNode:
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise ConfigurationError(f"avgpool2 needs even spatial dims, got {x.shape}")
    return ad.mul(sumpool2(x), 0.25)


def dilate2(x: TensorNode, out_h: int, out_w: int, oi: int = 0, oj: int = 0) -> TensorNode:
    def vjp(g, need):
        return (subsample2(g, oi, oj),)

    return _record(kernels.dilate2(x.data, out_h, out_w, oi, oj), (x,), vjp, "dilate2")


def subsample2(x: TensorNode, oi: int = 0, oj: int = 0) -> TensorNode:
    in_h, in_w = x.shape[1], x.shape[2]

    def vjp(g, need):
        return (dilate2(g, in_h, in_w, oi, oj),)

    return _record(kernels.subsample2(x.data, oi, oj), (x,), vjp, "subsample2")


def bilinear_up2(x: TensorNode) -> TensorNode:
    def vjp(g, need):
        return (bilinear_up2_t(g),)

    return _record(kernels.bilinear_up2(x.data), (x,), vjp, "bilinear_up2")


def bilinear_up2_t(x: TensorNode) -> TensorNode:
    def vjp(g, need):
        return (bilinear_up2(g),)

    return _record(kernels.bilinear_up2_t(x.data), (x,), vjp, "bilinear_up2_t")


def blur3(x: TensorNode) -> TensorNode:
    """Depthwise 3x3 binomial filter with reflect padding."""

    def vjp(g, need):
        return (blur3_t(g),)

    return _record(kernels.blur3_reflect(x.data), (x,), vjp, "blur3")


def blur3_t(x: TensorNode) -> TensorNode:
    def vjp(g, need):
        return (blur3(g),)

    return _record(kernels.blur3_reflect_t(x.data), (x,), vjp, "blur3_t")


def pixelshuffle2(x: TensorNode) -> TensorNode:
    """Depth-to-space: channel blocks of 4 become 2x2 spatial positions."""
    n, h, w, c = x.shape
    if c % 4:
        raise ConfigurationError(f"pixelshuffle2 needs channels divisible by 4, got {c}")
    out = ad.reshape(x, (n, h, w, c // 4, 2, 2))
    out = ad.transpose(out, (0, 1, 4, 2, 5, 3))
    return ad.reshape(out, (n, 2 * h, 2 * w, c // 4))


UPSAMPLE_MODES = ("bilinear", "nearest", "zeros", "reshape")
DOWNSAMPLE_MODES = ("avgpool", "blurpool", "stride", "mlp")


def upsample(x: TensorNode, mode: str) -> TensorNode:
    """Factor-2 spatial upsampling; ``reshape`` divides channels by 4."""
    if mode == "bilinear":
        return bilinear_up2(x)
    if mode == "nearest":
        return nearest_up2(x)
    if mode == "zeros":
        return dilate2(x, 2 * x.shape[1], 2 * x.shape[2])
    if mode == "reshape":
        return pixelshuffle2(x)
    raise ConfigurationError(f"unknown upsample mode {mode!r}")


def downsample(x: TensorNode, mode: str) -> TensorNode:
    """Factor-2 pooling; the ``stride`` mode lives in the conv layers instead."""
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise ConfigurationError(f"downsample needs even spatial dims, got {x.shape}")
    if mode == "avgpool":
        return avgpool2(x)
    if mode == "blurpool":
        return avgpool2(blur3(x))
    raise ConfigurationError(f"unknown pooling mode {mode!r} (stride/mlp are structural)")


# ---------------------------------------------------------------------------
# Haar wavelet


def haar_dwt(x: TensorNode) -> TensorNode:
    """One-level orthonormal Haar transform, subbands stacked on channels.

    ``[N, H, W, C]`` becomes ``[N, H/2, W/2, 4C]`` ordered LL, LH, HL, HH.
    """
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise ConfigurationError(f"haar_dwt needs even spatial dims, got {x.shape}")
    a = subsample2(x, 0, 0)
    b = subsample2(x, 0, 1)
    c = subsample2(x, 1, 0)
    d = subsample2(x, 1, 1)
    ll = ad.mul(ad.add(ad.add(a, b), ad.add(c, d)), 0.5)
    lh = ad.mul(ad.add(ad.sub(a, b), ad.sub(c, d)), 0.5)
    hl = ad.mul(ad.sub(ad.add(a, b), ad.add(c, d)), 0.5)
    hh = ad.mul(ad.add(ad.sub(a, b), ad.sub(d, c)), 0.5)
    return ad.concat([ll, lh, hl, hh], axis=-1)


def haar_idwt(x: TensorNode) -> TensorNode:
    """Inverse of :func:`haar_dwt`."""
    c4 = x.shape[-1]
    if c4 % 4:
        raise ConfigurationError(f"haar_idwt needs channels divisible by 4, got {c4}")
    c = c4 // 4
    ll = ad.narrow(x, -1, 0, c)
    lh = ad.narrow(x, -1, c, c)
    hl = ad.narrow(x, -1, 2 * c, c)
    hh = ad.narrow(x, -1, 3 * c, c)
    h2, w2 = 2 * x.shape[1], 2 * x.shape[2]
    a = ad.mul(ad.add(ad.add(ll, lh), ad.add(hl, hh)), 0.5)
    b = ad.mul(ad.add(ad.sub(ll, lh), ad.sub(hl, hh)), 0.5)
    cc = ad.mul(ad.sub(ad.add(ll, lh), ad.add(hl, hh)), 0.5)
    dd = ad.mul(ad.add(ad.sub(ll, lh), ad.sub(hh, hl)), 0.5)
    out = dilate2(a, h2, w2, 0, 0)
    out = ad.add(out, dilate2(b, h2, w2, 0, 1))
    out = ad.add(out, dilate2(cc, h2, w2, 1, 0))
    return ad.add(out, dilate2(dd, h2, w2, 1, 1))


# ---------------------------------------------------------------------------
# layers


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float64)


class Conv2d:
    """Conv layer owning its weight [kh,kw,C,K] and bias [K]."""

    def __init__(self, rng, c_in: int, c_out: int, k: int,
                 padding: int = 0, stride: int = 1):
        self.padding = padding
        self.stride = stride
        self.w = ad.parameter(he_normal(rng, (k, k, c_in, c_out), fan_in=c_in * k * k))
        self.b = ad.parameter(np.zeros(c_out))

    def __call__(self, x: TensorNode) -> TensorNode:
        return conv2d(x, self.w, self.b, padding=self.padding, stride=self.stride)

    def parameters(self):
        return [("w", self.w), ("b", self.b)]

    def n_params(self) -> int:
        return self.w.size + self.b.size


class Linear:
    def __init__(self, rng, f_in: int, f_out: int):
        self.w = ad.parameter(he_normal(rng, (f_out, f_in), fan_in=f_in))
        self.b = ad.parameter(np.zeros(f_out))

    def __call__(self, x: TensorNode) -> TensorNode:
        return linear(x, self.w, self.b)

    def parameters(self):
        return [("w", self.w), ("b", self.b)]

    def n_params(self) -> int:
        return self.w.size + self.b.size


class Module:
    """Lightweight parameter container with stable naming."""

    def __init__(self):
        self._params: "OrderedDict[str, TensorNode]" = OrderedDict()

    def register(self, name: str, layer) -> None:
        for sub, p in layer.parameters():
            self._params[f"{name}.{sub}"] = p

    def register_param(self, name: str, p: TensorNode) -> None:
        self._params[name] = p

    def named_parameters(self):
        return list(self._params.items())

    def parameters(self) -> list[TensorNode]:
        return list(self._params.values())

    def n_params(self) -> int:
        return sum(p.size for p in self._params.values())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self._params.items())

    def load_state_dict(self, state) -> None:
        for k, p in self._params.items():
            arr = np.asarray(state[k], dtype=p.data.dtype)
            if arr.shape != p.shape:
                raise ConfigurationError(f"parameter {k}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None


class EMA:
    """Exponential moving average shadow of a module's parameters."""

    def __init__(self, module: Module, decay: float):
        self.decay = decay
        self.shadow = OrderedDict((k, v.data.copy()) for k, v in module.named_parameters())

    def update(self, module: Module) -> None:
        d = self.decay
        for k, p in module.named_parameters():
            self.shadow[k] = d * self.shadow[k] + (1.0 - d) * p.data

    def state_dict(self):
        return OrderedDict((k, v.copy()) for k, v in self.shadow.items())
