"""Raw numpy kernels behind the autodiff primitives.

Everything here works on channel-last arrays ``[N, H, W, C]``.  The
convolution uses a shift-and-accumulate scheme over one flat padded
buffer holding the whole batch: each kernel tap becomes a single large
GEMM on a contiguous slice, accumulated in place via BLAS ``gemm`` with
``beta=1``.  Per-image row spans carry a tail gap so tap shifts never
bleed between images (garbage rows are computed but land in regions that
the extraction step discards and the zeroed gradient buffers annihilate).
Convolution weights are stored ``[kh, kw, C_in, C_out]`` so each tap
slice is a contiguous ``[C_in, C_out]`` matrix.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg.blas import dgemm, sgemm


def _gemm_acc(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> None:
    """c += a @ b for C-contiguous operands, no temporaries.

    Computed as c.T = b.T @ a.T on the Fortran-order transposed views.
    """
    gemm = sgemm if a.dtype == np.float32 else dgemm
    gemm(1.0, b.T, a.T, beta=1.0, c=c.T, overwrite_c=True)


def _spans(h: int, w: int, pad: int, kh: int, kw: int) -> tuple[int, int, int, int, int]:
    hp, wp = h + 2 * pad, w + 2 * pad
    tail = (kh - 1) * wp + (kw - 1)
    span = hp * wp + tail
    ho, wo = hp - kh + 1, wp - kw + 1
    return hp, wp, tail, span, ho * wp


def _fill_padded(x: np.ndarray, pad: int, span: int, hp: int, wp: int) -> np.ndarray:
    n, h, w, c = x.shape
    buf = np.zeros((n * span, c), dtype=x.dtype)
    view = buf.reshape(n, span, c)[:, : hp * wp].reshape(n, hp, wp, c)
    if pad == 0:
        view[:] = x
    else:
        view[:, pad : pad + h, pad : pad + w] = x
    return buf


def _fill_gbuf(g: np.ndarray, span: int, wp: int) -> np.ndarray:
    """Output gradients on span-strided rows, zeros in cropped columns/tails."""
    n, ho, wo, k = g.shape
    buf = np.zeros((n * span, k), dtype=g.dtype)
    buf.reshape(n, span, k)[:, : ho * wp].reshape(n, ho, wp, k)[:, :, :wo] = g
    return buf


def conv2d_fwd(x: np.ndarray, w: np.ndarray, pad: int) -> np.ndarray:
    n, h, width, _ = x.shape
    kh, kw, _, k = w.shape
    hp, wp, tail, span, out_rows = _spans(h, width, pad, kh, kw)
    ho, wo = hp - kh + 1, wp - kw + 1
    xbuf = _fill_padded(x, pad, span, hp, wp)
    obuf = np.zeros((n * span, k), dtype=x.dtype)
    m = n * span - tail
    for di in range(kh):
        for dj in range(kw):
            off = di * wp + dj
            _gemm_acc(xbuf[off : off + m], w[di, dj], obuf[:m])
    out = obuf.reshape(n, span, k)[:, :out_rows].reshape(n, ho, wp, k)[:, :, :wo]
    return np.ascontiguousarray(out)


def conv2d_dx(g: np.ndarray, w: np.ndarray, pad: int, h: int, width: int) -> np.ndarray:
    n = g.shape[0]
    kh, kw, c, _ = w.shape
    hp, wp, tail, span, _ = _spans(h, width, pad, kh, kw)
    gbuf = _fill_gbuf(g, span, wp)
    xg = np.zeros((n * span, c), dtype=g.dtype)
    m = n * span - tail
    wt = np.ascontiguousarray(w.transpose(0, 1, 3, 2))
    for di in range(kh):
        for dj in range(kw):
            off = di * wp + dj
            _gemm_acc(gbuf[:m], wt[di, dj], xg[off : off + m])
    out = xg.reshape(n, span, c)[:, : hp * wp].reshape(n, hp, wp, c)
    out = out[:, pad : pad + h, pad : pad + width]
    return np.ascontiguousarray(out)


def conv2d_dw(x: np.ndarray, g: np.ndarray, pad: int, kh: int, kw: int) -> np.ndarray:
    n, h, width, c = x.shape
    k = g.shape[-1]
    hp, wp, tail, span, _ = _spans(h, width, pad, kh, kw)
    xbuf = _fill_padded(x, pad, span, hp, wp)
    gbuf = _fill_gbuf(g, span, wp)
    m = n * span - tail
    wg = np.zeros((kh, kw, c, k), dtype=x.dtype)
    gm = gbuf[:m]
    for di in range(kh):
        for dj in range(kw):
            off = di * wp + dj
            _gemm_acc(xbuf[off : off + m].T, gm, wg[di, dj])
    return wg


def conv2d_out_size(h: int, pad: int, k: int) -> int:
    return h + 2 * pad - k + 1


def leaky_relu_fwd(x: np.ndarray, slope: float) -> np.ndarray:
    return np.maximum(x, x * x.dtype.type(slope))


def leaky_relu_bwd(g: np.ndarray, nonneg: np.ndarray, slope: float) -> np.ndarray:
    return np.where(nonneg, g, g * g.dtype.type(slope))


# ---------------------------------------------------------------------------
# fixed resampling maps (each pair is mutually adjoint)


def nearest_up2(x: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    out = np.empty((n, 2 * h, 2 * w, c), dtype=x.dtype)
    out.reshape(n, h, 2, w, 2, c)[:] = x[:, :, None, :, None, :]
    return out


def sumpool2(g: np.ndarray) -> np.ndarray:
    n, h2, w2, c = g.shape
    return g.reshape(n, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4))


def dilate2(x: np.ndarray, out_h: int, out_w: int, oi: int = 0, oj: int = 0) -> np.ndarray:
    n, _, _, c = x.shape
    out = np.zeros((n, out_h, out_w, c), dtype=x.dtype)
    out[:, oi::2, oj::2] = x
    return out


def subsample2(x: np.ndarray, oi: int = 0, oj: int = 0) -> np.ndarray:
    return np.ascontiguousarray(x[:, oi::2, oj::2])


def _bilinear_axis_indices(h: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    o = np.arange(2 * h)
    left = np.clip((o - 1) // 2, 0, h - 1)
    right = np.clip((o - 1) // 2 + 1, 0, h - 1)
    w_left = np.where(o % 2 == 0, 0.25, 0.75)
    return left, right, w_left


def bilinear_up2(x: np.ndarray) -> np.ndarray:
    """Factor-2 bilinear upsampling, half-pixel centers, edge clamping."""
    out = x
    for axis in (1, 2):
        h = out.shape[axis]
        left, right, wl = _bilinear_axis_indices(h)
        wl = wl.astype(out.dtype)
        shape = [1, 1, 1, 1]
        shape[axis] = 2 * h
        wl = wl.reshape(shape)
        out = np.take(out, left, axis=axis) * wl + np.take(out, right, axis=axis) * (1.0 - wl)
    return out


def _bilinear_down_axis(g: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of one axis of bilinear_up2 (output length halves)."""
    g = np.moveaxis(g, axis, 0)
    h = g.shape[0] // 2
    ge, go = g[0::2], g[1::2]
    out = 0.75 * (ge + go)
    out[1:] += 0.25 * go[:-1]
    out[:-1] += 0.25 * ge[1:]
    out[0] += 0.25 * ge[0]
    out[h - 1] += 0.25 * go[h - 1]
    return np.moveaxis(out, 0, axis)


def bilinear_up2_t(g: np.ndarray) -> np.ndarray:
    out = _bilinear_down_axis(g, 1)
    out = _bilinear_down_axis(out, 2)
    return np.ascontiguousarray(out)


def _blur_axis(x: np.ndarray, axis: int) -> np.ndarray:
    """[1, 2, 1]/4 filter with reflect padding along one axis."""
    xp = np.moveaxis(x, axis, 0)
    xp = np.pad(xp, [(1, 1)] + [(0, 0)] * (xp.ndim - 1), mode="reflect")
    out = 0.25 * (xp[:-2] + xp[2:]) + 0.5 * xp[1:-1]
    return np.moveaxis(out, 0, axis)


def _blur_axis_t(g: np.ndarray, axis: int) -> np.ndarray:
    g = np.moveaxis(g, axis, 0)
    h = g.shape[0]
    acc = np.zeros((h + 2,) + g.shape[1:], dtype=g.dtype)
    acc[0:h] += 0.25 * g
    acc[1 : h + 1] += 0.5 * g
    acc[2 : h + 2] += 0.25 * g
    out = acc[1 : h + 1]
    out[1] += acc[0]
    out[h - 2] += acc[h + 1]
    return np.moveaxis(out, 0, axis)


def blur3_reflect(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(_blur_axis(_blur_axis(x, 1), 2)).astype(x.dtype, copy=False)


def blur3_reflect_t(g: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(_blur_axis_t(_blur_axis_t(g, 1), 2)).astype(g.dtype, copy=False)
