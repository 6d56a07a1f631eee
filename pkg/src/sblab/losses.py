"""Training objectives: pixel reconstruction, non-saturating GAN terms
with the R1 input-gradient penalty, and PSNR evaluation."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import TensorNode, _record
from .errors import ConfigurationError

PSNR_CAP_DB = 99.0


def pixel_l2_loss(pred: TensorNode, target: TensorNode | np.ndarray) -> TensorNode:
    """Mean squared difference over batch, pixels and channels."""
    if not isinstance(target, TensorNode):
        target = ad.constant(target)
    if pred.shape != target.shape:
        raise ConfigurationError(f"pixel_l2_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = ad.sub(pred, target)
    return ad.mean_all(ad.mul(diff, diff))


def select_logits(logits: TensorNode, labels: np.ndarray) -> TensorNode:
    """Pick each sample's class logit: ``[N, n_c] -> [N]``."""
    idx = np.asarray(labels, dtype=np.int64)
    n, n_c = logits.shape

    def vjp(g, need):
        return (_scatter_logits(g, idx, n_c),)

    data = logits.data[np.arange(n), idx]
    return _record(data, (logits,), vjp, "select_logits")


def _scatter_logits(g: TensorNode, idx: np.ndarray, n_c: int) -> TensorNode:
    n = g.shape[0]

    def vjp(u, need):
        return (select_logits(u, idx),)

    data = np.zeros((n, n_c), dtype=g.data.dtype)
    data[np.arange(n), idx] = g.data
    return _record(data, (g,), vjp, "scatter_logits")


def r1_penalty(d_out: TensorNode, images: TensorNode) -> TensorNode:
    """Mean over the batch of the squared input-gradient norm of D."""
    total = ad.sum_all(d_out) if d_out.ndim else d_out
    g = ad.grad_of_output_wrt_input(total, images)
    return ad.mul(ad.sum_all(ad.mul(g, g)), 1.0 / images.shape[0])


def gan_losses(d_real_logits: TensorNode, d_fake_logits: TensorNode,
               real_images: TensorNode | None = None,
               r1_weight: float = 10.0,
               fake_weights: np.ndarray | None = None) -> tuple[TensorNode, TensorNode]:
    """Non-saturating GAN losses; R1 added to loss_D when images given.

    ``fake_weights`` optionally reweights per-sample fake terms (they are
    expected to sum to the batch size).
    """
    sp_fake = ad.softplus(d_fake_logits)
    sp_fake_neg = ad.softplus(ad.neg(d_fake_logits))
    if fake_weights is not None:
        w = ad.constant(np.asarray(fake_weights))
        sp_fake = ad.mul(sp_fake, w)
        sp_fake_neg = ad.mul(sp_fake_neg, w)
    loss_d = ad.add(ad.mean_all(sp_fake), ad.mean_all(ad.softplus(ad.neg(d_real_logits))))
    if real_images is not None and r1_weight > 0:
        loss_d = ad.add(loss_d, ad.mul(r1_penalty(d_real_logits, real_images), r1_weight))
    loss_g = ad.mean_all(sp_fake_neg)
    return loss_d, loss_g


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    """PSNR in dB of images mapped to [0, 1], capped at 99 dB."""
    p = (np.clip(np.asarray(pred, np.float64), -1, 1) + 1) / 2
    t = (np.clip(np.asarray(target, np.float64), -1, 1) + 1) / 2
    mse = float(np.mean((p - t) ** 2))
    if mse <= 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def psnr_batch(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return np.array([psnr(p, t) for p, t in zip(pred, target)])
