"""Training losses. Each returns ``(value, gradient w.r.t. the rendered image)``.

Masks select the pixels that take part; everything outside gets a zero
gradient. Normal-image losses expect unit vectors.
"""
import math
from dataclasses import dataclass

import numpy as np

PYRAMID_LEVELS = 4


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    vm: float = 0.0
    tm: float = 0.0
    vg: float = 0.0
    tg: float = 0.0

    def __post_init__(self):
        for name in ("vm", "tm", "vg", "tg"):
            w = getattr(self, name)
            if not (math.isfinite(w) and w >= 0):
                raise LossError(f"weight {name}={w} must be finite and >= 0")

    def as_tuple(self):
        return (self.vm, self.tm, self.vg, self.tg)


PHASE1_WEIGHTS = LossWeights(vm=500.0, tm=1.0)
PHASE2_WEIGHTS = LossWeights(vm=500.0, tm=0.05, vg=5.0, tg=0.05)


def _count(mask):
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise LossError("loss mask is empty")
    return n


def loss_vm(pred, target, mask, mode="per-pixel"):
    """Visual matching: per-pixel squared error or squared error of masked channel means."""
    pred = np.asarray(pred, dtype=np.float64)
    n = _count(mask)
    C = pred.shape[-1]
    grad = np.zeros_like(pred)
    if mode == "per-pixel":
        d = pred[mask] - target[mask]
        grad[mask] = 2.0 * d / (n * C)
        return float(np.sum(d * d) / (n * C)), grad
    if mode == "mean-color":
        d = pred[mask].mean(axis=0) - np.asarray(target)[mask].mean(axis=0)
        grad[mask] = 2.0 * d / (C * n)
        return float(np.sum(d * d) / C), grad
    raise LossError(f"unknown loss_vm mode {mode!r}")


def cosine_terms(pred, target, sel):
    """Sum over ``sel`` of (1 - pred . target) and its gradient w.r.t. ``pred``."""
    grad = np.zeros(pred.shape)
    if not np.any(sel):
        return 0.0, grad
    dots = np.sum(pred[sel] * target[sel], axis=-1)
    grad[sel] = -target[sel]
    return float(np.sum(1.0 - dots)), grad


def loss_tm(pred, target, mask):
    """Tactile matching: mean over the mask of 1 - cos between unit normals."""
    pred = np.asarray(pred, dtype=np.float64)
    n = _count(mask)
    total, grad = cosine_terms(pred, np.asarray(target, dtype=np.float64), mask)
    return total / n, grad / n


loss_tg = loss_tm


def _pool(x):
    """2x2 average pooling; odd sizes are zero-padded."""
    H, W = x.shape[:2]
    if H % 2 or W % 2:
        x = np.pad(x, ((0, H % 2), (0, W % 2)) + ((0, 0),) * (x.ndim - 2))
    H, W = x.shape[:2]
    return x.reshape(H // 2, 2, W // 2, 2, *x.shape[2:]).mean(axis=(1, 3))


def _pool_adjoint(g, shape):
    up = np.repeat(np.repeat(g, 2, axis=0), 2, axis=1) / 4.0
    return up[:shape[0], :shape[1]]


def _upsample(x, shape):
    """Nearest-neighbor 2x upsampling cropped to ``shape``."""
    return np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)[:shape[0], :shape[1]]


def _upsample_adjoint(g, shape):
    H, W = g.shape[:2]
    pad = np.pad(g, ((0, 2 * shape[0] - H), (0, 2 * shape[1] - W)) + ((0, 0),) * (g.ndim - 2))
    return pad.reshape(shape[0], 2, shape[1], 2, *g.shape[2:]).sum(axis=(1, 3))


def laplacian_pyramid(x, levels=PYRAMID_LEVELS):
    gauss = [x]
    for _ in range(levels - 1):
        gauss.append(_pool(gauss[-1]))
    lap = [gauss[k] - _upsample(gauss[k + 1], gauss[k].shape) for k in range(levels - 1)]
    lap.append(gauss[-1])
    return lap, gauss


def pyramid_term(diff, n_pixels, levels=PYRAMID_LEVELS):
    """Perceptual proxy: weighted L1 of the Laplacian pyramid of a masked difference image."""
    C = diff.shape[-1]
    lap, gauss = laplacian_pyramid(diff, levels)
    value = 0.0
    g_lap = []
    for k, band in enumerate(lap):
        norm = levels * n_pixels * C / 4.0 ** k
        value += np.sum(np.abs(band)) / norm
        g_lap.append(np.sign(band) / norm)
    # reverse mode through the pyramid
    g_gauss = [None] * levels
    g_gauss[-1] = g_lap[-1]
    for k in range(levels - 2, -1, -1):
        g_gauss[k + 1] = g_gauss[k + 1] - _upsample_adjoint(g_lap[k], gauss[k + 1].shape)
        g_gauss[k] = g_lap[k] + _pool_adjoint(g_gauss[k + 1], gauss[k].shape)
    return float(value), g_gauss[0]


def loss_vg(pred, target, mask):
    """Visual guidance: masked L1 plus the Laplacian-pyramid term, weighted 1 each."""
    pred = np.asarray(pred, dtype=np.float64)
    n = _count(mask)
    C = pred.shape[-1]
    m = mask[..., None]
    diff = np.where(m, pred - target, 0.0)
    l1 = float(np.sum(np.abs(diff)) / (n * C))
    g = np.sign(diff) / (n * C)
    pyr, g_pyr = pyramid_term(diff, n)
    g = np.where(m, g + g_pyr, 0.0)
    return l1 + pyr, g


def loss_label(logits, labels, mask):
    """Masked softmax cross-entropy; label 0 is background and is skipped."""
    logits = np.asarray(logits, dtype=np.float64)
    sel = mask & (labels > 0)
    n = _count(sel)
    z = logits[sel]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    idx = labels[sel] - 1
    if idx.max() >= logits.shape[-1]:
        raise LossError("label index exceeds the number of logits")
    rows = np.arange(len(idx))
    value = -float(np.sum(logp[rows, idx])) / n
    gsel = np.exp(logp)
    gsel[rows, idx] -= 1.0
    grad = np.zeros_like(logits)
    grad[sel] = gsel / n
    return value, grad


def total_loss(parts, weights):
    """Weighted sum of (vm, tm, vg, tg)."""
    parts = tuple(float(p) for p in parts)
    if len(parts) != 4:
        raise LossError("expected four loss parts")
    if not all(math.isfinite(p) for p in parts):
        raise LossError(f"non-finite loss part in {parts}")
    return sum(w * p for w, p in zip(weights.as_tuple(), parts))
