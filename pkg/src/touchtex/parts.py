"""Multi-part support: attention-map label assignment and part-masked tactile losses.

Attention maps arrive as tensors of shape ``(K, H, W)`` (self-attention
clusters) and ``(N, H, W)`` (one cross-attention map per part name). Label
maps use 1-based part indices with 0 for background.
"""
from dataclasses import dataclass, field

import numpy as np

from .losses import LossError, cosine_terms

KL_EPS = 1e-12


class PartError(ValueError):
    pass


@dataclass
class AttentionMaps:
    self_clusters: np.ndarray   # (K, H, W)
    cross: np.ndarray           # (N, H, W)
    part_names: list = field(default_factory=list)

    def validate(self, tol=1e-5):
        for name, maps in (("self", self.self_clusters), ("cross", self.cross)):
            if maps.ndim != 3:
                raise PartError(f"{name} maps must be (count, H, W)")
            if np.any(maps < 0):
                raise PartError(f"{name} maps have negative entries")
            sums = maps.reshape(len(maps), -1).sum(axis=1)
            if np.any(np.abs(sums - 1) > tol):
                raise PartError(f"{name} maps must each sum to 1")
        K, N = len(self.self_clusters), len(self.cross)
        if not K >= N >= 1:
            raise PartError(f"need K >= N >= 1, got K={K}, N={N}")
        if self.self_clusters.shape[1:] != self.cross.shape[1:]:
            raise PartError("self and cross maps differ in resolution")
        if self.part_names and len(self.part_names) != N:
            raise PartError("one part name per cross-attention map")


def normalize_spatial(maps):
    """Scale each map to sum to one over the pixels (raw attention -> distribution)."""
    maps = np.asarray(maps, dtype=np.float64)
    sums = maps.reshape(len(maps), -1).sum(axis=1)
    if np.any(sums <= 0):
        raise PartError("attention map with no mass")
    return maps / sums[:, None, None]


def preliminary_segmentation(self_clusters):
    """Per-pixel 1-based cluster index; ties go to the lowest index."""
    return np.argmax(self_clusters, axis=0) + 1


def kl_divergence(p, q, eps=KL_EPS):
    p = p.ravel() + eps
    q = q.ravel() + eps
    return float(np.sum(p * np.log(p / q)))


def kl_matrix(self_clusters, cross, eps=KL_EPS):
    K, N = len(self_clusters), len(cross)
    D = np.empty((K, N))
    for k in range(K):
        for n in range(N):
            D[k, n] = kl_divergence(self_clusters[k], cross[n], eps)
    return D


def kl_assign(self_clusters, cross, eps=KL_EPS):
    """Cluster -> part mapping (both 1-based) and the merged label map."""
    D = kl_matrix(self_clusters, cross, eps)
    part_of = np.argmin(D, axis=1) + 1
    mapping = {k + 1: int(part_of[k]) for k in range(len(part_of))}
    prelim = preliminary_segmentation(self_clusters)
    labels = part_of[prelim - 1]
    return mapping, labels


def part_masks(label_logits, mask):
    """Hard per-part masks from rendered label logits: (N, H, W) bools."""
    winner = np.argmax(label_logits, axis=-1)
    N = label_logits.shape[-1]
    return np.stack([mask & (winner == n) for n in range(N)])


def masked_tactile_losses(pred, targets, masks, valid):
    """Sum over parts of the cosine loss inside each part mask.

    Every term is normalized by the pixel count of ``valid`` so that with a
    single part covering ``valid`` the value equals ``loss_tm``.
    """
    masks = np.asarray(masks, dtype=bool)
    if len(targets) != len(masks):
        raise PartError("one target image per part mask")
    if np.any(masks.sum(axis=0) > 1):
        raise PartError("part masks overlap")
    n = int(np.count_nonzero(valid))
    if n == 0:
        raise LossError("loss mask is empty")
    pred = np.asarray(pred, dtype=np.float64)
    total = 0.0
    grad = np.zeros(pred.shape)
    for target, m in zip(targets, masks):
        value, g = cosine_terms(pred, np.asarray(target, dtype=np.float64), m & valid)
        total += value
        grad += g
    return total / n, grad / n
