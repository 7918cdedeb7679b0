import itertools

import numpy as np
import pytest

from touchtex.losses import LossError, loss_tm
from touchtex.parts import (AttentionMaps, PartError, kl_assign, kl_matrix, masked_tactile_losses,
                            normalize_spatial, part_masks, preliminary_segmentation)


def random_maps(rng, count, h=6, w=7, sparsity=0.0):
    m = rng.gamma(0.5, size=(count, h, w))
    m[rng.uniform(size=m.shape) < sparsity] = 0.0
    m[:, 0, 0] += 1e-3
    return normalize_spatial(m)


def unit(rng, shape):
    v = rng.standard_normal(shape + (3,))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def test_prelim_left_dominant():
    a = np.zeros((2, 4, 6))
    a[0, :, :3] = 1.0
    a[1, :, 3:] = 1.0
    lab = preliminary_segmentation(normalize_spatial(a + 0.01))
    assert (lab[:, :3] == 1).all() and (lab[:, 3:] == 2).all()


def test_prelim_ties_and_loop_oracle():
    assert (preliminary_segmentation(np.full((3, 4, 4), 1 / 16)) == 1).all()
    rng = np.random.default_rng(0)
    a = random_maps(rng, 5)
    a[:, 2, 3] = a[1, 2, 3]   # a tie between clusters 1..5 at one pixel
    got = preliminary_segmentation(a)
    for r in range(a.shape[1]):
        for c in range(a.shape[2]):
            best = 0
            for k in range(1, a.shape[0]):
                if a[k, r, c] > a[best, r, c]:
                    best = k
            assert got[r, c] == best + 1
    assert got[2, 3] == 1


def brute_force(f, c, eps=1e-12):
    mapping = {}
    for k in range(len(f)):
        best, best_d = None, None
        for n in range(len(c)):
            d = 0.0
            for p, q in zip(f[k].ravel(), c[n].ravel()):
                d += (p + eps) * np.log((p + eps) / (q + eps))
            if best_d is None or d < best_d:
                best, best_d = n + 1, d
        mapping[k + 1] = best
    return mapping


def test_kl_assign_matches_brute_force():
    rng = np.random.default_rng(1)
    for trial in range(100):
        K = int(rng.integers(1, 9))
        N = int(rng.integers(1, min(K, 4) + 1))
        f = random_maps(rng, K, 4, 5, sparsity=0.2)
        c = random_maps(rng, N, 4, 5, sparsity=0.2)
        mapping, labels = kl_assign(f, c)
        assert mapping == brute_force(f, c), trial
        prelim = preliminary_segmentation(f)
        assert all(labels[idx] == mapping[prelim[idx]] for idx in np.ndindex(labels.shape))


def test_kl_assign_identity_and_uniform():
    rng = np.random.default_rng(2)
    f = random_maps(rng, 3)
    mapping, _ = kl_assign(f, f.copy())
    assert mapping == {1: 1, 2: 2, 3: 3}
    assert np.allclose(np.diag(kl_matrix(f, f)), 0.0, atol=1e-12)
    uniform = np.full((2,) + f.shape[1:], 1.0 / f[0].size)
    mapping, labels = kl_assign(f, uniform)
    assert set(mapping.values()) == {1} and (labels == 1).all()


def test_kl_assign_cluster_permutation():
    rng = np.random.default_rng(3)
    f, c = random_maps(rng, 6), random_maps(rng, 3)
    mapping, labels = kl_assign(f, c)
    perm = rng.permutation(6)
    pm, plabels = kl_assign(f[perm], c)
    assert all(pm[i + 1] == mapping[perm[i] + 1] for i in range(6))
    assert np.array_equal(plabels, labels)


def test_attention_validation():
    rng = np.random.default_rng(4)
    f, c = random_maps(rng, 3), random_maps(rng, 2)
    AttentionMaps(f, c, ["a", "b"]).validate()
    with pytest.raises(PartError):
        AttentionMaps(c, f).validate()                 # K < N
    with pytest.raises(PartError):
        AttentionMaps(f * 2, c).validate()             # not normalized
    with pytest.raises(PartError):
        AttentionMaps(f, c, ["only"]).validate()
    with pytest.raises(PartError):
        normalize_spatial(np.zeros((1, 2, 2)))


def test_masked_single_part_equals_tm_bitwise():
    rng = np.random.default_rng(5)
    a, b = unit(rng, (9, 9)), unit(rng, (9, 9))
    valid = rng.uniform(size=(9, 9)) > 0.3
    v1, g1 = masked_tactile_losses(a, [b], valid[None], valid)
    v0, g0 = loss_tm(a, b, valid)
    assert v1 == v0 and np.array_equal(g1, g0)


def test_masked_swapped_targets_cost_more():
    rng = np.random.default_rng(6)
    h, w = 12, 12
    bumps, ridges = unit(rng, (h, w)), unit(rng, (h, w))
    left = np.zeros((h, w), bool)
    left[:, :6] = True
    pred = np.where(left[..., None], bumps, ridges)
    valid = np.ones((h, w), bool)
    masks = np.stack([left, ~left])
    matched, _ = masked_tactile_losses(pred, [bumps, ridges], masks, valid)
    swapped, _ = masked_tactile_losses(pred, [ridges, bumps], masks, valid)
    assert matched == pytest.approx(0.0, abs=1e-12) and swapped > matched


def test_masked_empty_part_and_errors():
    rng = np.random.default_rng(7)
    a, b = unit(rng, (5, 5)), unit(rng, (5, 5))
    valid = np.ones((5, 5), bool)
    one, _ = masked_tactile_losses(a, [b], valid[None], valid)
    two, _ = masked_tactile_losses(a, [b, -b], np.stack([valid, ~valid]), valid)
    assert one == two
    with pytest.raises(PartError):
        masked_tactile_losses(a, [b, b], np.stack([valid, valid]), valid)
    with pytest.raises(PartError):
        masked_tactile_losses(a, [b], np.stack([valid, ~valid]), valid)
    with pytest.raises(LossError):
        masked_tactile_losses(a, [b], valid[None], ~valid)


def test_part_masks_are_disjoint_argmax():
    rng = np.random.default_rng(8)
    logits = rng.standard_normal((6, 6, 3))
    mask = rng.uniform(size=(6, 6)) > 0.3
    pm = part_masks(logits, mask)
    assert pm.shape == (3, 6, 6)
    assert np.array_equal(pm.sum(axis=0), mask.astype(int))
    for idx in zip(*np.nonzero(mask)):
        assert pm[(int(np.argmax(logits[idx])),) + idx]


def test_brute_force_agrees_with_itertools_enumeration():
    # the enumeration oracle also agrees with scoring every full assignment
    rng = np.random.default_rng(9)
    f, c = random_maps(rng, 3, 3, 3), random_maps(rng, 2, 3, 3)
    D = kl_matrix(f, c)
    best = min(itertools.product(range(2), repeat=3), key=lambda a: sum(D[k, a[k]] for k in range(3)))
    assert brute_force(f, c) == {k + 1: best[k] + 1 for k in range(3)}
