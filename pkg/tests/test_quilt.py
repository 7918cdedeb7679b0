import itertools

import numpy as np
import pytest
from scipy import ndimage

from touchtex import kernels
from touchtex.quilt import (QuiltError, QuiltParams, _Correlator, min_cut_seam,
                            quilt_height, quilt_height_with_seams, quilted_normal_uv,
                            seam_cost)
from touchtex.tactile import HeightMap, height_to_normals

from helpers import bump_texture


def brute_force_seam(cost):
    """Enumerate every 8-connected top-to-bottom path."""
    n_rows, n_cols = cost.shape
    best, best_path = np.inf, None
    steps = (-1, 0, 1)
    for start in range(n_cols):
        for moves in itertools.product(steps, repeat=n_rows - 1):
            path = [start]
            for m in moves:
                nxt = path[-1] + m
                if not 0 <= nxt < n_cols:
                    break
                path.append(nxt)
            else:
                c = sum(cost[r, p] for r, p in enumerate(path))
                if c < best:
                    best, best_path = c, path
    return best, best_path


def sinusoid_exemplar(side=128, period=(17.0, 23.0)):
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    return HeightMap(0.05 * np.sin(2 * np.pi * xx / period[0])
                     + 0.03 * np.sin(2 * np.pi * (xx + 2 * yy) / period[1]))


@pytest.mark.parametrize("backend", kernels.available_backends())
def test_seam_trivial_cases(backend):
    k = kernels.get_backend(backend)
    assert list(k.min_cut_seam(np.zeros((4, 5)))) == [0, 0, 0, 0]
    grid = np.ones((6, 5))
    grid[:, 3] = 0
    assert list(k.min_cut_seam(grid)) == [3] * 6
    assert list(k.min_cut_seam(np.array([[2.0]]))) == [0]


@pytest.mark.parametrize("backend", kernels.available_backends())
def test_seam_matches_brute_force(backend):
    k = kernels.get_backend(backend)
    rng = np.random.default_rng(11)
    for _ in range(1000):
        rows = int(rng.integers(1, 9))
        cols = int(rng.integers(1, 7))
        cost = rng.random((rows, cols))
        path = k.min_cut_seam(cost)
        assert np.all(np.abs(np.diff(path)) <= 1)
        best, best_path = brute_force_seam(cost)
        assert seam_cost(cost, path) == pytest.approx(best, abs=1e-12)
        assert list(path) == best_path


def test_correlator_matches_direct_masked_ssd():
    rng = np.random.default_rng(2)
    ex = HeightMap(rng.standard_normal((20, 24)), rng.random((20, 24)) > 0.1)
    B = 8
    tmpl = rng.standard_normal((B, B))
    tmask = np.zeros((B, B), dtype=bool)
    tmask[:, :3] = True
    tmask[:2, :] = True
    err, frac, _ = _Correlator(ex, B).errors(tmpl, tmask)
    for i in range(20 - B + 1):
        for j in range(24 - B + 1):
            m = tmask & ex.mask[i:i + B, j:j + B]
            d = (ex.data[i:i + B, j:j + B] - tmpl)[m]
            assert frac[i, j] == pytest.approx(m.sum() / tmask.sum())
            assert err[i, j] == pytest.approx(np.mean(d * d), abs=1e-9)


def test_constant_exemplar():
    out = quilt_height([HeightMap(np.full((80, 80), 0.25))],
                       QuiltParams(block_px=32, overlap_px=6, out_width=150, out_height=110))
    assert out.data.shape == (110, 150)
    assert np.all(out.data == 0.25)


def test_single_block_identity():
    ex = sinusoid_exemplar(64)
    out = quilt_height([ex], QuiltParams(block_px=64, overlap_px=10, out_width=64, out_height=64))
    np.testing.assert_array_equal(out.data, ex.data)


def test_seams_beat_straight_cuts():
    ex = sinusoid_exemplar(128)
    out, seams = quilt_height_with_seams(
        [ex], QuiltParams(block_px=64, overlap_px=10, out_width=512, out_height=512, seed=3))
    assert out.data.shape == (512, 512)
    assert len(seams) > 0
    for s in seams:
        assert s.cut_cost <= s.straight_cost + 1e-12


def test_copy_property():
    rng = np.random.default_rng(0)
    ex = HeightMap(ndimage.gaussian_filter(rng.standard_normal((96, 96)), 2.0))
    p = QuiltParams(block_px=32, overlap_px=8, out_width=200, out_height=200, seed=5)
    out = quilt_height([ex], p)
    values = set(ex.data.ravel().tolist())
    # every pixel is copied from some exemplar pixel, overlaps included
    assert all(v in values for v in out.data.ravel().tolist())


def test_determinism_and_seed_dependence():
    ex = sinusoid_exemplar(96)
    p = QuiltParams(block_px=32, overlap_px=6, out_width=160, out_height=160, seed=9)
    a = quilt_height([ex], p)
    b = quilt_height([ex], p)
    np.testing.assert_array_equal(a.data, b.data)
    c = quilt_height([ex], QuiltParams(block_px=32, overlap_px=6, out_width=160,
                                       out_height=160, seed=10))
    assert not np.array_equal(a.data, c.data)


def test_multiple_exemplars_pooled():
    a = HeightMap(np.full((40, 40), 1.0))
    b = HeightMap(np.full((40, 40), 2.0))
    out = quilt_height([a, b], QuiltParams(block_px=40, overlap_px=5, out_width=40,
                                           out_height=40, seed=0))
    assert out.data[0, 0] in (1.0, 2.0)
    picks = {quilt_height([a, b], QuiltParams(block_px=40, overlap_px=5, out_width=40,
                                              out_height=40, seed=s)).data[0, 0]
             for s in range(20)}
    assert picks == {1.0, 2.0}


def test_param_errors():
    ex = sinusoid_exemplar(32)
    with pytest.raises(QuiltError):
        quilt_height([ex], QuiltParams(block_px=64, overlap_px=10))
    with pytest.raises(QuiltError):
        quilt_height([ex], QuiltParams(block_px=16, overlap_px=16))
    with pytest.raises(QuiltError):
        quilt_height([], QuiltParams())
    with pytest.raises(QuiltError):
        quilt_height([ex, HeightMap(ex.data, pitch_mm=0.1)], QuiltParams(block_px=16, overlap_px=4))


def test_quilted_normals_flat():
    out = quilted_normal_uv([HeightMap(np.zeros((64, 64)))],
                            QuiltParams(block_px=32, overlap_px=6, out_width=100, out_height=100))
    np.testing.assert_array_equal(out.data, np.broadcast_to([0.0, 0.0, 1.0], (100, 100, 3)))


def mean_deviation_deg(n):
    return np.degrees(np.arccos(np.clip(n.data[..., 2], -1, 1))).mean()


def test_quilted_normals_keep_statistics():
    rng = np.random.default_rng(4)
    ex = bump_texture(rng)
    p = QuiltParams(block_px=48, overlap_px=8, out_width=320, out_height=320, seed=1)
    out = quilted_normal_uv([ex], p)
    ref = mean_deviation_deg(height_to_normals(ex))
    assert abs(mean_deviation_deg(out) - ref) < 0.2 * ref
    again = quilted_normal_uv([ex], p)
    np.testing.assert_array_equal(out.data, again.data)
