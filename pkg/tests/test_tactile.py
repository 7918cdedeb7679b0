import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from touchtex import tactile
from touchtex.io import encode_normals
from touchtex.tactile import (GradientField, HeightMap, NormalMap, TactileError,
                              contact_crop, decode_normal_image, height_to_normals,
                              high_pass, normals_to_gradients, poisson_integrate)

from helpers import (analytic_high_pass_gain, angular_error_deg, bump_field, normals_from_slopes,
                     sinusoid_gain)


def test_decode_identity_16bit():
    img = np.full((4, 4, 3), (32768, 32768, 65535), dtype=np.uint16)
    n = decode_normal_image(img)
    assert n.mask.all()
    np.testing.assert_allclose(n.data, np.broadcast_to([0, 0, 1], n.data.shape), atol=1e-4)


def test_decode_horizon_pixel_masked():
    img = np.full((4, 4, 3), 128, dtype=np.uint8)
    img[..., 2] = 255
    img[1, 2] = (255, 128, 128)
    n = decode_normal_image(img)
    assert not n.mask[1, 2]
    assert n.mask.sum() == 15


def test_decode_round_trip_16bit():
    rng = np.random.default_rng(1)
    v = rng.standard_normal((100_000, 3))
    v[:, 2] = np.abs(v[:, 2])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v = v[v[:, 2] > 0.01][None]
    n = decode_normal_image(encode_normals(v, 16))
    assert n.mask.all()
    assert angular_error_deg(n.data, v).max() < 0.5


def test_decode_errors():
    with pytest.raises(TactileError):
        decode_normal_image(np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(TactileError):
        decode_normal_image(np.full((4, 4, 3), 128, dtype=np.uint8))


def test_gradients_flat_and_tilted():
    flat = NormalMap(np.broadcast_to([0.0, 0.0, 1.0], (5, 5, 3)).copy())
    g = normals_to_gradients(flat)
    assert np.all(g.gx == 0) and np.all(g.gy == 0)
    tilt = np.array([-0.1, 0.0, 1.0]) / np.hypot(0.1, 1.0)
    g = normals_to_gradients(NormalMap(np.broadcast_to(tilt, (5, 5, 3)).copy()))
    np.testing.assert_allclose(g.gx, 0.1, rtol=1e-12)
    np.testing.assert_allclose(g.gy, 0.0, atol=1e-15)


def test_gradients_mask_grazing():
    data = np.broadcast_to([0.0, 0.0, 1.0], (3, 3, 3)).copy()
    data[1, 1] = (np.sqrt(1 - 0.01**2), 0.0, 0.01)
    g = normals_to_gradients(NormalMap(data))
    assert not g.mask[1, 1] and g.mask.sum() == 8


def test_gradients_match_analytic_sinusoid():
    yy, xx = np.mgrid[0:64, 0:64].astype(np.float64)
    hx = 0.3 * np.cos(2 * np.pi * xx / 20) * np.sin(2 * np.pi * yy / 25)
    hy = -0.2 * np.sin(2 * np.pi * xx / 20) * np.cos(2 * np.pi * yy / 25)
    g = normals_to_gradients(normals_from_slopes(hx, hy))
    np.testing.assert_allclose(g.gx, hx, atol=1e-6)
    np.testing.assert_allclose(g.gy, hy, atol=1e-6)


def dense_lstsq_heights(gx, gy, pitch):
    """Independent oracle: assemble the edge-difference system and solve it densely."""
    rows, cols = gx.shape
    idx = np.arange(rows * cols).reshape(rows, cols)
    eqs, rhs = [], []
    for r in range(rows):
        for c in range(cols - 1):
            row = np.zeros(rows * cols)
            row[idx[r, c + 1]] = 1
            row[idx[r, c]] = -1
            eqs.append(row)
            rhs.append(pitch * 0.5 * (gx[r, c] + gx[r, c + 1]))
    for r in range(rows - 1):
        for c in range(cols):
            row = np.zeros(rows * cols)
            # y points up: moving down a row changes height by -pitch * gy
            row[idx[r + 1, c]] = 1
            row[idx[r, c]] = -1
            eqs.append(row)
            rhs.append(-pitch * 0.5 * (gy[r, c] + gy[r + 1, c]))
    sol = np.linalg.lstsq(np.array(eqs), np.array(rhs), rcond=None)[0]
    sol -= sol.mean()
    return sol.reshape(rows, cols)


def test_poisson_zero():
    h = poisson_integrate(GradientField(np.zeros((8, 8)), np.zeros((8, 8))))
    assert np.all(np.abs(h.data) < 1e-15)


def test_poisson_ramp():
    g = GradientField(np.full((64, 64), 0.1), np.zeros((64, 64)), pitch_mm=0.085)
    h = poisson_integrate(g)
    x = np.arange(64.0)
    expected = 0.1 * 0.085 * (x - x.mean())
    np.testing.assert_allclose(h.data, np.broadcast_to(expected, (64, 64)), atol=1e-4)
    assert abs(h.data.mean()) < 1e-6


def test_poisson_matches_dense_lstsq():
    rng = np.random.default_rng(3)
    gx = rng.standard_normal((16, 16)) * 0.2
    gy = rng.standard_normal((16, 16)) * 0.2
    h = poisson_integrate(GradientField(gx, gy, pitch_mm=0.085))
    np.testing.assert_allclose(h.data, dense_lstsq_heights(gx, gy, 0.085), atol=1e-10)


def test_poisson_invalid_pixels_use_zero_slope():
    rng = np.random.default_rng(4)
    gx = rng.standard_normal((12, 12))
    gy = rng.standard_normal((12, 12))
    mask = rng.random((12, 12)) > 0.3
    h = poisson_integrate(GradientField(gx, gy, mask))
    ref = dense_lstsq_heights(np.where(mask, gx, 0), np.where(mask, gy, 0), 0.085)
    np.testing.assert_allclose(h.data, ref, atol=1e-10)


def test_poisson_sinusoid_round_trip():
    yy, xx = np.mgrid[0:64, 0:64].astype(np.float64)
    p = 0.085
    k = 2 * np.pi / 32
    h_true = 0.2 * np.sin(k * xx) * np.sin(k * yy)
    hx = 0.2 * k * np.cos(k * xx) * np.sin(k * yy) / p
    hy = -0.2 * k * np.sin(k * xx) * np.cos(k * yy) / p
    h = poisson_integrate(GradientField(hx, hy, pitch_mm=p))
    rmse = np.sqrt(np.mean((h.data - (h_true - h_true.mean())) ** 2))
    assert rmse < 0.01 * np.ptp(h_true)


def test_poisson_too_small():
    with pytest.raises(TactileError):
        poisson_integrate(GradientField(np.zeros((3, 8)), np.zeros((3, 8))))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-5, 5))
def test_poisson_gauge_invariance(seed, offset):
    # h and h + offset share one analytic slope field, so the integrated
    # output cannot depend on the offset
    rng = np.random.default_rng(seed)
    h, hx, hy = bump_field(rng, shape=(20, 24), n_bumps=3, sigma_px=(2.0, 5.0))
    g = normals_to_gradients(normals_from_slopes(hx, hy))
    a = poisson_integrate(g)
    b = poisson_integrate(g)
    np.testing.assert_array_equal(a.data, b.data)
    assert abs(a.data.mean()) < 1e-12
    # numerically differentiated heights agree up to rounding
    c = poisson_integrate(normals_to_gradients(height_to_normals(HeightMap(h))))
    d = poisson_integrate(normals_to_gradients(height_to_normals(HeightMap(h + offset))))
    np.testing.assert_allclose(c.data, d.data, atol=1e-9)


def test_high_pass_constant():
    out = high_pass(HeightMap(np.full((40, 50), 3.2)), 1.0)
    assert np.abs(out.data).max() < 1e-12


def separable_gaussian_oracle(img, sigma):
    """Reference blur: explicit sampled kernel, reflected padding, two 1-D passes."""
    radius = int(4.0 * sigma + 0.5)
    t = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    k /= k.sum()

    def blur_axis(a, axis):
        a = np.moveaxis(a, axis, -1)
        n = a.shape[-1]
        idx = np.arange(-radius, n + radius)
        # half-sample symmetric reflection (d c b a | a b c d | d c b a)
        period = 2 * n
        m = np.mod(idx, period)
        m = np.where(m >= n, period - 1 - m, m)
        padded = a[..., m]
        out = np.zeros_like(a)
        for j, kj in enumerate(k):
            out += kj * padded[..., j:j + n]
        return np.moveaxis(out, -1, axis)

    return blur_axis(blur_axis(img, 0), 1)


def test_high_pass_ramp_interior_small():
    # sigma small against the ramp extent: a linear function passes a
    # Gaussian blur unchanged away from the borders
    xx = np.tile(np.arange(200.0), (60, 1))
    h = HeightMap(0.01 * xx, pitch_mm=0.085)
    sigma_mm = 20 * 0.085  # 20 px, a tenth of the ramp extent
    out = high_pass(h, sigma_mm)
    interior = out.data[:, 80:120]
    assert np.abs(interior).max() < 0.05 * np.ptp(h.data)


def test_high_pass_matches_separable_oracle():
    rng = np.random.default_rng(5)
    h = HeightMap(ndimage.gaussian_filter(rng.standard_normal((50, 70)), 1.5))
    for sigma_px in (1.3, 4.0, 11.8):
        out = high_pass(h, sigma_px * h.pitch_mm)
        ref = h.data - separable_gaussian_oracle(h.data, sigma_px)
        ref -= ref.mean()
        np.testing.assert_allclose(out.data, ref, atol=1e-10)


def test_high_pass_wide_ramp_matches_oracle():
    # sigma ten times the ramp extent: the reflected ramp is averaged flat,
    # leaving the centered ramp itself
    xx = np.tile(np.arange(30.0), (20, 1))
    h = HeightMap(0.01 * xx)
    out = high_pass(h, 300 * h.pitch_mm)
    ref = h.data - separable_gaussian_oracle(h.data, 300.0)
    ref -= ref.mean()
    np.testing.assert_allclose(out.data, ref, atol=1e-9)


def test_high_pass_fine_sinusoid_preserved():
    sigma_px = 1.0 / 0.085
    xx = np.tile(np.arange(320.0), (240, 1))
    ramp_plus_sine = 0.05 * xx + 0.02 * np.sin(2 * np.pi * xx / 6.0)
    out = high_pass(HeightMap(ramp_plus_sine), 1.0).data
    margin = int(4 * sigma_px) + 1
    x = xx[:, margin:-margin].ravel()
    basis = np.stack([np.sin(2 * np.pi * x / 6.0), np.cos(2 * np.pi * x / 6.0),
                      np.ones_like(x)], axis=1)
    coef = np.linalg.lstsq(basis, out[:, margin:-margin].ravel(), rcond=None)[0]
    assert abs(np.hypot(coef[0], coef[1]) - 0.02) < 0.1 * 0.02


@pytest.mark.parametrize("period", [30.0, 45.0, 60.0, 80.0, 110.0])
def test_high_pass_transfer_function(period):
    sigma_px = 1.0 / 0.085
    measured = sinusoid_gain(period, sigma_px)
    expected = analytic_high_pass_gain(period, sigma_px)
    assert abs(measured - expected) < 0.1 * expected


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_high_pass_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    h1 = rng.standard_normal((24, 30))
    h2 = rng.standard_normal((24, 30))
    lhs = high_pass(HeightMap(a * h1 + b * h2), 0.5).data
    rhs = a * high_pass(HeightMap(h1), 0.5).data + b * high_pass(HeightMap(h2), 0.5).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_contact_crop_full_frame():
    rng = np.random.default_rng(6)
    h = HeightMap(rng.standard_normal((240, 320)))
    out = contact_crop(h)
    assert out.data.shape == (240, 240)
    np.testing.assert_array_equal(out.data, h.data[:, 40:280])
    assert out.mask.all() and out.pitch_mm == h.pitch_mm


def test_contact_crop_bump():
    yy, xx = np.mgrid[0:240, 0:320].astype(np.float64)
    r2 = ((xx - 160) ** 2 + (yy - 120) ** 2) / 40.0**2
    h = HeightMap(np.where(r2 < 1, 0.2 * (1 - r2) ** 2, 0.0))
    # the direct contact mask of this bump is the open disk of radius 40
    out = contact_crop(h)
    assert 72 <= out.data.shape[0] <= 88
    assert out.data.shape[0] == out.data.shape[1]


def test_contact_crop_flat_fails():
    with pytest.raises(TactileError):
        contact_crop(HeightMap(np.zeros((240, 320))))


def test_contact_crop_small_region_fails():
    h = np.zeros((240, 320))
    h[100:110, 100:110] = 1.0
    with pytest.raises(TactileError):
        contact_crop(HeightMap(h))


def test_height_to_normals_flat_and_ramp():
    n = height_to_normals(HeightMap(np.zeros((6, 7))))
    np.testing.assert_array_equal(n.data, np.broadcast_to([0.0, 0.0, 1.0], (6, 7, 3)))
    s = 0.0085 * 3
    xx = np.tile(np.arange(10.0), (8, 1))
    n = height_to_normals(HeightMap(s * xx * 0.085, pitch_mm=0.085))
    expected = np.array([-s, 0.0, 1.0]) / np.sqrt(1 + s * s)
    np.testing.assert_allclose(n.data, np.broadcast_to(expected, n.data.shape), atol=1e-12)


def test_full_round_trip_angular_error():
    rng = np.random.default_rng(7)
    for _ in range(3):
        h, hx, hy = bump_field(rng, shape=(120, 160), amplitude=0.1)
        n = normals_from_slopes(hx, hy)
        out = height_to_normals(poisson_integrate(normals_to_gradients(n)))
        assert angular_error_deg(out.data, n.data).mean() < 1.0


def test_pitch_preserved():
    h = HeightMap(np.random.default_rng(0).standard_normal((64, 64)), pitch_mm=0.1)
    assert high_pass(h, 1.0).pitch_mm == 0.1
    assert height_to_normals(h).pitch_mm == 0.1
    g = normals_to_gradients(height_to_normals(h))
    assert poisson_integrate(g).pitch_mm == 0.1
    assert contact_crop(h).pitch_mm == 0.1


def test_ingest_chain():
    rng = np.random.default_rng(8)
    h, hx, hy = bump_field(rng, n_bumps=40, amplitude=0.05, sigma_px=(3.0, 6.0))
    crop, normals = tactile.ingest(normals_from_slopes(hx, hy))
    assert crop.data.shape[0] == crop.data.shape[1] >= 32
    assert np.allclose(np.linalg.norm(normals.data, axis=-1), 1.0)
