import numpy as np

from touchtex.tactile import HeightMap, NormalMap, high_pass


def bump_field(rng, shape=(240, 320), n_bumps=6, amplitude=0.3, sigma_px=(8.0, 25.0)):
    """Gaussian-bump mixture with analytic slopes; returns (h, dh/dx, dh/dy) in mm."""
    rows, cols = shape
    pitch = 0.085
    yy, xx = np.mgrid[0:rows, 0:cols].astype(np.float64)
    h = np.zeros(shape)
    hx = np.zeros(shape)
    hy = np.zeros(shape)
    amps = rng.uniform(-1.0, 1.0, n_bumps)
    amps *= amplitude / max(np.abs(amps).max(), 1e-9)
    for a in amps:
        r0 = rng.uniform(0.15, 0.85) * rows
        c0 = rng.uniform(0.15, 0.85) * cols
        s = rng.uniform(*sigma_px)
        g = a * np.exp(-((xx - c0) ** 2 + (yy - r0) ** 2) / (2 * s * s))
        h += g
        hx += g * (-(xx - c0) / (s * s)) / pitch
        # y points up, i.e. against the row index
        hy += g * ((yy - r0) / (s * s)) / pitch
    return h, hx, hy


def normals_from_slopes(hx, hy, pitch=0.085):
    n = np.stack([-hx, -hy, np.ones_like(hx)], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return NormalMap(n, None, pitch)


def angular_error_deg(a, b):
    dot = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(dot))


def sinusoid_height(shape, period, amplitude=0.2):
    rows, cols = shape
    yy, xx = np.mgrid[0:rows, 0:cols].astype(np.float64)
    return HeightMap(amplitude * np.sin(2 * np.pi * xx / period) * np.sin(2 * np.pi * yy / period))


def bump_texture(rng, shape=(160, 160), density=0.004, amplitude=0.04, sigma_px=(3.0, 6.0),
                 pitch=0.085):
    """Stationary texture of randomly placed Gaussian bumps (heights in mm)."""
    rows, cols = shape
    n = int(density * rows * cols)
    h = np.zeros(shape)
    yy, xx = np.mgrid[0:rows, 0:cols].astype(np.float64)
    for _ in range(n):
        r0, c0 = rng.uniform(-10, rows + 10), rng.uniform(-10, cols + 10)
        s = rng.uniform(*sigma_px)
        h += amplitude * np.exp(-((xx - c0) ** 2 + (yy - r0) ** 2) / (2 * s * s))
    return HeightMap(h - h.mean(), None, pitch)


def sinusoid_gain(period_px, sigma_px, shape=(240, 320)):
    xx = np.tile(np.arange(shape[1], dtype=np.float64), (shape[0], 1))
    h = HeightMap(np.sin(2 * np.pi * xx / period_px))
    out = high_pass(h, sigma_px * h.pitch_mm).data
    margin = int(4 * sigma_px) + 1
    x = xx[:, margin:-margin].ravel()
    y = out[:, margin:-margin].ravel()
    basis = np.stack([np.sin(2 * np.pi * x / period_px), np.cos(2 * np.pi * x / period_px),
                      np.ones_like(x)], axis=1)
    coef = np.linalg.lstsq(basis, y, rcond=None)[0]
    return np.hypot(coef[0], coef[1])


def analytic_high_pass_gain(period_px, sigma_px):
    f = 1.0 / period_px
    return 1.0 - np.exp(-2 * np.pi**2 * sigma_px**2 * f**2)
