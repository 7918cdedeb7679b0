"""Tactile patch preprocessing: normals -> heights -> high-pass -> crop -> normals.

Axis convention: arrays are indexed ``[row, col]`` with row 0 at the top.
The x axis runs along columns (right) and the y axis runs *up* the image,
so ``dh/dy = -dh/drow``. Normal and gradient images use the same frame,
which is also the tangent frame of a UV map with v pointing up.
"""
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import fft, ndimage

DEFAULT_PITCH_MM = 0.085
SENSOR_SHAPE = (240, 320)
SENSOR_SIZE_MM = (21.0, 25.0)
MIN_NORMAL_Z = 0.05
CONTACT_K = 3.0
MIN_CROP = 32


class TactileError(ValueError):
    pass


def _full_mask(shape):
    return np.ones(shape, dtype=bool)


@dataclass
class NormalMap:
    data: np.ndarray  # (H, W, 3)
    mask: np.ndarray = None
    pitch_mm: float = DEFAULT_PITCH_MM

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.mask is None:
            self.mask = _full_mask(self.data.shape[:2])
        if not self.pitch_mm > 0:
            raise TactileError("pitch_mm must be positive")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass
class HeightMap:
    data: np.ndarray  # (H, W) millimeters
    mask: np.ndarray = None
    pitch_mm: float = DEFAULT_PITCH_MM

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.mask is None:
            self.mask = _full_mask(self.data.shape)
        if not self.pitch_mm > 0:
            raise TactileError("pitch_mm must be positive")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass
class GradientField:
    gx: np.ndarray
    gy: np.ndarray
    mask: np.ndarray = field(default=None)
    pitch_mm: float = DEFAULT_PITCH_MM

    def __post_init__(self):
        self.gx = np.asarray(self.gx, dtype=np.float64)
        self.gy = np.asarray(self.gy, dtype=np.float64)
        if self.mask is None:
            self.mask = _full_mask(self.gx.shape)


def decode_normal_image(image, mask=None, pitch_mm=DEFAULT_PITCH_MM):
    """Decode an 8/16-bit RGB normal image with ``n = 2 v / v_max - 1``.

    Pixels within one code value of the horizon (``n_z <= 2 / v_max``) are
    marked invalid, since their orientation cannot be distinguished from a
    tangent vector.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise TactileError(f"normal image needs 3 channels, got shape {image.shape}")
    if image.dtype == np.uint16:
        vmax = 65535.0
    elif image.dtype == np.uint8:
        vmax = 255.0
    else:
        raise TactileError(f"normal image must be 8- or 16-bit, got {image.dtype}")
    n = 2.0 * image.astype(np.float64) / vmax - 1.0
    length = np.linalg.norm(n, axis=2)
    # within one code value of the origin on every channel
    zero = length < 2.0 * np.sqrt(3.0) / vmax
    if zero.mean() > 0.5:
        raise TactileError("more than half the pixels decode to zero-length vectors; "
                           "not a normal image")
    safe = np.where(zero, 1.0, length)
    n = n / safe[..., None]
    valid = ~zero & (n[..., 2] > 2.0 / vmax)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    n[~valid] = (0.0, 0.0, 1.0)
    return NormalMap(n, valid, pitch_mm)


def normals_to_gradients(n):
    """Slopes ``gx = -n_x / n_z``, ``gy = -n_y / n_z``; grazing normals are masked."""
    nz = n.data[..., 2]
    mask = n.mask & (nz >= MIN_NORMAL_Z)
    safe = np.where(mask, nz, 1.0)
    gx = np.where(mask, -n.data[..., 0] / safe, 0.0)
    gy = np.where(mask, -n.data[..., 1] / safe, 0.0)
    return GradientField(gx, gy, mask, n.pitch_mm)


def _neumann_eigenvalues(n):
    return 2.0 - 2.0 * np.cos(np.pi * np.arange(n) / n)


def poisson_integrate(g):
    """Least-squares height from slopes with Neumann boundary, via DCT.

    Minimizes the sum over neighboring pixel pairs of
    ``(h_b - h_a - pitch * (g_a + g_b) / 2)^2``. The normal equations are the
    grid graph Laplacian, which DCT-II diagonalizes exactly.
    """
    rows, cols = g.gx.shape
    if rows < 4 or cols < 4:
        raise TactileError(f"grid {rows}x{cols} too small to integrate (need >= 4x4)")
    gx = np.where(g.mask, g.gx, 0.0)
    gy = np.where(g.mask, g.gy, 0.0)
    p = g.pitch_mm
    # edge targets: x along columns, y up (so along rows the step is -gy)
    ex = p * 0.5 * (gx[:, 1:] + gx[:, :-1])
    ey = -p * 0.5 * (gy[1:, :] + gy[:-1, :])
    # divergence D^T e with D the forward-difference operator
    rhs = np.zeros((rows, cols))
    rhs[:, 1:] += ex
    rhs[:, :-1] -= ex
    rhs[1:, :] += ey
    rhs[:-1, :] -= ey
    coef = fft.dctn(rhs, type=2, norm="ortho")
    denom = _neumann_eigenvalues(rows)[:, None] + _neumann_eigenvalues(cols)[None, :]
    denom[0, 0] = 1.0
    coef /= denom
    coef[0, 0] = 0.0
    h = fft.idctn(coef, type=2, norm="ortho")
    h -= h.mean()
    return HeightMap(h, np.ones((rows, cols), dtype=bool), p)


def high_pass(h, sigma_mm=1.0):
    """Subtract a reflected-boundary Gaussian blur, then re-center to zero mean."""
    if not sigma_mm > 0:
        raise TactileError("sigma_mm must be positive")
    sigma_px = sigma_mm / h.pitch_mm
    low = ndimage.gaussian_filter(h.data, sigma_px, mode="reflect")
    out = h.data - low
    if h.mask.any():
        out = out - out[h.mask].mean()
    return HeightMap(out, h.mask.copy(), h.pitch_mm)


def contact_mask(h, k=CONTACT_K):
    vals = h.data[h.mask]
    med = np.median(vals)
    mad = np.median(np.abs(vals - med))
    return h.mask & (np.abs(h.data) > k * mad)


def contact_crop(h, k=CONTACT_K, min_size=MIN_CROP):
    """Largest centered square inside the bounding box of the contact region."""
    if not h.mask.any():
        raise TactileError("height map has no valid pixels")
    contact = contact_mask(h, k)
    if not contact.any():
        raise TactileError("no contact region found (flat gel?)")
    rows = np.flatnonzero(contact.any(axis=1))
    cols = np.flatnonzero(contact.any(axis=0))
    r0, r1 = rows[0], rows[-1] + 1
    c0, c1 = cols[0], cols[-1] + 1
    side = min(r1 - r0, c1 - c0)
    cr2, cc2 = r0 + r1, c0 + c1  # twice the box center
    while side >= min_size:
        top = (cr2 - side) // 2
        left = (cc2 - side) // 2
        if h.mask[top:top + side, left:left + side].all():
            break
        side -= 1
    if side < min_size:
        raise TactileError(f"contact region smaller than {min_size}x{min_size} pixels")
    sl = (slice(top, top + side), slice(left, left + side))
    return HeightMap(h.data[sl].copy(), np.ones((side, side), dtype=bool), h.pitch_mm)


def height_gradients(h):
    """Slopes (d/dx, d/dy) with central differences inside, one-sided at borders."""
    d_row, d_col = np.gradient(h.data, h.pitch_mm)
    return d_col, -d_row


def height_to_normals(h):
    gx, gy = height_gradients(h)
    n = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return NormalMap(n, h.mask.copy(), h.pitch_mm)


def ingest(n, hp_sigma_mm=1.0, k=CONTACT_K):
    """Full preprocessing chain; returns (cropped height, cropped normals)."""
    g = normals_to_gradients(n)
    h = poisson_integrate(g)
    h = replace(h, mask=g.mask.copy())
    h = high_pass(h, hp_sigma_mm)
    crop = contact_crop(h, k)
    return crop, height_to_normals(crop)
