"""Synthetic fixtures: bump-texture sensor frames and a colored sphere."""
import numpy as np

from .mesh import icosphere, project_vertex_albedo
from .quilt import QuiltParams, quilted_normal_uv
from .tactile import DEFAULT_PITCH_MM, SENSOR_SHAPE, HeightMap, height_to_normals


def bump_height(rng, shape=SENSOR_SHAPE, density=0.004, amplitude=0.12, sigma_px=(3.0, 6.0),
                pitch_mm=DEFAULT_PITCH_MM):
    """Stationary field of randomly placed Gaussian bumps, heights in mm, zero mean."""
    rows, cols = shape
    yy, xx = np.mgrid[0:rows, 0:cols].astype(np.float64)
    h = np.zeros(shape)
    for _ in range(int(density * rows * cols)):
        r0, c0 = rng.uniform(-10, rows + 10), rng.uniform(-10, cols + 10)
        s = rng.uniform(*sigma_px)
        h += amplitude * np.exp(-((xx - c0) ** 2 + (yy - r0) ** 2) / (2 * s * s))
    return HeightMap(h - h.mean(), None, pitch_mm)


def ridge_height(shape=SENSOR_SHAPE, period_px=14.0, amplitude=0.02, angle_deg=30.0,
                 pitch_mm=DEFAULT_PITCH_MM):
    """Parallel sinusoidal ridges, a texture clearly different from bumps."""
    rows, cols = shape
    yy, xx = np.mgrid[0:rows, 0:cols].astype(np.float64)
    a = np.radians(angle_deg)
    h = amplitude * np.sin(2 * np.pi * (xx * np.cos(a) + yy * np.sin(a)) / period_px)
    return HeightMap(h, None, pitch_mm)


def sensor_frame(height, contact_bump=0.0):
    """Encode a height map as an 8-bit-free float normal frame (what the sensor reports)."""
    h = height.data
    if contact_bump:
        rows, cols = h.shape
        yy, xx = np.mgrid[0:rows, 0:cols].astype(np.float64)
        r2 = ((yy - rows / 2) / (rows / 2)) ** 2 + ((xx - cols / 2) / (cols / 2)) ** 2
        h = h + contact_bump * np.clip(1 - r2, 0, None)
    return height_to_normals(HeightMap(h, height.mask, height.pitch_mm)).data


def sphere_colors(v):
    """Smooth, saturated-enough vertex colors from position."""
    return np.clip(0.5 + 0.35 * np.stack([v[:, 0], v[:, 1] * v[:, 2] + 0.2 * v[:, 1],
                                          np.sin(2.0 * v[:, 2] + v[:, 0])], axis=1), 0, 1)


def sphere_fixture(subdivisions=4, albedo_resolution=512):
    """Colored icosphere and its projected albedo UV map."""
    mesh = icosphere(subdivisions, colors=sphere_colors)
    albedo, _ = project_vertex_albedo(mesh, albedo_resolution)
    return mesh, albedo


def quilted_tactile_uv(height, resolution=1024, seed=0, block_px=64, overlap_px=10):
    params = QuiltParams(block_px=block_px, overlap_px=overlap_px, out_width=resolution,
                         out_height=resolution, seed=seed)
    return quilted_normal_uv([height], params).data
