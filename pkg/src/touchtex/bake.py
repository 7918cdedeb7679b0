"""Export a trained field to UV maps and render turntables."""
import os
from dataclasses import dataclass

import numpy as np

from .io import write_color_png, write_label_png, write_mask_png, write_normal_png
from .mesh import GUTTER_PX, MeshError, dilate_gutters, dilate_labels, uv_rasterize
from .raster import UVMaps, orbit_camera, render

TURNTABLE_ELEVATION_DEG = 20.0
BAKE_CHUNK = 1 << 16


@dataclass
class BakeResult:
    albedo_uv: np.ndarray            # (R, R, 3) in [0, 1]
    tactile_normal_uv: np.ndarray    # (R, R, 3) unit tangent-space normals
    label_uv: np.ndarray             # (R, R) ints, 0 outside charts, or None
    coverage: np.ndarray             # (R, R) texels inside a chart
    resolution: int

    def maps(self):
        return UVMaps(albedo=self.albedo_uv, normal=self.tactile_normal_uv)

    def save(self, out_dir):
        """Write albedo (8-bit), tactile normal (16-bit), labels and coverage PNGs."""
        paths = {"albedo": os.path.join(out_dir, "albedo.png"),
                 "tactile_normal": os.path.join(out_dir, "tactile_normal.png"),
                 "coverage": os.path.join(out_dir, "coverage.png")}
        write_color_png(paths["albedo"], self.albedo_uv)
        write_normal_png(paths["tactile_normal"], self.tactile_normal_uv)
        write_mask_png(paths["coverage"], self.coverage)
        if self.label_uv is not None:
            paths["labels"] = os.path.join(out_dir, "labels.png")
            write_label_png(paths["labels"], self.label_uv)
        return paths


def texel_points(mesh, resolution):
    """Surface point behind every covered texel: (points (P, 3), coverage, face, bary)."""
    if mesh.uvs is None:
        raise MeshError("mesh has no UVs to bake into")
    face, bary = uv_rasterize(mesh, resolution)
    cov = face >= 0
    corners = mesh.positions[mesh.triangles[face[cov]]]
    points = np.einsum("nk,nkc->nc", bary[cov], corners)
    return points, cov, face, bary


def bake(field, mesh, resolution=1024, gutter=GUTTER_PX):
    points, cov, _, _ = texel_points(mesh, resolution)
    albedo = np.empty((len(points), 3))
    normal = np.empty((len(points), 3))
    labels = np.empty(len(points), dtype=np.int64) if field.n_labels else None
    for s in range(0, len(points), BAKE_CHUNK):
        sample = field(points[s:s + BAKE_CHUNK])
        albedo[s:s + BAKE_CHUNK] = sample.albedo
        normal[s:s + BAKE_CHUNK] = sample.normal
        if labels is not None:
            labels[s:s + BAKE_CHUNK] = np.argmax(sample.label_logits, axis=1) + 1

    shape = (resolution, resolution)
    albedo_uv = np.zeros(shape + (3,))
    albedo_uv[cov] = albedo
    albedo_uv, _ = dilate_gutters(albedo_uv, cov, gutter)
    normal_uv = np.zeros(shape + (3,))
    normal_uv[cov] = normal
    normal_uv, filled = dilate_gutters(normal_uv, cov, gutter)
    # averaging neighbors shortens vectors in the gutter; restore unit length
    norm = np.linalg.norm(normal_uv, axis=-1, keepdims=True)
    normal_uv = np.where(filled[..., None] & (norm > 0), normal_uv / np.maximum(norm, 1e-12), 0.0)
    label_uv = None
    if labels is not None:
        label_uv = np.zeros(shape, dtype=np.int64)
        label_uv[cov] = labels
        label_uv = dilate_labels(label_uv, cov, gutter)
    return BakeResult(albedo_uv, normal_uv, label_uv, cov, resolution)


def turntable(mesh, source, frames=8, elevation_deg=TURNTABLE_ELEVATION_DEG, resolution=512,
              out_dir=None, light=None):
    """Azimuth sweep at fixed elevation; optionally writes numbered color/albedo/normal PNGs."""
    if frames < 1:
        raise ValueError("frames must be >= 1")
    renders = []
    for i in range(frames):
        cam = orbit_camera(360.0 * i / frames, elevation_deg, resolution=resolution, index=i)
        rs = render(mesh, cam, source, light=light)
        renders.append(rs)
        if out_dir is not None:
            write_color_png(os.path.join(out_dir, f"color_{i:03d}.png"), rs.color, rs.mask)
            write_color_png(os.path.join(out_dir, f"albedo_{i:03d}.png"), rs.albedo, rs.mask)
            write_color_png(os.path.join(out_dir, f"normal_{i:03d}.png"), (rs.normal + 1) / 2,
                            rs.mask)
    return renders


def bilinear_support(coverage, uv):
    """True where all four texels read by a bilinear lookup at ``uv`` lie inside charts."""
    H, W = coverage.shape
    x0 = np.floor(uv[:, 0] * W - 0.5).astype(np.int64)
    y0 = np.floor((1.0 - uv[:, 1]) * H - 0.5).astype(np.int64)
    ok = np.ones(len(uv), dtype=bool)
    for dy in (0, 1):
        for dx in (0, 1):
            ys = np.clip(y0 + dy, 0, H - 1)
            ok &= coverage[ys, np.mod(x0 + dx, W)]
    return ok


def psnr(a, b, peak=1.0):
    mse = float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))
    return float("inf") if mse == 0 else 10.0 * np.log10(peak * peak / mse)


def bake_consistency(field, mesh, baked, frames=8, resolution=256):
    """PSNR of field-path vs baked-map renders per view, over pixels whose lookups avoid seams."""
    out = []
    maps = baked.maps()
    for i in range(frames):
        cam = orbit_camera(360.0 * i / frames, TURNTABLE_ELEVATION_DEG, resolution=resolution,
                           index=i)
        a = render(mesh, cam, field)
        b = render(mesh, cam, maps, g=a.gbuffer)
        sel = a.mask.copy()
        sel[a.mask] = bilinear_support(baked.coverage, a.gbuffer.uv[a.mask])
        out.append(psnr(a.color[sel], b.color[sel]))
    return out
