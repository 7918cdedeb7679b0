"""Software rasterizer, camera samplers, normal compositing and diffuse shading.

Camera space follows the usual graphics convention: the camera looks down
its local ``-z`` axis with ``+y`` up. ``Camera.rotation`` rows are the
camera's right, up and back axes in world coordinates, so a world point
maps to ``rotation @ p + translation``. Pixel ``(row, col)`` samples the
image plane at its center, ``row`` growing downward.

Visual cameras orbit the origin: azimuth 0 and elevation 0 put the camera
at ``(0, 0, r)``; the position is
``r * (cos(el) sin(az), sin(el), cos(el) cos(az))``.
"""
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import kernels
from .field import TextureField

ORBIT_RADIUS = 2.4
VISUAL_FOV_DEG = 50.0
VISUAL_RESOLUTION = 512
ELEVATION_RANGE = (-30.0, 60.0)
TACTILE_DISTANCE = 0.2
TACTILE_RESOLUTION = 256
DEFAULT_TEXEL_SCALE = 2.0 / 1024
K_AMBIENT = 0.1
K_DIFFUSE = 0.9
NEAR = 1e-3


class CameraError(ValueError):
    pass


@dataclass
class Camera:
    kind: str                  # "perspective" or "orthographic"
    rotation: np.ndarray       # (3, 3) world -> camera
    translation: np.ndarray    # (3,)
    resolution: int
    fov_deg: float = None
    ortho_width: float = None
    index: int = 0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        R = self.rotation
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise CameraError("rotation must be orthonormal with det +1")
        if self.kind == "perspective":
            if not 10.0 < self.fov_deg < 120.0:
                raise CameraError(f"fov {self.fov_deg} outside (10, 120) degrees")
        elif self.kind == "orthographic":
            if not self.ortho_width > 0:
                raise CameraError("ortho_width must be > 0")
        else:
            raise CameraError(f"unknown camera kind {self.kind!r}")

    @property
    def position(self):
        return -self.rotation.T @ self.translation

    @property
    def forward(self):
        return -self.rotation[2]

    def to_camera(self, points):
        return points @ self.rotation.T + self.translation

    def project(self, points):
        """World points -> (pixel xy with x right / y down, view depth along forward)."""
        pc = self.to_camera(np.asarray(points, dtype=np.float64))
        depth = -pc[..., 2]
        if self.kind == "perspective":
            f = 1.0 / np.tan(np.radians(self.fov_deg) / 2)
            with np.errstate(divide="ignore", invalid="ignore"):
                ndc = f * pc[..., :2] / depth[..., None]
        else:
            ndc = pc[..., :2] / (self.ortho_width / 2)
        res = self.resolution
        xy = np.stack([(ndc[..., 0] + 1) * 0.5 * res, (1 - ndc[..., 1]) * 0.5 * res], axis=-1)
        return xy, depth

    def to_dict(self):
        return {"kind": self.kind, "rotation": self.rotation.tolist(),
                "translation": self.translation.tolist(), "resolution": self.resolution,
                "fov_deg": self.fov_deg, "ortho_width": self.ortho_width, "index": self.index}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def look_at(eye, target, up):
    """Rotation and translation of a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    back = eye - np.asarray(target, dtype=np.float64)
    back /= np.linalg.norm(back)
    right = np.cross(up, back)
    right /= np.linalg.norm(right)
    true_up = np.cross(back, right)
    R = np.stack([right, true_up, back])
    return R, -R @ eye


def orbit_camera(azimuth_deg, elevation_deg, radius=ORBIT_RADIUS, fov_deg=VISUAL_FOV_DEG,
                 resolution=VISUAL_RESOLUTION, index=0):
    az, el = np.radians(azimuth_deg), np.radians(elevation_deg)
    eye = radius * np.array([np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)])
    R, t = look_at(eye, np.zeros(3), np.array([0.0, 1.0, 0.0]))
    return Camera("perspective", R, t, resolution, fov_deg=fov_deg, index=index)


def sample_visual_camera(index, rng, resolution=VISUAL_RESOLUTION):
    az = rng.uniform(0.0, 360.0)
    el = rng.uniform(*ELEVATION_RANGE)
    return orbit_camera(az, el, resolution=resolution, index=index)


def tactile_camera_at(position, normal, tangent, texel_scale=DEFAULT_TEXEL_SCALE,
                      resolution=TACTILE_RESOLUTION, index=0):
    """Orthographic camera hovering over a surface point, image x along the tangent."""
    n = np.asarray(normal, dtype=np.float64)
    t = np.asarray(tangent, dtype=np.float64)
    b = np.cross(n, t)
    R = np.stack([t, b, n])
    eye = np.asarray(position, dtype=np.float64) + TACTILE_DISTANCE * n
    return Camera("orthographic", R, -R @ eye, resolution,
                  ortho_width=resolution * texel_scale, index=index)


def sample_tactile_camera(m, rng, texel_scale=DEFAULT_TEXEL_SCALE,
                          resolution=TACTILE_RESOLUTION, index=0):
    if not texel_scale > 0:
        raise CameraError("texel_scale must be > 0")
    v = int(rng.integers(m.n_vertices))
    return tactile_camera_at(m.positions[v], m.normals[v], m.tangents[v], texel_scale,
                             resolution, index)


# rasterization ----------------------------------------------------------

@dataclass
class GBuffer:
    mask: np.ndarray       # (H, W) bool
    tri_id: np.ndarray     # (H, W) int, -1 outside
    bary: np.ndarray       # (H, W, 3) perspective-correct
    depth: np.ndarray      # (H, W) view depth, inf outside
    position: np.ndarray   # (H, W, 3)
    normal: np.ndarray     # (H, W, 3) interpolated, renormalized
    tangent: np.ndarray    # (H, W, 3) interpolated, orthogonalized against normal
    uv: np.ndarray         # (H, W, 2)


def _unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


def rasterize(m, cam):
    res = cam.resolution
    xy, depth = cam.project(m.positions)
    fxy = xy[m.triangles]
    fd = depth[m.triangles]
    if cam.kind == "perspective":
        keep = np.all(fd > NEAR, axis=1)
        with np.errstate(divide="ignore"):
            key = -1.0 / fd
        key_min = -1.0 / NEAR
    else:
        keep = np.ones(len(fd), dtype=bool)
        key = fd
        key_min = 0.0
    ids = np.flatnonzero(keep)
    tri, bary, _ = kernels.rasterize_triangles(np.ascontiguousarray(fxy[ids]),
                                               np.ascontiguousarray(key[ids]), res, res, key_min)
    mask = tri >= 0
    tri_id = np.where(mask, ids[np.maximum(tri, 0)], -1)
    b = bary[mask]
    f = tri_id[mask]
    if cam.kind == "perspective" and len(f):
        b = b / fd[f]
        b /= b.sum(axis=1, keepdims=True)
    bary_full = np.zeros((res, res, 3))
    bary_full[mask] = b
    corners = m.triangles[f]

    def interp(attr):
        return np.einsum("pk,pkc->pc", b, attr[corners])

    position = np.zeros((res, res, 3))
    normal = np.zeros((res, res, 3))
    tangent = np.zeros((res, res, 3))
    uv = np.zeros((res, res, 2))
    dep = np.full((res, res), np.inf)
    position[mask] = interp(m.positions)
    n = _unit(interp(m.normals))
    t = interp(m.tangents)
    t = _unit(t - np.sum(t * n, axis=1, keepdims=True) * n)
    normal[mask] = n
    tangent[mask] = t
    uv[mask] = np.einsum("pk,pkc->pc", b, m.uvs[f])
    dep[mask] = np.sum(b * fd[f], axis=1) if cam.kind == "orthographic" \
        else 1.0 / np.sum(b / fd[f], axis=1)
    return GBuffer(mask, tri_id, bary_full, dep, position, normal, tangent, uv)


# shading ----------------------------------------------------------------

def composite_normal(n_b, t, n_t):
    """Rotate a tangent-space normal into world space with the frame [t, n_b x t, n_b]."""
    b = np.cross(n_b, t)
    return t * n_t[..., 0:1] + b * n_t[..., 1:2] + n_b * n_t[..., 2:3]


def shade_pixels(albedo, normal, position, light, k_a=K_AMBIENT, k_d=K_DIFFUSE):
    """Diffuse shading of flat pixel lists; returns (color, l, n.l)."""
    l = _unit(np.asarray(light, dtype=np.float64) - position)
    ndl = np.sum(normal * l, axis=-1, keepdims=True)
    color = albedo * (k_a + k_d * np.maximum(ndl, 0.0))
    return color, l, ndl


@dataclass
class UVMaps:
    """Texture maps sampled at the G-buffer UVs (rows top to bottom, v up)."""
    albedo: np.ndarray = None   # (R, R, 3)
    normal: np.ndarray = None   # (R, R, 3) tangent-space unit normals


VERTEX_COLORS = "vertex-colors"


def sample_bilinear(img, uv):
    """Bilinear lookup, repeating in u and clamping in v."""
    H, W = img.shape[:2]
    x = uv[:, 0] * W - 0.5
    y = (1.0 - uv[:, 1]) * H - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    xs = (np.mod(x0, W), np.mod(x0 + 1, W))
    ys = (np.clip(y0, 0, H - 1), np.clip(y0 + 1, 0, H - 1))
    return ((1 - fy) * ((1 - fx) * img[ys[0], xs[0]] + fx * img[ys[0], xs[1]])
            + fy * ((1 - fx) * img[ys[1], xs[0]] + fx * img[ys[1], xs[1]]))


@dataclass
class RenderSet:
    color: np.ndarray     # (H, W, 3)  I_C
    albedo: np.ndarray    # (H, W, 3)  I_A
    tactile: np.ndarray   # (H, W, 3)  I_T
    normal: np.ndarray    # (H, W, 3)  I_N
    mask: np.ndarray      # (H, W)
    gbuffer: GBuffer = None
    labels: np.ndarray = None  # (H, W, N) logits, field path only
    link: dict = dc_field(default=None, repr=False)


def _scatter(mask, values, channels):
    out = np.zeros(mask.shape + (channels,))
    out[mask] = values
    return out


def render(m, cam, source, light=None, g=None):
    """Render a mesh textured by a field, UV maps or its vertex colors.

    ``light`` defaults to a point light at the camera position. The field
    path keeps what ``render_backward`` needs to push image gradients into
    the field parameters.
    """
    g = g or rasterize(m, cam)
    mask = g.mask
    light = cam.position if light is None else np.asarray(light, dtype=np.float64)
    pos = g.position[mask]
    n_b = g.normal[mask]
    t = g.tangent[mask]
    cache = logits = None
    if isinstance(source, TextureField):
        sample, cache = source.forward(pos)
        albedo = sample.albedo.astype(np.float64)
        n_t = sample.normal.astype(np.float64)
        logits = sample.label_logits
    elif isinstance(source, UVMaps):
        uv = g.uv[mask]
        if source.albedo is not None:
            albedo = sample_bilinear(np.asarray(source.albedo, dtype=np.float64), uv)
        else:
            albedo = np.full((len(pos), 3), 0.5)
        if source.normal is not None:
            n_t = _unit(sample_bilinear(np.asarray(source.normal, dtype=np.float64), uv))
        else:
            n_t = np.tile([0.0, 0.0, 1.0], (len(pos), 1))
    elif isinstance(source, str) and source == VERTEX_COLORS:
        if m.vertex_colors is None:
            raise ValueError("mesh has no vertex colors")
        b = g.bary[mask]
        albedo = np.einsum("pk,pkc->pc", b, m.vertex_colors[m.triangles[g.tri_id[mask]]])
        n_t = np.tile([0.0, 0.0, 1.0], (len(pos), 1))
    else:
        raise TypeError(f"unsupported render source {type(source).__name__}")
    n = composite_normal(n_b, t, n_t)
    color, l, ndl = shade_pixels(albedo, n, pos, light)
    rs = RenderSet(_scatter(mask, color, 3), _scatter(mask, albedo, 3), _scatter(mask, n_t, 3),
                   _scatter(mask, n, 3), mask, g)
    if logits is not None:
        rs.labels = _scatter(mask, logits, logits.shape[1])
    if cache is not None:
        rs.link = {"field": source, "cache": cache, "albedo": albedo, "n_b": n_b, "t": t,
                   "l": l, "ndl": ndl}
    return rs


def render_backward(rs, d_color=None, d_albedo=None, d_tactile=None, d_normal=None,
                    d_labels=None):
    """Parameter gradient of the field given image-space gradients (H, W, C)."""
    if not rs.link:
        raise ValueError("render set was not produced by a field render")
    mask = rs.mask
    k = rs.link
    P = int(mask.sum())
    d_a = np.zeros((P, 3))
    d_n = np.zeros((P, 3))
    d_nt = np.zeros((P, 3))
    if d_color is not None:
        dc = d_color[mask]
        lit = (k["ndl"] > 0).astype(np.float64)
        d_a += dc * (K_AMBIENT + K_DIFFUSE * np.maximum(k["ndl"], 0.0))
        d_n += np.sum(dc * k["albedo"], axis=1, keepdims=True) * K_DIFFUSE * lit * k["l"]
    if d_albedo is not None:
        d_a += d_albedo[mask]
    if d_normal is not None:
        d_n += d_normal[mask]
    n_b, t = k["n_b"], k["t"]
    b = np.cross(n_b, t)
    d_nt += np.stack([np.sum(t * d_n, axis=1), np.sum(b * d_n, axis=1),
                      np.sum(n_b * d_n, axis=1)], axis=1)
    if d_tactile is not None:
        d_nt += d_tactile[mask]
    d_l = d_labels[mask] if d_labels is not None else None
    return k["field"].backward(k["cache"], d_a, d_nt, d_l)

