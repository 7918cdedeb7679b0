"""Triangle meshes: loading, normalization, vertex normals, tangent frames, UV rasterization.

UV convention: ``v`` points up, texel ``(row, col)`` of an ``R x R`` map has
its center at ``u = (col + 0.5) / R``, ``v = 1 - (row + 0.5) / R``. Texture
addressing repeats in ``u`` (and clamps in ``v``), so charts that wrap
around, like the equirectangular sphere seam, may carry ``u`` slightly
outside ``[0, 1]``.

The shading frame at a vertex is ``[t, n x t, n]``: right-handed by
construction, with ``t`` following increasing ``u``.
"""
import logging
import os
import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from . import kernels

log = logging.getLogger(__name__)

GUTTER_PX = 4


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    positions: np.ndarray      # (V, 3)
    triangles: np.ndarray      # (F, 3) int
    normals: np.ndarray        # (V, 3)
    tangents: np.ndarray       # (V, 3)
    uvs: np.ndarray            # (F, 3, 2) per-corner
    vertex_colors: np.ndarray = None  # (V, 3) in [0, 1]

    @property
    def n_vertices(self):
        return len(self.positions)

    @property
    def n_faces(self):
        return len(self.triangles)

    def corner_positions(self):
        return self.positions[self.triangles]


def _unit(v, axis=-1):
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


def normalize_positions(positions):
    """Center the bounding box at the origin and scale the longest half-extent to 1."""
    lo, hi = positions.min(axis=0), positions.max(axis=0)
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo).max()
    if not half > 0:
        raise MeshError("mesh has zero extent")
    if abs(half - 1.0) < 1e-12 and np.abs(center).max() < 1e-12:
        # already normalized; recomputing would only add rounding noise
        return positions.copy()
    out = (positions - center) / half
    return np.clip(out, -1.0, 1.0)


def face_areas(positions, triangles):
    p = positions[triangles]
    return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


def vertex_normals(positions, triangles):
    """Area-weighted average of face normals."""
    p = positions[triangles]
    fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])  # length = 2 * area
    acc = np.zeros_like(positions)
    for k in range(3):
        np.add.at(acc, triangles[:, k], fn)
    return _unit(acc)


def fallback_atlas(n_faces, margin=0.1):
    """Pack each triangle into its own square of a uniform grid."""
    g = int(np.ceil(np.sqrt(n_faces)))
    cell = 1.0 / g
    idx = np.arange(n_faces)
    col, row = idx % g, idx // g
    u0 = (col + margin) * cell
    v0 = (row + margin) * cell
    s = (1.0 - 2.0 * margin) * cell
    uv = np.empty((n_faces, 3, 2))
    uv[:, 0] = np.stack([u0, v0], axis=1)
    uv[:, 1] = np.stack([u0 + s, v0], axis=1)
    uv[:, 2] = np.stack([u0, v0 + s], axis=1)
    return uv


def fallback_axis(n):
    """Deterministic tangent for a normal: the world axis least aligned with it."""
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(n)))] = 1.0
    t = axis - np.dot(axis, n) * n
    return t / np.linalg.norm(t)


def compute_tangents(m):
    """Per-vertex tangents from UV derivatives, Gram-Schmidt against the normal."""
    p = m.positions[m.triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    duv1 = m.uvs[:, 1] - m.uvs[:, 0]
    duv2 = m.uvs[:, 2] - m.uvs[:, 0]
    det = duv1[:, 0] * duv2[:, 1] - duv2[:, 0] * duv1[:, 1]
    raw = e1 * duv2[:, 1:2] - e2 * duv1[:, 1:2]
    ok = np.abs(det) > 1e-14
    ft = np.zeros_like(raw)
    ft[ok] = raw[ok] / det[ok, None]
    ft = _unit(ft)
    area = face_areas(m.positions, m.triangles)
    acc = np.zeros_like(m.positions)
    for k in range(3):
        np.add.at(acc, m.triangles[:, k], ft * area[:, None])
    n = m.normals
    t = acc - np.sum(acc * n, axis=1, keepdims=True) * n
    length = np.linalg.norm(t, axis=1)
    ref = np.linalg.norm(acc, axis=1)
    t = t / np.where(length > 0, length, 1.0)[:, None]
    bad = ~(length > 1e-6 * np.maximum(ref, 1e-30)) | ~(length > 1e-12)
    for i in np.flatnonzero(bad):
        t[i] = fallback_axis(n[i])
    # one more pass so |n.t| is at rounding level
    t = _unit(t - np.sum(t * n, axis=1, keepdims=True) * n)
    return replace(m, tangents=t)


def build_mesh(positions, triangles, uvs=None, vertex_colors=None, normalize=True,
               normals=None):
    """Validate raw arrays and derive normals (unless given), UV fallback and tangents."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if len(triangles) == 0 or len(positions) == 0:
        raise MeshError("mesh has no faces")
    if triangles.min() < 0 or triangles.max() >= len(positions):
        raise MeshError("triangle index out of range")
    if normalize:
        positions = normalize_positions(positions)
    keep = face_areas(positions, triangles) > 1e-12
    if not keep.all():
        log.warning("dropping %d degenerate triangles", int((~keep).sum()))
        triangles = triangles[keep]
        if uvs is not None:
            uvs = np.asarray(uvs)[keep]
        if len(triangles) == 0:
            raise MeshError("mesh has no non-degenerate faces")
    if uvs is None:
        uvs = fallback_atlas(len(triangles))
    uvs = np.asarray(uvs, dtype=np.float64).reshape(-1, 3, 2)
    if vertex_colors is not None:
        vertex_colors = np.clip(np.asarray(vertex_colors, dtype=np.float64).reshape(-1, 3), 0, 1)
    if normals is None:
        normals = vertex_normals(positions, triangles)
    else:
        normals = _unit(np.asarray(normals, dtype=np.float64).reshape(-1, 3))
    m = Mesh(positions, triangles, normals, np.zeros_like(positions), uvs, vertex_colors)
    return compute_tangents(m)


def _parse_obj(path):
    verts, colors, tex = [], [], []
    faces, face_uv = [], []
    has_uv = True
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                vals = [float(x) for x in parts[1:]]
                verts.append(vals[:3])
                if len(vals) >= 6:
                    colors.append(vals[3:6])
            elif tag == "vt":
                tex.append([float(parts[1]), float(parts[2])])
            elif tag == "f":
                vi, ti = [], []
                for tok in parts[1:]:
                    fields = tok.split("/")
                    v = int(fields[0])
                    vi.append(v - 1 if v > 0 else len(verts) + v)
                    if len(fields) > 1 and fields[1]:
                        t = int(fields[1])
                        ti.append(t - 1 if t > 0 else len(tex) + t)
                if len(ti) != len(vi):
                    has_uv = False
                for k in range(1, len(vi) - 1):
                    faces.append([vi[0], vi[k], vi[k + 1]])
                    if len(ti) == len(vi):
                        face_uv.append([ti[0], ti[k], ti[k + 1]])
    uvs = None
    if has_uv and face_uv and len(face_uv) == len(faces):
        uvs = np.asarray(tex)[np.asarray(face_uv)]
    cols = np.asarray(colors) if colors and len(colors) == len(verts) else None
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64), uvs, cols


_PLY_TYPES = {"char": "b", "uchar": "B", "int8": "b", "uint8": "B", "short": "h",
              "ushort": "H", "int16": "h", "uint16": "H", "int": "i", "uint": "I",
              "int32": "i", "uint32": "I", "float": "f", "float32": "f", "double": "d",
              "float64": "d"}


def _parse_ply(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise MeshError(f"{path}: not a PLY file")
        elements = []
        fmt = None
        while True:
            line = fh.readline()
            if not line:
                raise MeshError(f"{path}: truncated PLY header")
            parts = line.decode("ascii").split()
            if not parts:
                continue
            if parts[0] == "format":
                fmt = parts[1]
            elif parts[0] == "element":
                elements.append((parts[1], int(parts[2]), []))
            elif parts[0] == "property":
                if parts[1] == "list":
                    elements[-1][2].append((parts[4], "list", parts[2], parts[3]))
                else:
                    elements[-1][2].append((parts[2], parts[1]))
            elif parts[0] == "end_header":
                break
        if fmt != "binary_little_endian":
            raise MeshError(f"{path}: only binary_little_endian PLY is supported")
        data = {}
        for name, count, props in elements:
            if all(len(p) == 2 for p in props):
                dtype = np.dtype([(p[0], "<" + _PLY_TYPES[p[1]]) for p in props])
                data[name] = np.frombuffer(fh.read(dtype.itemsize * count), dtype=dtype, count=count)
            else:
                rows = []
                for _ in range(count):
                    row = {}
                    for p in props:
                        if len(p) == 2:
                            code = "<" + _PLY_TYPES[p[1]]
                            row[p[0]] = struct.unpack(code, fh.read(struct.calcsize(code)))[0]
                        else:
                            ccode = "<" + _PLY_TYPES[p[2]]
                            n = struct.unpack(ccode, fh.read(struct.calcsize(ccode)))[0]
                            icode = "<" + str(n) + _PLY_TYPES[p[3]]
                            row[p[0]] = struct.unpack(icode, fh.read(struct.calcsize(icode)))
                    rows.append(row)
                data[name] = rows
    vert = data.get("vertex")
    if vert is None:
        raise MeshError(f"{path}: no vertex element")
    names = vert.dtype.names
    pos = np.stack([vert["x"], vert["y"], vert["z"]], axis=1).astype(np.float64)
    faces = []
    for row in data.get("face", []):
        idx = row.get("vertex_indices", row.get("vertex_index"))
        for k in range(1, len(idx) - 1):
            faces.append([idx[0], idx[k], idx[k + 1]])
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    uvs = None
    for un, vn in (("u", "v"), ("s", "t"), ("texture_u", "texture_v")):
        if un in names and vn in names:
            vuv = np.stack([vert[un], vert[vn]], axis=1).astype(np.float64)
            uvs = vuv[faces]
            break
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([vert["red"], vert["green"], vert["blue"]], axis=1).astype(np.float64)
        if vert["red"].dtype.kind in "ui":
            colors /= 255.0
    return pos, faces, uvs, colors


def load_mesh(path):
    """Load an OBJ or binary little-endian PLY mesh, normalized to [-1, 1]^3."""
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".obj":
        pos, faces, uvs, colors = _parse_obj(path)
    elif ext == ".ply":
        pos, faces, uvs, colors = _parse_ply(path)
    else:
        raise MeshError(f"unsupported mesh format {ext!r}")
    if len(faces) == 0:
        raise MeshError(f"{path}: mesh has no faces")
    return build_mesh(pos, faces, uvs, colors)


def save_obj(path, m):
    """Write positions, per-corner UVs and optional vertex colors (``v x y z r g b``)."""
    lines = []
    for i, p in enumerate(m.positions):
        if m.vertex_colors is not None:
            c = m.vertex_colors[i]
            lines.append(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {c[0]:.6g} {c[1]:.6g} {c[2]:.6g}")
        else:
            lines.append(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}")
    for uv in m.uvs.reshape(-1, 2):
        lines.append(f"vt {uv[0]:.9g} {uv[1]:.9g}")
    for f, tri in enumerate(m.triangles):
        a, b, c = tri + 1
        t = 3 * f + 1
        lines.append(f"f {a}/{t} {b}/{t + 1} {c}/{t + 2}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def save_ply(path, positions, triangles, uv=None, colors=None):
    """Binary little-endian PLY with optional per-vertex ``u, v`` and ``red, green, blue``."""
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(positions)}",
              "property float x", "property float y", "property float z"]
    if uv is not None:
        fields += [("u", "<f4"), ("v", "<f4")]
        header += ["property float u", "property float v"]
    if colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header += [f"element face {len(triangles)}", "property list uchar int vertex_indices",
               "end_header"]
    vert = np.zeros(len(positions), dtype=fields)
    vert["x"], vert["y"], vert["z"] = np.asarray(positions, dtype=np.float32).T
    if uv is not None:
        vert["u"], vert["v"] = np.asarray(uv, dtype=np.float32).T
    if colors is not None:
        c = np.round(np.clip(colors, 0, 1) * 255).astype(np.uint8)
        vert["red"], vert["green"], vert["blue"] = c.T
    face = np.zeros(len(triangles), dtype=[("n", "u1"), ("i", "<i4", (3,))])
    face["n"] = 3
    face["i"] = triangles
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(vert.tobytes())
        fh.write(face.tobytes())


def equirect_uv(positions, triangles):
    """Longitude/latitude UVs around the y axis, wrapped per triangle at the seam."""
    p = _unit(positions)
    lon = np.arctan2(p[:, 0], p[:, 2])
    lat = np.arcsin(np.clip(p[:, 1], -1.0, 1.0))
    u = lon / (2 * np.pi) + 0.5
    v = lat / np.pi + 0.5
    uv = np.stack([u[triangles], v[triangles]], axis=-1)
    pole = (np.hypot(p[:, 0], p[:, 2]) < 1e-9)[triangles]
    for f in range(len(triangles)):
        us = uv[f, :, 0]
        live = ~pole[f]
        if us[live].max() - us[live].min() > 0.5:
            us[live & (us < 0.5)] += 1.0
        if pole[f].any():
            us[pole[f]] = us[live].mean()
    return uv


def icosphere(subdivisions=3, colors=None):
    """Unit icosphere with equirectangular UVs and a vertex on each y pole."""
    phi = (1 + 5 ** 0.5) / 2
    verts = [(-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
             (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
             (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    # rotate one vertex (and its antipode) onto the y axis
    v = _unit(np.asarray(verts, dtype=np.float64))
    axis = v[5]
    target = np.array([0.0, 1.0, 0.0])
    k = np.cross(axis, target)
    s, c = np.linalg.norm(k), np.dot(axis, target)
    k = k / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    R = np.eye(3) + s * K + (1 - c) * K @ K
    v = v @ R.T
    f = np.asarray(faces, dtype=np.int64)
    for _ in range(subdivisions):
        v, f = _subdivide(v, f)
    v = _unit(v)
    # outward winding
    p = v[f]
    outward = np.sum(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]) * p.mean(axis=1), axis=1) > 0
    f[~outward] = f[~outward][:, ::-1]
    uv = equirect_uv(v, f)
    if callable(colors):
        colors = colors(v)
    # analytic normals: exactly radial
    return build_mesh(v, f, uv, colors, normalize=False, normals=v)


def _subdivide(v, f):
    cache = {}
    verts = list(map(tuple, v))

    def mid(a, b):
        key = (min(a, b), max(a, b))
        if key not in cache:
            m = 0.5 * (np.asarray(verts[a]) + np.asarray(verts[b]))
            m /= np.linalg.norm(m)
            cache[key] = len(verts)
            verts.append(tuple(m))
        return cache[key]

    out = []
    for a, b, c in f:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        out += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
    return np.asarray(verts), np.asarray(out, dtype=np.int64)


def uv_to_pixel(uv, resolution):
    """Map UVs to continuous pixel coordinates (x right, y down)."""
    return np.stack([uv[..., 0] * resolution, (1.0 - uv[..., 1]) * resolution], axis=-1)


def uv_rasterize(m, resolution):
    """Texel -> (face id, barycentrics) map of the UV layout, with repeat wrapping in u."""
    xy = uv_to_pixel(m.uvs, resolution)
    face_ids = np.arange(m.n_faces)
    umin, umax = m.uvs[..., 0].min(axis=1), m.uvs[..., 0].max(axis=1)
    copies, ids = [xy], [face_ids]
    for shift, sel in ((-1.0, umax > 1.0), (1.0, umin < 0.0)):
        if sel.any():
            moved = xy[sel].copy()
            moved[..., 0] += shift * resolution
            copies.append(moved)
            ids.append(face_ids[sel])
    xy = np.concatenate(copies)
    ids = np.concatenate(ids)
    key = np.zeros(xy.shape[:2])
    tri, bary, _ = kernels.rasterize_triangles(xy, key, resolution, resolution, -np.inf)
    face = np.where(tri >= 0, ids[np.maximum(tri, 0)], -1)
    return face, bary


def dilate_gutters(img, coverage, pixels=GUTTER_PX):
    """Grow chart borders outward by averaging filled 8-neighbors, one ring per step."""
    img = np.array(img, dtype=np.float64, copy=True)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    filled = coverage.copy()
    kernel = np.ones((3, 3))
    for _ in range(pixels):
        w = ndimage.convolve(filled.astype(np.float64), kernel, mode="constant")
        grow = (~filled) & (w > 0)
        if not grow.any():
            break
        for ch in range(img.shape[2]):
            s = ndimage.convolve(np.where(filled, img[..., ch], 0.0), kernel, mode="constant")
            img[..., ch][grow] = s[grow] / w[grow]
        filled |= grow
    if squeeze:
        img = img[..., 0]
    return img, filled


def dilate_labels(labels, coverage, pixels=GUTTER_PX):
    """Nearest-label gutter growth for integer maps."""
    labels = labels.copy()
    filled = coverage.copy()
    for _ in range(pixels):
        grown = ndimage.grey_dilation(np.where(filled, labels, 0), size=(3, 3))
        ring = (~filled) & ndimage.binary_dilation(filled, structure=np.ones((3, 3)))
        labels[ring] = grown[ring]
        filled |= ring
    return labels


def project_vertex_albedo(m, resolution=1024):
    """Rasterize per-vertex colors into an albedo UV map; returns (image, coverage)."""
    if m.vertex_colors is None:
        raise MeshError("mesh has no vertex colors")
    face, bary = uv_rasterize(m, resolution)
    cov = face >= 0
    img = np.zeros((resolution, resolution, 3))
    fc = m.vertex_colors[m.triangles[face[cov]]]  # (N, 3 corners, 3)
    img[cov] = np.einsum("nk,nkc->nc", bary[cov], fc)
    img, _ = dilate_gutters(img, cov)
    return img, cov
