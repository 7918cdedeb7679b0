"""File formats shared by every subcommand.

Tensor files (``.f32t``)
    One line of compact JSON terminated by ``\\n``::

        {"dtype": "f32", "shape": [...], "layout": "row-major", "endianness": "little"}

    followed by the raw little-endian float32 blob in C order. Extra header
    keys (e.g. ``pitch_mm``) are preserved as metadata.

PNG images
    Colors are 8-bit RGB. Normal maps are 16-bit RGB with the encoding
    ``v = round((n + 1) / 2 * 65535)``. Label maps are 8-bit single channel,
    0 = background.
"""
import json
import os
import tempfile

import cv2
import numpy as np


class FormatError(ValueError):
    pass


def _default_mode():
    mask = os.umask(0)
    os.umask(mask)
    return 0o666 & ~mask


def atomic_write_bytes(path, chunks):
    """Write byte chunks to ``path`` via a temp file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            for chunk in chunks:
                fh.write(chunk)
        os.chmod(tmp, _default_mode())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tensor(path, array, **meta):
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = {"dtype": "f32", "shape": list(arr.shape), "layout": "row-major",
              "endianness": "little"}
    header.update(meta)
    line = json.dumps(header, separators=(",", ":")).encode() + b"\n"
    atomic_write_bytes(path, [line, arr.tobytes()])


def read_tensor(path):
    """Return ``(array, header)``."""
    with open(path, "rb") as fh:
        line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: bad tensor header") from exc
    if header.get("dtype") != "f32" or header.get("endianness") != "little" \
            or header.get("layout") != "row-major":
        raise FormatError(f"{path}: unsupported tensor header {header}")
    shape = tuple(int(s) for s in header["shape"])
    count = int(np.prod(shape)) if shape else 1
    if len(blob) != 4 * count:
        raise FormatError(f"{path}: expected {4 * count} bytes, found {len(blob)}")
    arr = np.frombuffer(blob, dtype="<f4").reshape(shape).astype(np.float32)
    return arr, header


def read_png(path):
    """Read a PNG as uint8/uint16 array, RGB channel order."""
    img = cv2.imread(os.fspath(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise FormatError(f"cannot read image {path}")
    if img.ndim == 3:
        if img.shape[2] == 4:
            img = img[:, :, :3]
        img = img[:, :, ::-1]
    return np.ascontiguousarray(img)


def write_png(path, img):
    img = np.asarray(img)
    if img.dtype not in (np.uint8, np.uint16):
        raise FormatError(f"PNG data must be uint8 or uint16, got {img.dtype}")
    if img.ndim == 3:
        img = img[:, :, ::-1]
    path = os.fspath(path)
    ok, buf = cv2.imencode(".png", np.ascontiguousarray(img))
    if not ok:
        raise FormatError(f"failed to encode {path}")
    atomic_write_bytes(path, [buf.tobytes()])


def encode_normals(n, bits=16):
    vmax = 65535 if bits == 16 else 255
    dtype = np.uint16 if bits == 16 else np.uint8
    v = np.round((np.clip(n, -1.0, 1.0) + 1.0) / 2.0 * vmax)
    return v.astype(dtype)


def write_normal_png(path, n, mask=None, bits=16):
    img = encode_normals(n, bits)
    if mask is not None:
        img[~mask] = 0
    write_png(path, img)


def read_normal_png(path):
    """Decode an 8- or 16-bit normal PNG to unit vectors; returns (normals, valid)."""
    img = read_png(path)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"{path}: normal PNG must be RGB")
    vmax = 65535.0 if img.dtype == np.uint16 else 255.0
    n = img.astype(np.float64) / vmax * 2.0 - 1.0
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    valid = norm[..., 0] > 0.5
    return np.where(valid[..., None], n / np.maximum(norm, 1e-12), 0.0), valid


def write_color_png(path, rgb, mask=None):
    img = np.round(np.clip(rgb, 0.0, 1.0) * 255).astype(np.uint8)
    if mask is not None:
        img[~mask] = 0
    write_png(path, img)


def read_color_png(path):
    img = read_png(path)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    vmax = 65535.0 if img.dtype == np.uint16 else 255.0
    return img.astype(np.float64) / vmax


def read_mask_png(path):
    img = read_png(path)
    if img.ndim == 3:
        img = img.max(axis=2)
    return img > 0


def write_mask_png(path, mask):
    write_png(path, np.where(mask, 255, 0).astype(np.uint8))


def write_label_png(path, labels):
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise FormatError("labels must fit in 8 bits")
    write_png(path, labels.astype(np.uint8))


def read_label_png(path):
    img = read_png(path)
    if img.ndim != 2:
        raise FormatError(f"{path}: label PNG must be single channel")
    return img.astype(np.int64)
