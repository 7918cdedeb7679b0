"""Neural texture field: multi-resolution hash encoding plus a small MLP.

For a point ``p`` in ``[-1, 1]^3`` the field returns an albedo in ``(0, 1)^3``,
a unit tangent-space normal with positive ``z`` and, optionally, part-label
logits. All trainable parameters live in one flat vector so the optimizer
and the checkpoint code see a single array.

Checkpoint layout (version 1)::

    <one line of JSON>\\n
    params  float32 little-endian, ``n_params`` values
    adam m  float32 little-endian, ``n_params`` values
    adam v  float32 little-endian, ``n_params`` values

The header carries the grid config, head sizes, dtype, Adam step count and
the parameter group table (name, shape, offset).
"""
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .io import FormatError, atomic_write_bytes

NORMAL_EPS = 1e-3
CHECKPOINT_VERSION = 1
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class FieldError(ValueError):
    pass


@dataclass(frozen=True)
class HashGridConfig:
    levels: int = 16
    features_per_level: int = 2
    table_size_log2: int = 19
    base_resolution: int = 16
    max_resolution: int = 2048

    def __post_init__(self):
        if self.levels < 1 or self.features_per_level < 1:
            raise FieldError("levels and features_per_level must be >= 1")
        if not 1 <= self.base_resolution <= self.max_resolution:
            raise FieldError("need 1 <= base_resolution <= max_resolution")
        if not 1 <= self.table_size_log2 <= 31:
            raise FieldError("table_size_log2 must be in [1, 31]")

    @property
    def table_size(self):
        return 1 << self.table_size_log2

    def resolutions(self):
        if self.levels == 1:
            return np.array([self.base_resolution], dtype=np.int64)
        growth = math.exp((math.log(self.max_resolution) - math.log(self.base_resolution))
                          / (self.levels - 1))
        res = [int(math.floor(self.base_resolution * growth ** lvl + 1e-9))
               for lvl in range(self.levels)]
        return np.array(res, dtype=np.int64)

    def level_layout(self):
        """Per level: (resolution, rows, dense) with dense levels stored without hashing."""
        res = self.resolutions()
        dense = (res + 1) ** 3 <= self.table_size
        sizes = np.where(dense, (res + 1) ** 3, self.table_size).astype(np.int64)
        return res, sizes, dense


@dataclass
class FieldSample:
    albedo: np.ndarray           # (P, 3)
    normal: np.ndarray           # (P, 3)
    label_logits: np.ndarray = None  # (P, N)
    clamped: np.ndarray = None   # (P,) points that were outside the box


@dataclass
class _Cache:
    points01: np.ndarray
    enc: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    t: np.ndarray
    u_norm: np.ndarray
    normal: np.ndarray
    albedo: np.ndarray


def tactile_to_normal(t, eps=NORMAL_EPS):
    """Map raw tanh outputs in (-1, 1)^3 to the +z hemisphere."""
    u = t.copy()
    u[..., 2] += 1.0 + eps
    norm = np.linalg.norm(u, axis=-1, keepdims=True)
    return u / norm, norm


def _open_unit(x, lo, hi):
    """Keep saturated activations strictly inside their open range."""
    return np.clip(x, np.nextafter(x.dtype.type(lo), x.dtype.type(hi)),
                   np.nextafter(x.dtype.type(hi), x.dtype.type(lo)))


def _sigmoid(x):
    return _open_unit(0.5 * (1.0 + np.tanh(0.5 * x)), 0.0, 1.0)


class TextureField:
    def __init__(self, config=None, n_labels=0, hidden=64, dtype=np.float32, seed=0):
        self.config = config or HashGridConfig()
        self.n_labels = int(n_labels)
        self.hidden = int(hidden)
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.float32, np.float64):
            raise FieldError("dtype must be float32 or float64")
        res, sizes, dense = self.config.level_layout()
        self.resolutions = res
        self.level_sizes = sizes
        self.dense = dense.astype(np.uint8)
        self.level_offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        self.table_rows = int(sizes.sum())

        F, W = self.config.features_per_level, self.hidden
        n_in = self.config.levels * F
        shapes = [("hash", (self.table_rows, F)), ("w1", (n_in, W)), ("b1", (W,)),
                  ("w2", (W, W)), ("b2", (W,)), ("wa", (W, 3)), ("ba", (3,)),
                  ("wt", (W, 3)), ("bt", (3,))]
        if self.n_labels:
            shapes += [("ws", (W, self.n_labels)), ("bs", (self.n_labels,))]
        self.groups = []
        off = 0
        for name, shape in shapes:
            n = int(np.prod(shape))
            self.groups.append((name, shape, off))
            off += n
        self.n_params = off
        self.params = np.zeros(off, dtype=self.dtype)
        self.adam_m = np.zeros(off, dtype=self.dtype)
        self.adam_v = np.zeros(off, dtype=self.dtype)
        self.step = 0
        self._init(np.random.default_rng(seed))

    def _init(self, rng):
        self.view("hash")[:] = rng.uniform(-1e-4, 1e-4, self.view("hash").shape)
        for name in ("w1", "w2"):
            w = self.view(name)
            bound = math.sqrt(6.0 / w.shape[0])
            w[:] = rng.uniform(-bound, bound, w.shape)
        # biases and every head start at zero

    def view(self, name, flat=None):
        """Shaped view of one parameter group inside ``flat`` (default: the parameters)."""
        flat = self.params if flat is None else flat
        for gname, shape, off in self.groups:
            if gname == name:
                return flat[off:off + int(np.prod(shape))].reshape(shape)
        raise KeyError(name)

    def group_names(self):
        return [g[0] for g in self.groups]

    # forward / backward -------------------------------------------------

    def encode(self, points01):
        return kernels.hash_encode(points01, self.view("hash"), self.level_offsets,
                                   self.level_sizes, self.resolutions, self.dense)

    def forward(self, points):
        """Evaluate the field; returns ``(FieldSample, cache)``."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        clamped = np.any(np.abs(p) > 1.0, axis=1)
        p01 = np.ascontiguousarray((np.clip(p, -1.0, 1.0) + 1.0) * 0.5, dtype=self.dtype)
        enc = self.encode(p01)
        h1 = np.maximum(enc @ self.view("w1") + self.view("b1"), 0)
        h2 = np.maximum(h1 @ self.view("w2") + self.view("b2"), 0)
        albedo = _sigmoid(h2 @ self.view("wa") + self.view("ba"))
        t = _open_unit(np.tanh(h2 @ self.view("wt") + self.view("bt")), -1.0, 1.0)
        normal, u_norm = tactile_to_normal(t)
        logits = h2 @ self.view("ws") + self.view("bs") if self.n_labels else None
        out = FieldSample(albedo, normal, logits, clamped)
        return out, _Cache(p01, enc, h1, h2, t, u_norm, normal, albedo)

    def __call__(self, points):
        return self.forward(points)[0]

    def backward(self, cache, d_albedo=None, d_normal=None, d_logits=None):
        """Gradient of the parameters given upstream gradients of the outputs."""
        P = cache.h2.shape[0]
        grad = np.zeros(self.n_params, dtype=self.dtype)
        d_h2 = np.zeros((P, self.hidden), dtype=self.dtype)

        def check(d, width, what):
            d = np.asarray(d, dtype=self.dtype)
            if d.shape != (P, width):
                raise FieldError(f"{what} gradient has shape {d.shape}, expected {(P, width)}")
            return d

        if d_albedo is not None:
            d = check(d_albedo, 3, "albedo")
            dz = d * cache.albedo * (1.0 - cache.albedo)
            self.view("wa", grad)[:] = cache.h2.T @ dz
            self.view("ba", grad)[:] = dz.sum(axis=0)
            d_h2 += dz @ self.view("wa").T
        if d_normal is not None:
            d = check(d_normal, 3, "normal")
            n = cache.normal
            du = (d - np.sum(d * n, axis=1, keepdims=True) * n) / cache.u_norm
            dz = du * (1.0 - cache.t * cache.t)
            self.view("wt", grad)[:] = cache.h2.T @ dz
            self.view("bt", grad)[:] = dz.sum(axis=0)
            d_h2 += dz @ self.view("wt").T
        if d_logits is not None:
            if not self.n_labels:
                raise FieldError("field has no label head")
            dz = check(d_logits, self.n_labels, "label")
            self.view("ws", grad)[:] = cache.h2.T @ dz
            self.view("bs", grad)[:] = dz.sum(axis=0)
            d_h2 += dz @ self.view("ws").T

        d_z2 = d_h2 * (cache.h2 > 0)
        self.view("w2", grad)[:] = cache.h1.T @ d_z2
        self.view("b2", grad)[:] = d_z2.sum(axis=0)
        d_z1 = (d_z2 @ self.view("w2").T) * (cache.h1 > 0)
        self.view("w1", grad)[:] = cache.enc.T @ d_z1
        self.view("b1", grad)[:] = d_z1.sum(axis=0)
        d_enc = np.ascontiguousarray(d_z1 @ self.view("w1").T)
        self.view("hash", grad)[:] = kernels.hash_encode_backward(
            cache.points01, d_enc, self.table_rows, self.level_offsets, self.level_sizes,
            self.resolutions, self.dense)
        return grad

    # optimizer ------------------------------------------------------------

    def adam_step(self, grad, lr=0.01, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        grad = np.asarray(grad)
        if grad.shape != self.params.shape:
            raise FieldError(f"gradient shape {grad.shape} != parameter shape {self.params.shape}")
        if not np.all(np.isfinite(grad)):
            raise FieldError("non-finite gradient")
        self.step += 1
        kernels.adam_update(self.params, np.ascontiguousarray(grad, dtype=self.dtype),
                            self.adam_m, self.adam_v, lr, beta1, beta2, eps, self.step)

    # persistence ----------------------------------------------------------

    def header(self):
        return {"format": "touchtex-field", "version": CHECKPOINT_VERSION,
                "config": asdict(self.config), "n_labels": self.n_labels,
                "hidden": self.hidden, "dtype": self.dtype.name, "step": self.step,
                "n_params": self.n_params,
                "groups": [[n, list(s), o] for n, s, o in self.groups]}

    def save(self, path):
        line = json.dumps(self.header(), separators=(",", ":")).encode() + b"\n"
        blobs = [np.ascontiguousarray(a, dtype="<f4").tobytes()
                 for a in (self.params, self.adam_m, self.adam_v)]
        atomic_write_bytes(path, [line] + blobs)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            line = fh.readline()
            blob = fh.read()
        try:
            head = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: bad checkpoint header") from exc
        if head.get("format") != "touchtex-field" or head.get("version") != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: not a version {CHECKPOINT_VERSION} field checkpoint")
        field = cls(HashGridConfig(**head["config"]), head["n_labels"], head["hidden"],
                    np.dtype(head["dtype"]))
        n = field.n_params
        if head["n_params"] != n or len(blob) != 12 * n:
            raise FormatError(f"{path}: parameter blob size mismatch")
        arr = np.frombuffer(blob, dtype="<f4").reshape(3, n)
        field.params[:] = arr[0]
        field.adam_m[:] = arr[1]
        field.adam_v[:] = arr[2]
        field.step = int(head["step"])
        return field
