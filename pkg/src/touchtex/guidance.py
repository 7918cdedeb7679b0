"""Refinement providers used as image priors during the second training phase.

A provider takes a rendered image (plus an optional normal-map condition,
a prompt and a starting noise level) and returns a refined image of the same
size. Three providers ship with the package:

``identity``
    returns the input unchanged.
``file:<dir>``
    replays refinements computed elsewhere, stored as
    ``<dir>/<kind>/<view-index>_<iteration>.png`` with ``kind`` in
    ``{visual, tactile}``. Visual images are 8-bit RGB, tactile images are
    normal-map PNGs (16-bit preferred).
``blur``
    a deterministic stand-in that blurs with ``sigma = BLUR_PX_PER_T * t_start``
    pixels and sharpens again; ``t_start = 0`` returns the input.
"""
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .io import FormatError, read_color_png, read_normal_png

BLUR_PX_PER_T = 4.0
KINDS = ("visual", "tactile")


class GuidanceError(ValueError):
    pass


@dataclass
class GuidanceRequest:
    image: np.ndarray              # (H, W, 3) float
    condition: np.ndarray = None   # (H, W, 3) normal image
    prompt: str = ""
    t_start: float = 0.5
    noise_seed: int = 0
    kind: str = "visual"
    view_index: int = 0
    iteration: int = 0

    def validate(self):
        if not 0.0 <= self.t_start < 1.0:
            raise GuidanceError(f"t_start {self.t_start} outside [0, 1)")
        if self.kind not in KINDS:
            raise GuidanceError(f"unknown request kind {self.kind!r}")
        if self.condition is not None and self.condition.shape[:2] != self.image.shape[:2]:
            raise GuidanceError("condition and image resolutions differ")


class IdentityProvider:
    name = "identity"

    def refine(self, req):
        req.validate()
        return req.image


class BlurProvider:
    """Blur-then-sharpen refiner whose strength follows ``t_start``."""
    name = "blur"

    def __init__(self, amount=0.5):
        self.amount = amount

    def refine(self, req):
        req.validate()
        img = np.asarray(req.image, dtype=np.float64)
        sigma = BLUR_PX_PER_T * req.t_start
        if sigma == 0:
            return img.copy()
        spatial = (sigma, sigma, 0)
        blurred = ndimage.gaussian_filter(img, spatial, mode="nearest")
        detail = blurred - ndimage.gaussian_filter(blurred, (sigma / 2, sigma / 2, 0),
                                                   mode="nearest")
        out = blurred + self.amount * detail
        if req.kind == "tactile":
            norm = np.linalg.norm(out, axis=-1, keepdims=True)
            out = np.where(norm > 1e-12, out / np.maximum(norm, 1e-12), 0.0)
        else:
            out = np.clip(out, 0.0, 1.0)
        return out


class FileProvider:
    """Replays precomputed refinements from a directory tree."""
    name = "file"

    def __init__(self, root):
        self.root = os.fspath(root)
        if not os.path.isdir(self.root):
            raise GuidanceError(f"provider directory {self.root} does not exist")

    def path_for(self, kind, view_index, iteration):
        return os.path.join(self.root, kind, f"{view_index}_{iteration}.png")

    def refine(self, req):
        req.validate()
        path = self.path_for(req.kind, req.view_index, req.iteration)
        try:
            if req.kind == "visual":
                out = read_color_png(path)
            else:
                out, _ = read_normal_png(path)
        except (OSError, FormatError) as exc:
            raise GuidanceError(f"file provider: {exc}") from exc
        if out.shape[:2] != req.image.shape[:2]:
            raise GuidanceError(f"{path}: resolution {out.shape[:2]} != {req.image.shape[:2]}")
        return out


def make_provider(name):
    """Build a provider from ``identity``, ``blur`` or ``file:<dir>``."""
    if name == "identity":
        return IdentityProvider()
    if name == "blur":
        return BlurProvider()
    if name.startswith("file:"):
        return FileProvider(name[len("file:"):])
    raise GuidanceError(f"unknown provider {name!r}")


def refine(provider, req):
    return provider.refine(req)


@dataclass(frozen=True)
class TimestepSchedule:
    t_hi: float = 0.5
    t_lo: float = 0.3
    phase2_iters: int = 50

    def __post_init__(self):
        if not 0 < self.t_lo < self.t_hi < 1:
            raise GuidanceError("need 0 < t_lo < t_hi < 1")
        if self.phase2_iters < 1:
            raise GuidanceError("phase2_iters must be >= 1")


def schedule_t(sched, iteration):
    """Noise level for a phase-2 iteration, linear from t_hi down to t_lo."""
    if not 0 <= iteration < sched.phase2_iters:
        raise GuidanceError(f"iteration {iteration} outside [0, {sched.phase2_iters})")
    if sched.phase2_iters == 1:
        return sched.t_hi
    if iteration == sched.phase2_iters - 1:
        return sched.t_lo
    a = iteration / (sched.phase2_iters - 1)
    return (1.0 - a) * sched.t_hi + a * sched.t_lo
