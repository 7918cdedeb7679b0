"""Efros-Freeman image quilting on height maps.

Blocks are laid in raster order on a grid with stride ``block - overlap``.
Each new block is drawn uniformly from the candidates whose masked overlap
error is within ``(1 + tolerance)`` of the best one, then stitched to the
already placed neighbors along minimum-error boundary cuts.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import fft

from . import kernels
from .tactile import HeightMap, height_to_normals

MIN_VALID_OVERLAP = 0.8


class QuiltError(ValueError):
    pass


@dataclass
class QuiltParams:
    block_px: int = 64
    overlap_px: int = 10
    tolerance: float = 0.1
    out_width: int = 1024
    out_height: int = 1024
    seed: int = 0

    def validate(self, exemplars):
        if not 0 < self.overlap_px < self.block_px:
            raise QuiltError(f"need 0 < overlap ({self.overlap_px}) < block ({self.block_px})")
        if self.tolerance < 0:
            raise QuiltError("tolerance must be >= 0")
        if self.out_width < 1 or self.out_height < 1:
            raise QuiltError("output size must be positive")
        for ex in exemplars:
            if min(ex.data.shape) < self.block_px:
                raise QuiltError(f"exemplar {ex.data.shape} smaller than block {self.block_px}")


@dataclass
class Seam:
    """One boundary cut: its cost and the best straight cut over the same error grid."""
    block: tuple
    direction: str  # "vertical" (left overlap) or "horizontal" (top overlap)
    cut_cost: float
    straight_cost: float


def min_cut_seam(cost):
    """Column index per row of the cheapest 8-connected top-to-bottom path."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise QuiltError("cost grid must be a non-empty 2-D array")
    return kernels.min_cut_seam(cost)


def seam_cost(cost, path):
    return float(sum(cost[r, c] for r, c in enumerate(path)))


class _Correlator:
    """Valid-mode cross-correlation against one exemplar, reusing its spectra."""

    def __init__(self, ex, block):
        self.block = block
        self.shape = ex.data.shape
        m = ex.mask.astype(np.float64)
        e = np.where(ex.mask, ex.data, 0.0)
        self.spec_m = fft.rfft2(m)
        self.spec_e = fft.rfft2(e)
        self.spec_e2 = fft.rfft2(e * e)

    def _template_spec(self, t):
        return fft.rfft2(t[::-1, ::-1], s=self.shape)

    def _valid(self, spec):
        out = fft.irfft2(spec, s=self.shape)
        b = self.block - 1
        return out[b:, b:]

    def errors(self, tmpl, tmask):
        """(mean squared error, valid fraction) for every block position."""
        mt = tmask.astype(np.float64)
        t = np.where(tmask, tmpl, 0.0)
        f1 = self._template_spec(mt)
        ft = self._template_spec(t)
        ft2 = self._template_spec(t * t)
        ssd = self._valid(self.spec_e2 * f1 - 2.0 * self.spec_e * ft + self.spec_m * ft2)
        count = self._valid(self.spec_m * f1)
        count = np.maximum(np.round(count), 0.0)
        total = mt.sum()
        frac = count / total
        err = np.maximum(ssd, 0.0) / np.maximum(count, 1.0)
        return err, frac, float((t * t).sum())


def _block_grid(size, block, overlap):
    stride = block - overlap
    return max(1, math.ceil((size - overlap) / stride))


def _quilt(exemplars, params):
    if not exemplars:
        raise QuiltError("need at least one exemplar")
    pitch = exemplars[0].pitch_mm
    if any(ex.pitch_mm != pitch for ex in exemplars):
        raise QuiltError("all exemplars must share pitch_mm")
    params.validate(exemplars)
    rng = np.random.default_rng(params.seed)
    B, ov = params.block_px, params.overlap_px
    stride = B - ov
    n_rows = _block_grid(params.out_height, B, ov)
    n_cols = _block_grid(params.out_width, B, ov)
    H = n_rows * stride + ov
    W = n_cols * stride + ov
    canvas = np.zeros((H, W))
    valid = np.zeros((H, W), dtype=bool)
    correlators = [_Correlator(ex, B) for ex in exemplars]
    seams = []

    for bi in range(n_rows):
        for bj in range(n_cols):
            r0, c0 = bi * stride, bj * stride
            sl = (slice(r0, r0 + B), slice(c0, c0 + B))
            region = np.zeros((B, B), dtype=bool)
            if bj > 0:
                region[:, :ov] = True
            if bi > 0:
                region[:ov, :] = True
            tmask = region & valid[sl]
            tmpl = canvas[sl]

            if tmask.any():
                errs, ok = [], []
                for cor in correlators:
                    err, frac, energy = cor.errors(tmpl, tmask)
                    errs.append(err.ravel())
                    ok.append(frac.ravel() >= MIN_VALID_OVERLAP)
                err = np.concatenate(errs)
                ok = np.concatenate(ok)
                if not ok.any():
                    raise QuiltError("no candidate block has enough valid overlap")
                best = err[ok].min()
                # FFT round-off floor, relative to the template energy
                slack = 1e-9 * (energy / max(tmask.sum(), 1) + 1e-30)
                cand = np.flatnonzero(ok & (err <= (1.0 + params.tolerance) * best + slack))
            else:
                cand = np.arange(sum((ex.data.shape[0] - B + 1) * (ex.data.shape[1] - B + 1)
                                     for ex in exemplars))
            pick = int(cand[rng.integers(len(cand))])
            for ex in exemplars:
                nw = ex.data.shape[1] - B + 1
                n_pos = (ex.data.shape[0] - B + 1) * nw
                if pick < n_pos:
                    i, j = divmod(pick, nw)
                    patch = ex.data[i:i + B, j:j + B]
                    pmask = ex.mask[i:i + B, j:j + B]
                    break
                pick -= n_pos

            take = np.ones((B, B), dtype=bool)
            both = valid[sl] & pmask
            diff2 = np.where(both, (patch - tmpl) ** 2, 0.0)
            if bj > 0:
                cost = diff2[:, :ov]
                path = min_cut_seam(cost)
                cols = np.arange(B)[None, :]
                take &= cols >= path[:, None]
                seams.append(Seam((bi, bj), "vertical", seam_cost(cost, path),
                                  float(cost.sum(axis=0).min())))
            if bi > 0:
                cost = diff2[:ov, :].T
                path = min_cut_seam(cost)
                rows = np.arange(B)[:, None]
                take &= rows >= path[None, :]
                seams.append(Seam((bi, bj), "horizontal", seam_cost(cost, path),
                                  float(cost.sum(axis=0).min())))
            # never keep holes from the canvas if the new block has data there
            take |= ~valid[sl]
            canvas[sl] = np.where(take, patch, tmpl)
            valid[sl] = np.where(take, pmask, valid[sl])

    out = HeightMap(canvas[:params.out_height, :params.out_width].copy(),
                    valid[:params.out_height, :params.out_width].copy(), pitch)
    return out, seams


def quilt_height(exemplars, params=None):
    """Synthesize a large height map from one or more exemplar patches."""
    out, _ = _quilt(list(exemplars), params or QuiltParams())
    return out


def quilt_height_with_seams(exemplars, params=None):
    return _quilt(list(exemplars), params or QuiltParams())


def quilted_normal_uv(exemplars, params=None):
    """Quilt in the height domain, then convert to a tangent-space normal map."""
    return height_to_normals(quilt_height(exemplars, params))
