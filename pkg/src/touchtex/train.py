"""Two-phase texture-field optimization.

Phase 1 matches rendered albedo and tactile normals against references
rendered from the input UV maps. Phase 2 switches the visual term to
mean-color matching, lowers the tactile weight and adds the guidance terms,
whose targets come from a refinement provider.

Each iteration renders ``views_per_iter`` pairs of one orbiting visual view
and one close-up tactile view. With part labels, visual views are drawn from
the labeled set and tactile supervision is split by the rendered label field.
"""
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field as dc_field, fields

import numpy as np
from scipy import ndimage

from .field import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, HashGridConfig, TextureField
from .guidance import GuidanceRequest, TimestepSchedule, schedule_t
from .losses import (PHASE1_WEIGHTS, PHASE2_WEIGHTS, LossWeights, loss_label, loss_tg, loss_tm,
                     loss_vg, loss_vm, total_loss)
from .parts import masked_tactile_losses, part_masks
from .raster import (DEFAULT_TEXEL_SCALE, TACTILE_RESOLUTION, VISUAL_RESOLUTION, Camera, UVMaps,
                     rasterize, render, render_backward, sample_tactile_camera,
                     sample_visual_camera)

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("iteration", "l_vm", "l_tm", "l_vg", "l_tg", "total")


class FitError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    phase1_iters: int = 150
    phase2_iters: int = 50
    lr: float = 0.01
    adam_beta1: float = ADAM_BETA1
    adam_beta2: float = ADAM_BETA2
    adam_eps: float = ADAM_EPS
    phase1: LossWeights = PHASE1_WEIGHTS
    phase2: LossWeights = PHASE2_WEIGHTS
    views_per_iter: int = 1
    seed: int = 0
    label_weight: float = 1.0
    visual_resolution: int = VISUAL_RESOLUTION
    tactile_resolution: int = TACTILE_RESOLUTION
    texel_scale: float = DEFAULT_TEXEL_SCALE
    grid: HashGridConfig = dc_field(default_factory=HashGridConfig)
    hidden: int = 64
    prompt: str = ""
    tactile_prompts: tuple = ()
    t_hi: float = 0.5
    t_lo: float = 0.3

    def __post_init__(self):
        if self.phase1_iters < 1 or self.phase2_iters < 1:
            raise FitError("iteration counts must be > 0")
        if self.views_per_iter < 1:
            raise FitError("views_per_iter must be >= 1")
        if not self.lr > 0:
            raise FitError("lr must be > 0")

    def to_dict(self):
        d = asdict(self)
        d["tactile_prompts"] = list(self.tactile_prompts)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise FitError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("phase1", "phase2"):
            if key in d and isinstance(d[key], dict):
                d[key] = LossWeights(**d[key])
        if isinstance(d.get("grid"), dict):
            d["grid"] = HashGridConfig(**d["grid"])
        if "tactile_prompts" in d:
            d["tactile_prompts"] = tuple(d["tactile_prompts"])
        return cls(**d)


@dataclass
class LabeledView:
    camera: Camera
    labels: np.ndarray   # (H, W) ints, 0 = background


@dataclass
class FitResult:
    field: TextureField
    history: list
    views: list           # (iteration, kind, camera dict) for provider replay
    seconds: float = 0.0


def erode(mask):
    """Drop the outermost pixel ring of a coverage mask (silhouette aliasing)."""
    return ndimage.binary_erosion(mask, structure=np.ones((3, 3), dtype=bool))


def write_history(path, history):
    extra = [k for k in ("l_label",) if history and k in history[0]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(HISTORY_COLUMNS) + extra)
        for row in history:
            w.writerow([row["iteration"]] + [repr(float(row[k])) for k in HISTORY_COLUMNS[1:]]
                       + [repr(float(row[k])) for k in extra])


def _check_inputs(mesh, albedo_uv, tactile_uvs, label_views):
    if albedo_uv is None or np.asarray(albedo_uv).ndim != 3:
        raise FitError("albedo UV map must be an (R, R, 3) image")
    if not tactile_uvs:
        raise FitError("need at least one tactile UV map")
    for t in tactile_uvs:
        if np.asarray(t).ndim != 3 or np.asarray(t).shape[2] != 3:
            raise FitError("tactile UV maps must be (R, R, 3) normal images")
    if len(tactile_uvs) > 1 and not label_views:
        raise FitError("several tactile maps need labeled views to tell the parts apart")
    for v in label_views or ():
        if v.labels.shape != (v.camera.resolution, v.camera.resolution):
            raise FitError("label map resolution differs from its camera")
        if v.labels.max() > len(tactile_uvs):
            raise FitError(f"label {v.labels.max()} exceeds the {len(tactile_uvs)} tactile maps")


def fit(mesh, albedo_uv, tactile_uvs, provider, config=None, label_views=None, progress=None):
    """Optimize a texture field; returns a ``FitResult``."""
    cfg = config or TrainConfig()
    if isinstance(tactile_uvs, np.ndarray):
        tactile_uvs = [tactile_uvs]
    tactile_uvs = list(tactile_uvs)
    _check_inputs(mesh, albedo_uv, tactile_uvs, label_views)
    n_parts = len(tactile_uvs)
    labeled = bool(label_views)
    rng = np.random.default_rng(cfg.seed)
    field = TextureField(cfg.grid, n_labels=n_parts if labeled else 0, hidden=cfg.hidden,
                         seed=cfg.seed)
    albedo_maps = UVMaps(albedo=np.asarray(albedo_uv, dtype=np.float64))
    tactile_maps = [UVMaps(normal=np.asarray(t, dtype=np.float64)) for t in tactile_uvs]
    prompts = list(cfg.tactile_prompts) or [cfg.prompt] * n_parts
    sched = TimestepSchedule(cfg.t_hi, cfg.t_lo, cfg.phase2_iters)
    history, views = [], []
    total_iters = cfg.phase1_iters + cfg.phase2_iters
    start = time.perf_counter()

    for it in range(total_iters):
        phase2 = it >= cfg.phase1_iters
        w = cfg.phase2 if phase2 else cfg.phase1
        p2_iter = it - cfg.phase1_iters
        t_start = schedule_t(sched, p2_iter) if phase2 else None
        grad = np.zeros(field.n_params, dtype=np.float64)
        sums = dict.fromkeys(("l_vm", "l_tm", "l_vg", "l_tg", "l_label"), 0.0)

        for rep in range(cfg.views_per_iter):
            noise_seed = int(rng.integers(2 ** 31))
            # visual view
            if labeled:
                vi = int(rng.integers(len(label_views)))
                cam = label_views[vi].camera
            else:
                vi = it * cfg.views_per_iter + rep
                cam = sample_visual_camera(vi, rng, cfg.visual_resolution)
            views.append((it, "visual", cam.to_dict()))
            g = rasterize(mesh, cam)
            mask = erode(g.mask)
            rs = render(mesh, cam, field, g=g)
            ref = render(mesh, cam, albedo_maps, g=g)
            l_vm, d_a = loss_vm(rs.albedo, ref.albedo, mask,
                                "mean-color" if phase2 else "per-pixel")
            sums["l_vm"] += l_vm
            d_color = d_labels = None
            if phase2 and w.vg > 0:
                req = GuidanceRequest(rs.color, rs.normal, cfg.prompt, t_start, noise_seed,
                                      "visual", vi, p2_iter)
                l_vg, d_c = loss_vg(rs.color, provider.refine(req), mask)
                sums["l_vg"] += l_vg
                d_color = w.vg * d_c
            if labeled:
                l_lab, d_l = loss_label(rs.labels, label_views[vi].labels, mask)
                sums["l_label"] += l_lab
                d_labels = cfg.label_weight * d_l
            grad += render_backward(rs, d_color=d_color, d_albedo=w.vm * d_a, d_labels=d_labels)

            # tactile view
            ti = it * cfg.views_per_iter + rep
            tcam = sample_tactile_camera(mesh, rng, cfg.texel_scale, cfg.tactile_resolution, ti)
            views.append((it, "tactile", tcam.to_dict()))
            tg = rasterize(mesh, tcam)
            tmask = erode(tg.mask)
            trs = render(mesh, tcam, field, g=tg)
            refs = [render(mesh, tcam, tm, g=tg).tactile for tm in tactile_maps]
            pmasks = part_masks(trs.labels, tmask) if n_parts > 1 else None
            if pmasks is not None:
                l_tm, d_t = masked_tactile_losses(trs.tactile, refs, pmasks, tmask)
            else:
                l_tm, d_t = loss_tm(trs.tactile, refs[0], tmask)
            sums["l_tm"] += l_tm
            d_tactile = w.tm * d_t
            if phase2 and w.tg > 0:
                targets = [provider.refine(GuidanceRequest(trs.tactile, None, prompts[n], t_start,
                                                           noise_seed, "tactile", ti, p2_iter))
                           for n in range(n_parts)]
                if pmasks is not None:
                    l_tg, d_g = masked_tactile_losses(trs.tactile, targets, pmasks, tmask)
                else:
                    l_tg, d_g = loss_tg(trs.tactile, targets[0], tmask)
                sums["l_tg"] += l_tg
                d_tactile = d_tactile + w.tg * d_g
            grad += render_backward(trs, d_tactile=d_tactile)

        k = cfg.views_per_iter
        row = {"iteration": it, "phase": 2 if phase2 else 1}
        row.update({name: v / k for name, v in sums.items() if labeled or name != "l_label"})
        parts = (row["l_vm"], row["l_tm"], row["l_vg"], row["l_tg"])
        try:
            row["total"] = total_loss(parts, w) + cfg.label_weight * row.get("l_label", 0.0)
        except ValueError as exc:
            raise FitError(f"iteration {it}: {exc}") from exc
        if not math.isfinite(row["total"]) or not np.all(np.isfinite(grad)):
            raise FitError(f"iteration {it}: non-finite loss or gradient, parts={parts}, "
                           f"label={row.get('l_label')}")
        field.adam_step(grad / k, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        history.append(row)
        if progress:
            progress(row)
        log.debug("iter %d %s", it, row)
    return FitResult(field, history, views, time.perf_counter() - start)


def evaluate(field, mesh, albedo_uv, tactile_uvs, n_views=8, seed=12345, part_of=None,
             visual_resolution=VISUAL_RESOLUTION, texel_scale=DEFAULT_TEXEL_SCALE):
    """Held-out errors: albedo mean abs error and tactile mean angular error (degrees).

    ``part_of(points) -> 1-based part`` selects the reference tactile map per
    pixel when several maps are given; per-part angular errors are returned too.
    """
    if isinstance(tactile_uvs, np.ndarray):
        tactile_uvs = [tactile_uvs]
    rng = np.random.default_rng(seed)
    albedo_maps = UVMaps(albedo=np.asarray(albedo_uv, dtype=np.float64))
    tactile_maps = [UVMaps(normal=np.asarray(t, dtype=np.float64)) for t in tactile_uvs]
    abs_err, n_alb = 0.0, 0
    ang = [[] for _ in tactile_maps]
    for i in range(n_views):
        cam = sample_visual_camera(i, rng, visual_resolution)
        g = rasterize(mesh, cam)
        mask = erode(g.mask)
        got = render(mesh, cam, field, g=g).albedo[mask]
        want = render(mesh, cam, albedo_maps, g=g).albedo[mask]
        abs_err += np.abs(got - want).sum()
        n_alb += got.size
        tcam = sample_tactile_camera(mesh, rng, texel_scale, index=i)
        tg = rasterize(mesh, tcam)
        tmask = erode(tg.mask)
        pred = render(mesh, tcam, field, g=tg).tactile
        owner = part_of(tg.position) if part_of is not None else np.ones(tmask.shape, int)
        for n, tm in enumerate(tactile_maps):
            sel = tmask & (owner == n + 1)
            if not sel.any():
                continue
            ref = render(mesh, tcam, tm, g=tg).tactile
            cos = np.clip(np.sum(pred[sel] * ref[sel], axis=1), -1.0, 1.0)
            ang[n].append(np.degrees(np.arccos(cos)))
    per_part = [float(np.concatenate(a).mean()) if a else float("nan") for a in ang]
    every = np.concatenate([np.concatenate(a) for a in ang if a])
    return {"albedo_mae": abs_err / max(n_alb, 1), "tactile_deg": float(every.mean()),
            "tactile_deg_per_part": per_part}


def label_iou(field, mesh, label_views):
    """Per-part IoU between argmax rendered labels and the given label maps."""
    n = field.n_labels
    inter = np.zeros(n)
    union = np.zeros(n)
    for v in label_views:
        rs = render(mesh, v.camera, field)
        pred = np.where(rs.mask, np.argmax(rs.labels, axis=-1) + 1, 0)
        for p in range(1, n + 1):
            a, b = pred == p, v.labels == p
            inter[p - 1] += np.count_nonzero(a & b)
            union[p - 1] += np.count_nonzero(a | b)
    return inter / np.maximum(union, 1)
