"""Command-line entry point: ``touchtex <subcommand> ...``.

For ``fit``, settings resolve as command-line flag, then the ``--config``
JSON file, then the built-in default. Every run that writes outputs also
appends a record to ``manifest.json`` next to them with input hashes, the
resolved config, its SHA-256 and the output paths.
"""
import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .bake import bake, turntable
from .field import TextureField
from .guidance import make_provider
from .io import (read_color_png, read_label_png, read_mask_png, read_normal_png, read_png,
                 read_tensor, write_label_png, write_normal_png, write_tensor)
from .mesh import load_mesh, project_vertex_albedo
from .parts import AttentionMaps, kl_assign
from .quilt import QuiltParams, quilt_height
from .raster import Camera, UVMaps, VERTEX_COLORS
from .tactile import DEFAULT_PITCH_MM, HeightMap, decode_normal_image, height_to_normals, ingest
from .train import LabeledView, TrainConfig, fit, write_history

log = logging.getLogger("touchtex")

# fit flags that set config keys of the same name; a --config file wins over them
FIT_OVERRIDES = ("phase1_iters", "phase2_iters", "lr", "views_per_iter", "seed", "prompt",
                 "texel_scale")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command, inputs, outputs, config=None, seed=None):
    doc = {"command": command, "version": __version__,
           "inputs": {k: {"path": os.path.abspath(p), "sha256": sha256_file(p)}
                      for k, p in inputs.items() if p},
           "outputs": {k: os.path.abspath(p) for k, p in outputs.items()},
           "seed": seed}
    if config is not None:
        blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
        doc["config"] = config
        doc["config_sha256"] = hashlib.sha256(blob).hexdigest()
    path = os.path.join(out_dir or ".", "manifest.json")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    runs = []
    if os.path.exists(path):
        try:
            with open(path) as fh:
                runs = json.load(fh).get("runs", [])
        except (json.JSONDecodeError, AttributeError):
            log.warning("replacing unreadable manifest %s", path)
    runs.append(doc)
    with open(path, "w") as fh:
        json.dump({"runs": runs}, fh, indent=2)
    return path


def _out_dir(path):
    return os.path.dirname(os.path.abspath(path))


def cmd_ingest(a):
    mask = read_mask_png(a.mask) if a.mask else None
    normals = decode_normal_image(read_png(a.input), mask, a.pitch_mm)
    h, n = ingest(normals, a.hp_sigma_mm)
    write_tensor(a.out_height, h.data, pitch_mm=h.pitch_mm)
    outputs = {"height": a.out_height}
    if a.out_normal:
        write_normal_png(a.out_normal, n.data)
        outputs["normal"] = a.out_normal
    write_manifest(_out_dir(a.out_height), "ingest", {"normal_image": a.input, "mask": a.mask},
                   outputs, {"pitch_mm": a.pitch_mm, "hp_sigma_mm": a.hp_sigma_mm})
    print(f"height {h.data.shape[1]}x{h.data.shape[0]} -> {a.out_height}")


def cmd_quilt(a):
    exemplars = []
    for p in a.input:
        data, head = read_tensor(p)
        if data.ndim != 2:
            raise ValueError(f"{p}: height tensor must be 2-D")
        exemplars.append(HeightMap(data, None, float(head.get("pitch_mm", DEFAULT_PITCH_MM))))
    params = QuiltParams(block_px=a.block, overlap_px=a.overlap, tolerance=a.tol,
                         out_width=a.size, out_height=a.size, seed=a.seed)
    h = quilt_height(exemplars, params)
    write_tensor(a.out_height, h.data, pitch_mm=h.pitch_mm)
    outputs = {"height": a.out_height}
    if a.out_normal:
        write_normal_png(a.out_normal, height_to_normals(h).data)
        outputs["normal"] = a.out_normal
    write_manifest(_out_dir(a.out_height), "quilt",
                   {f"exemplar_{i}": p for i, p in enumerate(a.input)}, outputs,
                   {"block": a.block, "overlap": a.overlap, "tol": a.tol, "size": a.size}, a.seed)
    print(f"quilted {a.size}x{a.size} from {len(exemplars)} exemplar(s) -> {a.out_height}")


def resolve_config(path, flags):
    """Built-in defaults, overlaid by explicit flags, overlaid by the config file."""
    d = TrainConfig().to_dict()
    for key in FIT_OVERRIDES:
        value = getattr(flags, key)
        if value is not None:
            d[key] = value
    if path:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ValueError(f"config {path} must hold a JSON object")
        d.update(user)
    cfg = TrainConfig.from_dict(d)
    return cfg, cfg.to_dict()


def load_label_views(directory):
    path = os.path.join(directory, "views.json")
    try:
        with open(path) as fh:
            cams = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"label directory needs a valid views.json: {exc}") from exc
    return [LabeledView(Camera.from_dict(c), read_label_png(os.path.join(directory,
                                                                         f"label_{i}.png")))
            for i, c in enumerate(cams)]


def cmd_fit(a):
    cfg, cfg_dict = resolve_config(a.config, a)
    mesh = load_mesh(a.mesh)
    if a.albedo:
        albedo = read_color_png(a.albedo)
    elif mesh.vertex_colors is not None:
        albedo, _ = project_vertex_albedo(mesh)
    else:
        raise ValueError("need --albedo or a mesh with vertex colors")
    tactile = []
    for p in (a.tactile, a.tactile2):
        if p:
            n, valid = read_normal_png(p)
            if not valid.any():
                raise ValueError(f"{p}: no valid normals")
            tactile.append(n)
    views = load_label_views(a.labels) if a.labels else None
    provider = make_provider(a.provider)

    def progress(row):
        if row["iteration"] % 10 == 0:
            log.info("iter %d total %.5f", row["iteration"], row["total"])

    result = fit(mesh, albedo, tactile, provider, cfg, views, progress)
    result.field.save(a.out)
    stem = os.path.splitext(a.out)[0]
    history = a.history or stem + "_history.csv"
    write_history(history, result.history)
    views_path = stem + "_views.json"
    with open(views_path, "w") as fh:
        json.dump([{"iteration": it, "kind": kind, "camera": cam}
                   for it, kind, cam in result.views], fh)
    inputs = {"mesh": a.mesh, "albedo": a.albedo, "tactile": a.tactile, "tactile2": a.tactile2,
              "config": a.config}
    write_manifest(_out_dir(a.out), "fit", inputs,
                   {"checkpoint": a.out, "history": history, "views": views_path},
                   dict(cfg_dict, provider=a.provider), cfg.seed)
    last = result.history[-1]
    print(f"fit {len(result.history)} iterations in {result.seconds:.1f}s, "
          f"final total {last['total']:.5f} -> {a.out}")


def cmd_assign_labels(a):
    self_maps, _ = read_tensor(a.self_attn)
    cross_maps, _ = read_tensor(a.cross_attn)
    names = a.names.split(",") if a.names else []
    maps = AttentionMaps(self_maps.astype(np.float64), cross_maps.astype(np.float64), names)
    maps.validate()
    mapping, labels = kl_assign(maps.self_clusters, maps.cross)
    write_label_png(a.out, labels)
    outputs = {"labels": a.out}
    if a.mapping:
        with open(a.mapping, "w") as fh:
            json.dump({"mapping": {str(k): v for k, v in mapping.items()}, "parts": names}, fh)
        outputs["mapping"] = a.mapping
    write_manifest(_out_dir(a.out), "assign-labels",
                   {"self": a.self_attn, "cross": a.cross_attn}, outputs)
    print(f"assigned {len(mapping)} clusters to {len(maps.cross)} parts -> {a.out}")


def cmd_bake(a):
    field = TextureField.load(a.ckpt)
    mesh = load_mesh(a.mesh)
    result = bake(field, mesh, a.resolution)
    paths = result.save(a.out)
    write_manifest(a.out, "bake", {"checkpoint": a.ckpt, "mesh": a.mesh}, paths,
                   {"resolution": a.resolution})
    print(f"baked {a.resolution}x{a.resolution} maps -> {a.out}")


def cmd_render(a):
    mesh = load_mesh(a.mesh)
    chosen = [x for x in (a.ckpt, a.maps, a.vertex_colors or None) if x]
    if len(chosen) != 1:
        raise ValueError("choose exactly one of --ckpt, --maps, --vertex-colors")
    inputs = {"mesh": a.mesh}
    if a.ckpt:
        source = TextureField.load(a.ckpt)
        inputs["checkpoint"] = a.ckpt
    elif a.maps:
        albedo = os.path.join(a.maps, "albedo.png")
        normal = os.path.join(a.maps, "tactile_normal.png")
        source = UVMaps(albedo=read_color_png(albedo), normal=read_normal_png(normal)[0])
        inputs.update(albedo=albedo, tactile_normal=normal)
    else:
        source = VERTEX_COLORS
    frames = turntable(mesh, source, a.frames, a.elevation, a.resolution, a.out)
    write_manifest(a.out, "render", inputs, {"frames": a.out},
                   {"frames": a.frames, "elevation": a.elevation, "resolution": a.resolution})
    print(f"rendered {len(frames)} frames -> {a.out}")


def build_parser():
    p = argparse.ArgumentParser(
        prog="touchtex", description="Tactile texture fields: ingest, quilt, fit, bake, render.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("ingest", help="normal image -> detrended height + normal map")
    s.add_argument("--in", dest="input", required=True, help="8/16-bit RGB normal PNG")
    s.add_argument("--mask", help="optional single-channel validity PNG")
    s.add_argument("--pitch-mm", type=float, default=DEFAULT_PITCH_MM)
    s.add_argument("--hp-sigma-mm", type=float, default=1.0)
    s.add_argument("--out-height", required=True, help="output height tensor (.f32t)")
    s.add_argument("--out-normal", help="output 16-bit normal PNG")
    s.set_defaults(run=cmd_ingest)

    s = sub.add_parser("quilt", help="synthesize a large height map from exemplars")
    s.add_argument("--in", dest="input", nargs="+", required=True, help="height tensors")
    s.add_argument("--block", type=int, default=64)
    s.add_argument("--overlap", type=int, default=10)
    s.add_argument("--tol", type=float, default=0.1)
    s.add_argument("--size", type=int, default=1024)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-height", required=True)
    s.add_argument("--out-normal")
    s.set_defaults(run=cmd_quilt)

    s = sub.add_parser("fit", help="optimize a texture field",
                       description="Keys in --config override flags, which override defaults.")
    s.add_argument("--mesh", required=True, help="OBJ or PLY with UVs")
    s.add_argument("--albedo", help="albedo UV map PNG (default: project vertex colors)")
    s.add_argument("--tactile", required=True, help="tactile normal UV map PNG")
    s.add_argument("--tactile2", help="second part's tactile normal UV map")
    s.add_argument("--labels", help="directory with views.json and label_<i>.png")
    s.add_argument("--provider", default="identity", help="identity | blur | file:<dir>")
    s.add_argument("--config", help="JSON with training settings")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--history", help="loss history CSV (default: next to --out)")
    s.add_argument("--phase1-iters", type=int)
    s.add_argument("--phase2-iters", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--views-per-iter", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--prompt")
    s.add_argument("--texel-scale", type=float,
                   help="object units per tactile-texture pixel (default 2/1024)")
    s.set_defaults(run=cmd_fit)

    s = sub.add_parser("assign-labels", help="attention maps -> part label map")
    s.add_argument("--self", dest="self_attn", required=True, help="(K, H, W) tensor")
    s.add_argument("--cross", dest="cross_attn", required=True, help="(N, H, W) tensor")
    s.add_argument("--names", help="comma-separated part names")
    s.add_argument("--out", required=True, help="label PNG")
    s.add_argument("--mapping", help="write the cluster -> part mapping as JSON")
    s.set_defaults(run=cmd_assign_labels)

    s = sub.add_parser("bake", help="field checkpoint -> UV maps")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--mesh", required=True)
    s.add_argument("--resolution", type=int, default=1024)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(run=cmd_bake)

    s = sub.add_parser("render", help="turntable renders")
    s.add_argument("--mesh", required=True)
    s.add_argument("--ckpt", help="render the field")
    s.add_argument("--maps", help="render baked maps from this directory")
    s.add_argument("--vertex-colors", action="store_true", help="render mesh vertex colors")
    s.add_argument("--frames", type=int, default=8)
    s.add_argument("--elevation", type=float, default=20.0)
    s.add_argument("--resolution", type=int, default=512)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(run=cmd_render)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        args.run(args)
    except (ValueError, OSError, RuntimeError, KeyError, TypeError) as exc:
        print(f"touchtex {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
