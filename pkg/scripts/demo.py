"""End-to-end demo: ingest -> quilt -> fit -> bake -> render.

Starts from the checked-in sensor image and sphere under data/ and writes
everything into --out. The default run uses a short schedule at reduced
render resolution so it finishes in about a minute; pass --full for the
150 + 50 iteration schedule at full resolution.
"""
import argparse
import json
import sys
import time
from pathlib import Path

from touchtex.cli import main as touchtex

DATA = Path(__file__).resolve().parent.parent / "data"
QUICK = {"phase1_iters": 30, "phase2_iters": 10, "visual_resolution": 256,
         "tactile_resolution": 128}


def run(argv):
    print("$ touchtex " + " ".join(map(str, argv)), flush=True)
    t = time.perf_counter()
    code = touchtex([str(x) for x in argv])
    if code:
        sys.exit(f"step failed with exit code {code}")
    print(f"  ({time.perf_counter() - t:.1f}s)", flush=True)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("demo_out"))
    ap.add_argument("--data", type=Path, default=DATA)
    ap.add_argument("--full", action="store_true", help="150 + 50 iterations at full resolution")
    ap.add_argument("--frames", type=int, default=8)
    a = ap.parse_args(argv)
    out = a.out
    out.mkdir(parents=True, exist_ok=True)
    config = out / "config.json"
    config.write_text(json.dumps({} if a.full else QUICK, indent=2))

    run(["ingest", "--in", a.data / "bumps_sensor.png", "--out-height", out / "exemplar.f32t",
         "--out-normal", out / "exemplar_normal.png"])
    run(["quilt", "--in", out / "exemplar.f32t", "--size", 1024, "--seed", 0,
         "--out-height", out / "quilt.f32t", "--out-normal", out / "tactile_uv.png"])
    run(["fit", "--mesh", a.data / "sphere.obj", "--tactile", out / "tactile_uv.png",
         "--provider", "identity", "--config", config, "--out", out / "field.ckpt"])
    run(["bake", "--ckpt", out / "field.ckpt", "--mesh", a.data / "sphere.obj",
         "--out", out / "baked"])
    run(["render", "--mesh", a.data / "sphere.obj", "--maps", out / "baked",
         "--frames", a.frames, "--out", out / "turntable"])
    print(f"done: outputs in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
