"""Time the hot kernels on every available backend.

    python benchmarks/bench_kernels.py [--repeat 3] [--points 100000]

Prints the best-of-N wall time per kernel and the speedup of the compiled
backend over the numpy fallback.
"""
import argparse
import time

import numpy as np

from touchtex.field import HashGridConfig, TextureField
from touchtex.kernels import available_backends, get_backend
from touchtex.mesh import icosphere, uv_to_pixel


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(n_points, rng):
    field = TextureField(HashGridConfig(table_size_log2=16))
    pts = rng.uniform(0, 1, (n_points, 3)).astype(np.float32)
    table = field.view("hash")
    layout = (field.level_offsets, field.level_sizes, field.resolutions, field.dense)
    feats = rng.standard_normal((n_points, table.shape[1] * len(field.level_offsets)))
    feats = feats.astype(np.float32)

    m = icosphere(4)
    xy = uv_to_pixel(m.uvs, 512)
    key = rng.uniform(size=xy.shape[:2])
    cost = rng.uniform(size=(64, 64))
    p = rng.standard_normal(1 << 20).astype(np.float32)
    g = rng.standard_normal(p.shape).astype(np.float32)

    return {
        "hash_encode": lambda k: k.hash_encode(pts, table, *layout),
        "hash_encode_backward": lambda k: k.hash_encode_backward(pts, feats, table.shape[0],
                                                                 *layout),
        "rasterize_triangles": lambda k: k.rasterize_triangles(xy, key, 512, 512, -np.inf),
        "min_cut_seam": lambda k: k.min_cut_seam(cost),
        "adam_update": lambda k: k.adam_update(p.copy(), g, np.zeros_like(p), np.zeros_like(p),
                                               0.01, 0.9, 0.999, 1e-8, 1),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--points", type=int, default=100_000)
    a = ap.parse_args()
    backends = available_backends()
    work = cases(a.points, np.random.default_rng(0))
    print(f"{'kernel':24s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    for name, fn in work.items():
        t = {b: best_of(lambda: fn(get_backend(b)), a.repeat) for b in backends}
        speed = f"{t['python'] / t['c']:10.1f}x" if "c" in t else ""
        print(f"{name:24s}" + "".join(f"{t[b]:11.4f}s" for b in backends) + speed)


if __name__ == "__main__":
    main()
