"""Regenerate the checked-in demo inputs under data/.

data/bumps_sensor.png   16-bit normal image of a bumpy surface pressed into the sensor
data/sphere.obj         icosphere with equirectangular UVs and vertex colors
"""
import argparse
from pathlib import Path

import numpy as np

from touchtex.io import encode_normals, write_png
from touchtex.mesh import icosphere, save_obj
from touchtex.synthetic import bump_height, sensor_frame, sphere_colors


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=Path(__file__).resolve().parent.parent / "data", type=Path)
    ap.add_argument("--seed", type=int, default=7)
    a = ap.parse_args()
    a.out.mkdir(parents=True, exist_ok=True)
    h = bump_height(np.random.default_rng(a.seed))
    write_png(a.out / "bumps_sensor.png", encode_normals(sensor_frame(h, contact_bump=0.3)))
    save_obj(a.out / "sphere.obj", icosphere(3, colors=sphere_colors))
    print(f"wrote demo data to {a.out}")


if __name__ == "__main__":
    main()
