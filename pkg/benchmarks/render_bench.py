"""Benchmark the compiled splatting kernel against the numpy fallback.

Usage: python benchmarks/render_bench.py [--sizes 128,256,512] [--points 500,2000,8000]
"""

import argparse
import time

import numpy as np

from sgw._kernels import splat_np
from sgw.camera import Camera
from sgw.cloud import GaussianCloud
from sgw.render import project

try:
    from sgw._kernels import _splat_cy
except ImportError:
    _splat_cy = None


def scene(n_points, size, seed=0):
    rng = np.random.default_rng(seed)
    rot = np.zeros((n_points, 4))
    rot[:, 0] = 1.0
    cloud = GaussianCloud(
        positions=np.stack([
            rng.uniform(-0.4, 0.4, size=n_points),
            rng.uniform(0.8, 1.8, size=n_points),
            rng.uniform(-0.4, 0.4, size=n_points),
        ], axis=1),
        scales=rng.uniform(0.005, 0.03, size=n_points),
        rotations=rot,
        colors=rng.uniform(size=(n_points, 3)),
        opacities=rng.uniform(0.1, 0.9, size=n_points),
        labels=np.zeros(n_points, dtype=np.uint16),
        bind_idx=np.full(n_points, -1, dtype=np.int32),
    )
    cam = Camera.orbit(30.0, 10.0, 2.5, target=(0, 1.3, 0), width=size, height=size)
    proj = project(cloud, cam)
    vis = np.flatnonzero(proj.visible)
    order = vis[np.lexsort((vis, proj.depth[vis]))].astype(np.int64)
    args = (order, np.ascontiguousarray(proj.mean2d), np.ascontiguousarray(proj.sigma2d),
            np.ascontiguousarray(proj.depth), np.ascontiguousarray(cloud.colors),
            np.ascontiguousarray(cloud.opacities), np.zeros(3))
    u_rgb = rng.normal(size=(size, size, 3))
    u_alpha = rng.normal(size=(size, size))
    return args, u_rgb, u_alpha, cam


def time_backend(impl, args, u_rgb, u_alpha, cam, repeats=3):
    fwd = []
    bwd = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        _, _, tfinal, _ = impl.composite_forward(*args, cam.width, cam.height)
        fwd.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        impl.composite_backward(*args, np.ascontiguousarray(tfinal), u_rgb, u_alpha,
                                cam.width, cam.height)
        bwd.append(time.perf_counter() - t0)
    return min(fwd), min(bwd)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="128,256,512")
    ap.add_argument("--points", default="500,2000,8000")
    cli = ap.parse_args()

    sizes = [int(v) for v in cli.sizes.split(",")]
    counts = [int(v) for v in cli.points.split(",")]

    print(f"{'points':>8} {'size':>6} {'numpy fwd':>11} {'numpy bwd':>11} "
          f"{'cython fwd':>11} {'cython bwd':>11} {'speedup':>8}")
    for n in counts:
        for size in sizes:
            args, u_rgb, u_alpha, cam = scene(n, size)
            nf, nb = time_backend(splat_np, args, u_rgb, u_alpha, cam)
            if _splat_cy is None:
                print(f"{n:>8} {size:>6} {nf * 1e3:>9.1f}ms {nb * 1e3:>9.1f}ms "
                      f"{'---':>11} {'---':>11} {'---':>8}")
                continue
            cf, cb = time_backend(_splat_cy, args, u_rgb, u_alpha, cam)
            speed = (nf + nb) / (cf + cb)
            print(f"{n:>8} {size:>6} {nf * 1e3:>9.1f}ms {nb * 1e3:>9.1f}ms "
                  f"{cf * 1e3:>9.1f}ms {cb * 1e3:>9.1f}ms {speed:>7.1f}x")


if __name__ == "__main__":
    main()
