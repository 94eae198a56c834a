"""Benchmark the hot kernels: compiled (numba) vs interpreted fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py

The script re-executes itself once per mode in a subprocess, because the
``PDMVS_NO_NUMBA`` switch is read at import time.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def _bench_worker() -> dict:
    import numpy as np

    from pdmvs import kernels
    from pdmvs.synth import generate_scene
    from pdmvs.visibility import pair_geometry

    scene = generate_scene("textured-plane", seed=0, width=160, height=120,
                           n_views=2)
    ref = scene.images[0].astype(np.float64)
    src = scene.images[1].astype(np.float64)
    geom = pair_geometry(scene.cams[0], [scene.cams[1]])
    P1, P2, Kinv = geom["P1"][0], geom["P2"][0], geom["Kinv"]
    H = np.empty((3, 3))
    anchors = np.zeros((8, 2), dtype=np.int32)
    w_anchor = np.ones(8)
    rng = np.random.default_rng(0)
    h, w = ref.shape
    xs = rng.integers(10, w - 10, size=2000)
    ys = rng.integers(10, h - 10, size=2000)
    depths = rng.uniform(8.0, 12.0, size=2000)

    def run_view_cost():
        acc = 0.0
        for x, y, d in zip(xs, ys, depths):
            acc += kernels.view_cost(
                ref, src, P1, P2, Kinv, int(x), int(y),
                0.0, 0.0, -1.0, float(d),
                anchors, 0, w_anchor,
                11, 5, 2, 0.2, 0.25, H,
            )
        return acc

    def run_patch_ncc():
        acc = 0.0
        for x, y in zip(xs, ys):
            acc += kernels.patch_ncc(ref, src, np.eye(3), int(x), int(y),
                                     11, 2, 0.2)
        return acc

    reliable = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    reliable[((xx // 16) + (yy // 16)) % 2 == 0] = True
    dirs = np.stack([
        np.cos(np.pi / 8 + np.arange(8) * np.pi / 4),
        np.sin(np.pi / 8 + np.arange(8) * np.pi / 4),
    ], axis=1)
    anc = np.empty((h, w, 8, 2), dtype=np.int32)
    cnt = np.zeros((h, w), dtype=np.int32)

    def run_search():
        kernels.search_anchor_pixels(reliable, dirs, 2, 40, anc, cnt)
        return int(cnt.sum())

    results = {}
    for name, fn in [("view_cost x2000", run_view_cost),
                     ("patch_ncc x2000", run_patch_ncc),
                     ("anchor_search 160x120", run_search)]:
        fn()  # warm-up (JIT compile under numba)
        t0 = time.perf_counter()
        fn()
        results[name] = time.perf_counter() - t0
    return results


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--worker", action="store_true",
                        help=argparse.SUPPRESS)
    args = parser.parse_args(argv)

    if args.worker:
        print(json.dumps(_bench_worker()))
        return 0

    timings = {}
    for mode, no_numba in [("numba", "0"), ("numpy", "1")]:
        env = dict(os.environ, PDMVS_NO_NUMBA=no_numba)
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--worker"],
            env=env, capture_output=True, text=True, check=True,
        )
        timings[mode] = json.loads(out.stdout.strip().splitlines()[-1])

    width = max(len(k) for k in timings["numba"])
    print(f"{'kernel':<{width}}  {'numba':>10}  {'numpy':>10}  {'speedup':>8}")
    for name in timings["numba"]:
        tn, tp = timings["numba"][name], timings["numpy"][name]
        print(f"{name:<{width}}  {tn:>9.4f}s  {tp:>9.4f}s  {tp / tn:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
