#!/usr/bin/env python3
"""Benchmark the compiled splatting kernels against the NumPy fallback.

Times forward rendering and the analytic backward pass on randomized scenes
of increasing size, verifies both backends agree, and prints the speedup.

    python benchmarks/bench_kernels.py [--frame 128] [--reps 20]
"""

import argparse
import math
import time

import numpy as np

from negsplat.model import SplatModel
from negsplat.renderer import available_backends, backward, render


def random_scene(rng, n, frame):
    return SplatModel(
        positions=rng.uniform(0, frame, size=(n, 2)),
        log_scales=rng.uniform(0.0, 2.0, size=(n, 2)),
        rotations=rng.uniform(-math.pi, math.pi, size=n),
        opacity_logits=rng.uniform(-2, 2, size=n),
        colors=rng.uniform(0, 1, size=(n, 3)),
        depths=rng.uniform(0, 1, size=n),
        sign_mask=rng.random(n) < 0.2,
        background=np.full(3, 0.1),
    )


def best_of(fn, reps):
    fn()  # warm up
    best = math.inf
    for _ in range(max(3, reps // 5)):
        start = time.perf_counter()
        for _ in range(reps):
            fn()
        best = min(best, (time.perf_counter() - start) / reps)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--frame", type=int, default=128)
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernels unavailable; only the numpy backend is installed")
    rng = np.random.default_rng(args.seed)
    frame_px = args.frame
    frame_grad = rng.standard_normal((frame_px, frame_px, 3))

    print(f"frame {frame_px}x{frame_px}, best-of timing over {args.reps} reps\n")
    header = f"{'splats':>7} {'op':>9}" + "".join(f" {b:>12}" for b in backends)
    if len(backends) == 2:
        header += f" {'speedup':>9}"
    print(header)

    for n in (16, 64, 256, 1024):
        model = random_scene(rng, n, frame_px)
        frames = {
            b: render(model, frame_px, frame_px, backend=b) for b in backends
        }
        if len(backends) == 2:
            np.testing.assert_allclose(
                frames["cython"].pixels, frames["numpy"].pixels,
                rtol=1e-12, atol=1e-14,
            )
        for op in ("forward", "backward"):
            times = {}
            for b in backends:
                if op == "forward":
                    fn = lambda: render(model, frame_px, frame_px, backend=b)
                else:
                    fn = lambda: backward(model, frame_grad, frames[b], backend=b)
                times[b] = best_of(fn, args.reps)
            row = f"{n:>7} {op:>9}" + "".join(
                f" {1e3 * times[b]:>9.2f} ms" for b in backends
            )
            if len(backends) == 2:
                row += f" {times['numpy'] / times['cython']:>8.1f}x"
            print(row)


if __name__ == "__main__":
    main()
