"""Time the compiled and pure-Python masked-max kernels on identical inputs.

    python3 benchmarks/bench_kernels.py [--frames 20] [--grid 24] [--tracks 30] [--repeat 50]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from stvg import kernels


def make_inputs(frames: int, grid: int, tracks: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    a = rng.random((frames, grid, grid))
    b = rng.random((frames, grid, grid))
    lo = rng.integers(0, grid, (tracks, frames, 2))
    hi = np.minimum(lo + rng.integers(0, grid // 2 + 1, (tracks, frames, 2)), grid - 1)
    rects = np.stack([lo[..., 0], hi[..., 0], lo[..., 1], hi[..., 1]], axis=-1).astype(np.int32)
    rects[rng.random((tracks, frames)) < 0.2] = -1
    return a, b, rects


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--grid", type=int, default=24)
    p.add_argument("--tracks", type=int, default=30)
    p.add_argument("--repeat", type=int, default=50)
    args = p.parse_args(argv)

    a, b, rects = make_inputs(args.frames, args.grid, args.tracks)
    impls = kernels.available()
    if "cython" not in impls:
        print("compiled kernels unavailable; timing the pure-Python fallback only")
    cases = {
        "track_max": lambda m: kernels.track_max(a, rects, impl=m),
        "pair_track_max": lambda m: kernels.pair_track_max(a, b, rects, impl=m),
        "inside_outside_max": lambda m: kernels.inside_outside_max(a, rects[0], impl=m),
        "frame_max": lambda m: kernels.frame_max(a, impl=m),
    }
    print(f"T={args.frames} grid={args.grid}x{args.grid} tracks={args.tracks} repeat={args.repeat}")
    print(f"{'kernel':<20}" + "".join(f"{name + ' (us)':>16}" for name in sorted(impls)) + f"{'speedup':>10}")
    for name, fn in cases.items():
        outs = {k: fn(m) for k, m in impls.items()}
        ref = outs["python"]
        for k, out in outs.items():
            assert np.array_equal(np.asarray(out), np.asarray(ref)), f"{name}: {k} disagrees with python"
        times = {k: min(timeit.repeat(lambda m=m: fn(m), number=args.repeat, repeat=3)) / args.repeat * 1e6
                 for k, m in impls.items()}
        cols = "".join(f"{times[k]:>16.1f}" for k in sorted(impls))
        speed = f"{times['python'] / times['cython']:>9.1f}x" if "cython" in times else f"{'-':>10}"
        print(f"{name:<20}{cols}{speed}")


if __name__ == "__main__":
    main()
