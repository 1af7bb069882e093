"""Time the numba and numpy kernel backends side by side.

    python benchmarks/bench_kernels.py --rows 20000 --repeat 5
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from policyscope import kernels, synth
from policyscope.interpret import build


def _best_of(fn, repeat: int) -> float:
    fn()  # warm-up (includes JIT compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    n = args.rows
    x = np.sort(rng.normal(size=n))
    y = np.sin(3 * x) + rng.normal(scale=0.1, size=n)
    codes = rng.integers(0, 8, size=n)
    a, b = rng.integers(0, 20, size=n), rng.integers(0, 30, size=n)
    X = rng.normal(size=(n, 2))
    feature = np.array([0, 1, -1, -1, -1])
    threshold = np.array([0.0, 0.5, 0, 0, 0])
    left = np.array([1, 2, -1, -1, -1])
    right = np.array([4, 3, -1, -1, -1])
    ds = synth.attach_neurons(
        synth.generate_pendulum(controller="random", episodes=max(1, n // 200), horizon=200, seed=args.seed),
        [synth.quadrant_code(), synth.affine_mix(1, 0), synth.affine_mix(0, 1)],
    )

    cases = {
        "mse_split_scores": lambda k: k["mse_split_scores"](x, y, 1),
        "gini_split_scores": lambda k: k["gini_split_scores"](x, codes, 8, 1),
        "joint_counts": lambda k: k["joint_counts"](a, b, 20, 30),
        "apply_tree": lambda k: k["apply_tree"](X, feature, threshold, left, right),
    }
    backends = kernels.available_backends()
    print(f"rows={n} repeat={args.repeat} backends={backends}")
    print(f"{'case':<22}" + "".join(f"{b:>14}" for b in backends))
    for name, fn in cases.items():
        row = [_best_of(lambda: fn(kernels.get_kernels(b)), args.repeat) for b in backends]
        print(f"{name:<22}" + "".join(f"{t * 1e3:>12.3f}ms" for t in row))

    saved = kernels.BACKEND
    row = []
    for b in backends:
        kernels.BACKEND = b
        row.append(_best_of(lambda: build(ds), max(1, args.repeat // 2)))
    kernels.BACKEND = saved
    print(f"{'build (3 neurons)':<22}" + "".join(f"{t * 1e3:>12.3f}ms" for t in row))


if __name__ == "__main__":
    main()
