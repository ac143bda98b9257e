"""Time the compiled and numpy kernel backends side by side.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from gess.kernels import available_backends


def cases(rng):
    x = rng.normal(size=(16, 64, 64))
    w = rng.normal(size=(16, 16, 3, 3))
    b = rng.normal(size=16)
    scores = rng.uniform(size=(240, 320))
    da, db = rng.normal(size=(2, 2000, 128))
    fmap = rng.normal(size=(128, 60, 80))
    xy = np.column_stack([rng.uniform(0, 79, 5000), rng.uniform(0, 59, 5000)])
    return {
        "conv2d 16x64x64 k3": lambda m: m.conv2d(x, w, b, 1, 1),
        "nms 240x320 r4": lambda m: m.nms(scores, 4),
        "nearest_neighbors 2000x2000x128": lambda m: m.nearest_neighbors(da, db),
        "bilinear_sample 5000 pts c128": lambda m: m.bilinear_sample(fmap, xy),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; timing the numpy backend only")
    names = list(backends)
    print(f"{'kernel':34s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in cases(np.random.default_rng(0)).items():
        best = {}
        for name, mod in backends.items():
            fn(mod)  # warm up
            best[name] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        row = f"{label:34s}" + "".join(f"{best[n] * 1e3:10.2f}ms" for n in names)
        if len(names) > 1:
            row += f"{best['python'] / best['cython']:11.2f}x"
        print(row)


if __name__ == "__main__":
    main()
