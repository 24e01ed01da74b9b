"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Shapes mirror the feed-forward depthwise layers of the toy model on a batch of
four 64x64 images, which is where training spends most of its kernel time.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from rganet import kernels

CASES = [
    # (n, c, h, w) of the padded depthwise input, 3x3 filters
    ("depthwise 128ch 64x64", (4, 128, 66, 66)),
    ("depthwise 256ch 32x32", (4, 256, 34, 34)),
    ("depthwise 512ch 16x16", (4, 512, 18, 18)),
]


def bench(backend, shape, dtype, repeat):
    rng = np.random.default_rng(0)
    xp = rng.standard_normal(shape).astype(dtype)
    w = rng.standard_normal((shape[1], 3, 3)).astype(dtype)
    oh, ow = shape[2] - 2, shape[3] - 2
    g = rng.standard_normal((shape[0], shape[1], oh, ow)).astype(dtype)
    fwd = min(timeit.repeat(lambda: backend.depthwise_forward(xp, w, oh, ow), number=1, repeat=repeat))
    bwd = min(timeit.repeat(lambda: backend.depthwise_backward(g, xp, w), number=1, repeat=repeat))
    gcols = rng.standard_normal((shape[0], shape[1] // 4, oh // 2, ow // 2, 3, 3)).astype(dtype)
    out_shape = (shape[0], shape[1] // 4, oh + 1, ow + 1)
    c2i = min(timeit.repeat(lambda: backend.col2im(gcols, out_shape, 2), number=1, repeat=repeat))
    return fwd, bwd, c2i


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    names = kernels.available_backends()
    print(f"backends: {', '.join(names)} (active: {kernels.BACKEND})")
    if "cython" not in names:
        print("compiled extension not built; only the numpy fallback is available")
    header = f"{'case':26s} {'dtype':8s} " + " ".join(f"{n + ' ' + op:>16s}" for n in names
                                                       for op in ("fwd", "bwd", "col2im"))
    print(header)
    for label, shape in CASES:
        for dtype in (np.float32, np.float64):
            cells = []
            for n in names:
                cells += [f"{t * 1e3:13.2f} ms" for t in bench(kernels.get_backend(n), shape, dtype, args.repeat)]
            print(f"{label:26s} {np.dtype(dtype).name:8s} " + " ".join(f"{c:>16s}" for c in cells))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
