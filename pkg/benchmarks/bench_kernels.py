"""Compare the numba and pure-numpy kernel paths.

Usage::

    python benchmarks/bench_kernels.py [--size 64] [--repeat 20]

Each kernel is warmed up once (so numba compilation is excluded) and then
timed with ``timeit``; the best of ``--repeat`` runs is reported.
"""

import argparse
import timeit

import numpy as np

from latent_prior.kernels import numba_impl, numpy_impl


def cases(size: int, rng: np.random.Generator):
    lat = rng.standard_normal((4, size, size))
    lat2 = rng.standard_normal((4, size, size))
    m, v = np.zeros_like(lat), np.zeros_like(lat)
    img = rng.random((3, 8 * size // 4, 8 * size // 4))
    alpha = rng.random(img.shape[1:])
    x = rng.standard_normal((16, size, size))
    w = rng.standard_normal((32, 16, 3, 3))
    b = np.zeros(32)
    gy = rng.standard_normal((32, size, size))
    feat = rng.standard_normal((8, 4 * size, 4 * size))
    return {
        "l1_diff": lambda k: k.l1_diff(lat, lat2),
        "kl_grad": lambda k: k.kl_grad(lat, 0.1, 1.3, True),
        "adamw_update": lambda k: k.adamw_update(lat.copy(), lat2, m, v, 3, 0.1, 0.9, 0.999, 1e-8, 0.0),
        "blend": lambda k: k.blend(img, alpha, img),
        "blend_vjp": lambda k: k.blend_vjp(img, img, alpha, img),
        "block_sum": lambda k: k.block_sum(feat, 4),
        "conv2d 3x3": lambda k: k.conv2d(x, w, b),
        "conv2d_vjp 3x3": lambda k: k.conv2d_vjp(x, w, gy),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=64, help="latent side length")
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()

    table = cases(args.size, np.random.default_rng(0))
    print(f"{'kernel':<16}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, fn in table.items():
        times = {}
        for impl in (numpy_impl, numba_impl):
            fn(impl)
            runs = timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat)
            times[impl.NAME] = 1e3 * min(runs)
        print(f"{name:<16}{times['numpy']:>12.3f}{times['numba']:>12.3f}{times['numpy'] / times['numba']:>9.2f}x")


if __name__ == "__main__":
    main()
