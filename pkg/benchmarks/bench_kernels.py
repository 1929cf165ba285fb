"""Time every hot kernel under both implementations.

    python benchmarks/bench_kernels.py [--repeat 3] [--scale 1.0]

Numba compile time is measured on a tiny warm-up call and reported apart from
the steady-state timings. Each kernel's outputs are cross-checked between the
two implementations before timing.
"""
import argparse
import time

import numpy as np

from cgcrw import _accel
from cgcrw.baselines import radius_graph


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(scale, rng):
    n_dense = int(3000 * scale)
    n_sparse = int(25_000 * scale)
    dense_pts = rng.random((n_dense, 3))
    # twenty clumps, roughly what a shifted 25k-point group looks like
    centers = rng.random((20, 3)) * [10, 10, 1]
    sparse_pts = centers[rng.integers(0, 20, n_sparse)] + rng.normal(scale=0.15, size=(n_sparse, 3))
    weak = np.full(n_sparse, -1)
    weak[rng.choice(n_sparse, 200, replace=False)] = rng.integers(0, 20, 200)
    g = radius_graph(sparse_pts, 0.05)
    km_pts = rng.random((int(200_000 * scale), 3))
    return [
        ("gaussian_affinity", f"n={n_dense}", (dense_pts, 0.3)),
        ("radius_csr", f"n={n_sparse}", (sparse_pts, 0.9, -1.0 / (2 * 0.3**2), weak)),
        ("nearest_center", f"n={km_pts.shape[0]}, k=20", (km_pts, km_pts[:20].copy())),
        ("csr_components", f"n={n_sparse}, nnz={g.nnz}", (g.indptr.astype(np.int64), g.indices.astype(np.int64), n_sparse)),
    ]


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    if np.issubdtype(np.asarray(a).dtype, np.floating):
        return np.allclose(a, b, rtol=1e-12, atol=0)
    return np.array_equal(a, b)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--scale", type=float, default=1.0, help="multiply every problem size")
    args = p.parse_args()
    rng = np.random.default_rng(0)
    impls = _accel.IMPLEMENTATIONS
    if "numba" not in impls:
        print("numba unavailable; timing the numpy kernels only")

    print(f"{'kernel':<18} {'size':<26} {'numpy s':>9} {'numba s':>9} {'speedup':>8} {'compile s':>10}")
    for name, size, call_args in cases(args.scale, rng):
        ref = impls["numpy"][name](*call_args)
        t_np = best_of(lambda: impls["numpy"][name](*call_args), args.repeat)
        if "numba" in impls:
            fn = impls["numba"][name]
            t0 = time.perf_counter()
            if name == "csr_components":
                small = (np.zeros(2, dtype=np.int64), np.zeros(0, dtype=np.int64), 1)
            else:
                small = tuple(a[:50] if isinstance(a, np.ndarray) and a.ndim == 2 else a for a in call_args)
                small = tuple(a[:50] if isinstance(a, np.ndarray) and a.ndim == 1 and a.size == call_args[0].shape[0] else a for a in small)
            fn(*small)
            compile_s = time.perf_counter() - t0
            assert same(ref, fn(*call_args)), f"{name}: implementations disagree"
            t_nb = best_of(lambda: fn(*call_args), args.repeat)
            print(f"{name:<18} {size:<26} {t_np:9.3f} {t_nb:9.3f} {t_np / t_nb:7.1f}x {compile_s:10.2f}")
        else:
            print(f"{name:<18} {size:<26} {t_np:9.3f} {'-':>9} {'-':>8} {'-':>10}")


if __name__ == "__main__":
    main()
