"""Benchmark the jitted kernels against their pure-numpy references.

Usage:
    python benchmarks/bench_kernels.py [--repeats 20]

Runs each kernel on representative problem sizes and reports the median
wall-clock time for the numpy path and, when numba is available, the
compiled path (after a warm-up call so compilation is excluded).
Set ROM_NO_NUMBA=1 to verify the fallback path is selected.
"""

import argparse
import time

import numpy as np

from rom import kernels


def median_time(fn, args, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def bench(name, np_fn, jit_fn, args, repeats):
    t_np = median_time(np_fn, args, repeats)
    line = f"{name:<38s} numpy {t_np * 1e3:9.3f} ms"
    if kernels.USE_NUMBA:
        jit_fn(*args)  # warm-up: trigger compilation
        t_jit = median_time(jit_fn, args, repeats)
        line += f"   numba {t_jit * 1e3:9.3f} ms   speedup {t_np / t_jit:6.2f}x"
    print(line)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    mode = "numba" if kernels.USE_NUMBA else "numpy fallback (ROM_NO_NUMBA or numba missing)"
    print(f"kernel dispatch: {mode}\n")

    for m, n, iters in ((12, 12, 100), (40, 40, 300)):
        s = np.ascontiguousarray(rng.uniform(-5, 5, size=(m + 1, n + 1)))
        bench(f"sinkhorn {m}x{n} ({iters} iters)",
              kernels.sinkhorn_log_np, kernels._sinkhorn_log_jit,
              (s, iters), args.repeats)

    for n_obj, n_kp in ((12, 60), (40, 400)):
        boxes1 = np.sort(rng.uniform(0, 1, size=(n_obj, 2, 2)), axis=1)
        boxes2 = np.sort(rng.uniform(0, 1, size=(n_obj, 2, 2)), axis=1)
        kp1 = np.ascontiguousarray(rng.uniform(0, 1, size=(n_kp, 2)))
        kp2 = np.ascontiguousarray(rng.uniform(0, 1, size=(n_kp, 2)))
        b1 = np.ascontiguousarray(boxes1.reshape(n_obj, 4))
        b2 = np.ascontiguousarray(boxes2.reshape(n_obj, 4))
        bench(f"keypoint hits {n_kp} kp / {n_obj} boxes",
              kernels.count_keypoint_hits_np, kernels._count_keypoint_hits_jit,
              (kp1, kp2, b1, b2), args.repeats)

    for n_obj in (12, 100):
        a = np.ascontiguousarray(
            np.sort(rng.uniform(0, 1, size=(n_obj, 2, 2)), axis=1).reshape(n_obj, 4))
        b = np.ascontiguousarray(
            np.sort(rng.uniform(0, 1, size=(n_obj, 2, 2)), axis=1).reshape(n_obj, 4))
        bench(f"iou matrix {n_obj}x{n_obj}",
              kernels.iou_matrix_np, kernels._iou_matrix_jit,
              (a, b), args.repeats)


if __name__ == "__main__":
    main()
