"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints best-of-N wall time per kernel and the speedup.  The numba timings
exclude compilation (each kernel is called once first).  Also times one full
lr_search under whichever path the environment selects.
"""
import argparse
import time

import numpy as np

from trimprune import _kernels as K
from trimprune.optimizer import lr_search
from trimprune.scoring import score_wanda
from trimprune.tensor import Rng
from trimprune.toys import random_layer


def best_of(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--rows", type=int, default=512)
    ap.add_argument("--cols", type=int, default=1024)
    args = ap.parse_args()

    rng = Rng(0)
    d, n = args.rows, args.cols
    scores = rng.uniform((d, n))
    order = K.py_stable_row_order(scores)
    counts = rng.integers(n, d)
    y = rng.normal((d, 256))
    yhat = y + rng.normal((d, 256), 0.1)
    v = np.sort(rng.uniform(200_000))

    cases = [
        ("stable_row_order", K.py_stable_row_order, K.nb_stable_row_order, (scores,)),
        ("mask_from_order", K.py_mask_from_order, K.nb_mask_from_order, (order, counts)),
        ("row_cosine", K.py_row_cosine, K.nb_row_cosine, (y, yhat)),
        ("gini_sorted", K.py_gini_sorted, K.nb_gini_sorted, (v,)),
    ]
    print(f"{'kernel':<18} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, py, nb, a in cases:
        t_py = best_of(py, a, args.repeat)
        if K.numba is None:
            print(f"{name:<18} {t_py * 1e3:10.3f} {'n/a':>10} {'':>8}")
            continue
        t_nb = best_of(nb, a, args.repeat)
        print(f"{name:<18} {t_py * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_py / t_nb:7.2f}x")

    w, x = random_layer(1, 64, 128, 128)
    a = score_wanda(w, x)
    t = best_of(lambda: lr_search(w, x, a, 0.7), (), max(1, args.repeat // 2))
    path = "numba" if K.USE_NUMBA else "numpy"
    print(f"\nlr_search 64x128, T=0.7 ({path} path): {t * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
