"""Hot inner loops, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports cleanly and the environment
variable ``TRIMPRUNE_DISABLE_NUMBA`` is unset (or "0").  Both paths must
produce identical masks; float reductions agree to rounding.
"""
import os

import numpy as np

_disabled = os.environ.get("TRIMPRUNE_DISABLE_NUMBA", "0") not in ("", "0")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and not _disabled


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def py_stable_row_order(scores):
    return np.argsort(scores, axis=1, kind="stable")


def py_mask_from_order(order, counts):
    # rank[i, j] = position of column j in row i's ascending order
    rows, cols = order.shape
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(cols)[None, :].repeat(rows, 0), axis=1)
    return rank < counts[:, None]


def py_row_cosine(y, yhat):
    y = y.astype(np.float64)
    yhat = yhat.astype(np.float64)
    dot = np.einsum("ij,ij->i", y, yhat)
    ny = np.sqrt(np.einsum("ij,ij->i", y, y))
    nh = np.sqrt(np.einsum("ij,ij->i", yhat, yhat))
    out = np.zeros(y.shape[0])
    both_zero = (ny == 0) & (nh == 0)
    ok = (ny > 0) & (nh > 0)
    out[ok] = dot[ok] / (ny[ok] * nh[ok])
    out[both_zero] = 1.0
    return np.clip(out, -1.0, 1.0)


def py_gini_sorted(v):
    n = v.shape[0]
    total = v.sum()
    if n == 0 or total <= 0:
        return 0.0
    weights = 2.0 * np.arange(1, n + 1) - n - 1
    return float(np.dot(weights, v) / (n * total))


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if numba is not None:

    @numba.njit(cache=True)
    def nb_stable_row_order(scores):
        rows, cols = scores.shape
        order = np.empty((rows, cols), dtype=np.int64)
        for i in range(rows):
            order[i, :] = np.argsort(scores[i, :], kind="mergesort")
        return order

    @numba.njit(cache=True)
    def nb_mask_from_order(order, counts):
        rows, cols = order.shape
        mask = np.zeros((rows, cols), dtype=np.bool_)
        for i in range(rows):
            for r in range(counts[i]):
                mask[i, order[i, r]] = True
        return mask

    @numba.njit(cache=True)
    def nb_row_cosine(y, yhat):
        rows, cols = y.shape
        out = np.zeros(rows)
        for i in range(rows):
            dot = 0.0
            ny = 0.0
            nh = 0.0
            for j in range(cols):
                a = np.float64(y[i, j])
                b = np.float64(yhat[i, j])
                dot += a * b
                ny += a * a
                nh += b * b
            if ny == 0.0 and nh == 0.0:
                out[i] = 1.0
            elif ny > 0.0 and nh > 0.0:
                c = dot / (np.sqrt(ny) * np.sqrt(nh))
                out[i] = min(1.0, max(-1.0, c))
        return out

    @numba.njit(cache=True)
    def nb_gini_sorted(v):
        n = v.shape[0]
        total = 0.0
        acc = 0.0
        for i in range(n):
            total += v[i]
            acc += (2.0 * (i + 1) - n - 1) * v[i]
        if n == 0 or total <= 0.0:
            return 0.0
        return acc / (n * total)


# numpy's stable argsort beats numba's mergesort (see benchmarks/), so the
# sort stays on numpy in both paths
stable_row_order = py_stable_row_order

if USE_NUMBA:
    mask_from_order = nb_mask_from_order
    row_cosine = nb_row_cosine
    gini_sorted = nb_gini_sorted
else:
    mask_from_order = py_mask_from_order
    row_cosine = py_row_cosine
    gini_sorted = py_gini_sorted
