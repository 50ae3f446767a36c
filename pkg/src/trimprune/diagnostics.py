"""Per-dimension analyses of score concentration and pruning sensitivity."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .allocation import per_dimension_outlier_counts
from .errors import ContractError
from .masking import DEFAULT_CUTOFF, mask_from_row_counts, row_cap, row_order
from .pipeline import ToyModel
from .quality import qmetric, qmetric_dimwise
from .scoring import score_wanda
from .tensor import Rng, as_matrix, matmul


def gini(v) -> float:
    """Gini coefficient via the mean absolute difference; 0 for an all-zero vector."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ContractError("gini of an empty vector")
    if np.any(v < 0):
        raise ContractError("gini needs nonnegative values")
    return float(_kernels.gini_sorted(np.sort(v)))


@dataclass
class GiniReport:
    layer_name: str
    per_row_gini: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray

    def to_json(self) -> dict:
        return {
            "layer": self.layer_name,
            "mean_gini": float(self.per_row_gini.mean()),
            "bin_edges": [float(e) for e in self.bin_edges],
            "counts": [int(c) for c in self.counts],
        }


def gini_report(scores, layer_name: str = "layer", bins: int = 20) -> GiniReport:
    a = np.asarray(scores, dtype=np.float64)
    g = np.array([gini(row) for row in a])
    counts, edges = np.histogram(g, bins=bins, range=(0.0, 1.0))
    return GiniReport(layer_name, g, edges, counts)


@dataclass
class DegradationCurve:
    sparsity_grid: np.ndarray
    per_dim_quality: np.ndarray  # D x len(grid)


def degradation_curve(w, x, scores, grid, cutoff: float = DEFAULT_CUTOFF) -> DegradationCurve:
    """Per-row cosine to the dense output while uniform sparsity rises along ``grid``.

    Every row loses round(t * N) of its lowest-scoring weights at grid point t.
    """
    w = as_matrix(w, "weights")
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0:
        raise ContractError("grid must be a non-empty 1-D sequence")
    if np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > cutoff + 1e-12:
        raise ContractError(f"grid must increase within [0, {cutoff}]")
    y = matmul(w, x)
    order = row_order(as_matrix(scores, "scores"))
    out = np.empty((w.shape[0], grid.size))
    d, n = w.shape
    cap = row_cap(cutoff, n)
    for j, t in enumerate(grid):
        # same count in every row, so curves are comparable across rows
        k = min(int(np.rint(t * n)), cap)
        mask = mask_from_row_counts(order, np.full(d, k))
        yhat = matmul(np.where(mask, np.float32(0), w), x)
        out[:, j] = qmetric_dimwise(y, yhat, "cosine")
    return DegradationCurve(grid, out)


def parse_grid(spec: str) -> np.ndarray:
    """``start:stop:step`` with an inclusive stop, e.g. ``0:0.95:0.05`` -> 20 points."""
    try:
        start, stop, step = (float(p) for p in spec.split(":"))
    except ValueError:
        raise ContractError(f"grid must look like start:stop:step, got {spec!r}") from None
    if step <= 0:
        raise ContractError("grid step must be positive")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(n), 12)


def _row_norms(w):
    w = np.asarray(w, dtype=np.float64)
    return np.sqrt(np.einsum("ij,ij->i", w, w))


def remove_one_dimension(model: ToyModel, strategy: str = "min_norm", seed: int = 0):
    """Zero exactly one output row in every layer."""
    if strategy not in ("min_norm", "max_norm", "random"):
        raise ContractError(f"unknown strategy {strategy!r}")
    rng = Rng(seed)
    out = model.copy()
    layers = []
    removed = 0
    for layer in out.layers:
        d = layer.weight.shape[0]
        if d < 2:
            raise ContractError(f"{layer.name} has fewer than two output dimensions")
        norms = _row_norms(layer.weight)
        if strategy == "min_norm":
            row = int(np.argmin(norms))
        elif strategy == "max_norm":
            row = int(np.argmax(norms))
        else:
            row = rng.integers(d)
        layer.weight[row, :] = 0.0
        removed += layer.weight.shape[1]
        layers.append({"name": layer.name, "row": row, "norm": float(norms[row])})
    report = {
        "schema_version": 1,
        "strategy": strategy,
        "seed": seed if strategy == "random" else None,
        "layers": layers,
        "total_sparsity": removed / model.n_params(),
    }
    return out, report


def select_rows(counts, n_select: int, arm: str, rng: Rng | None = None) -> np.ndarray:
    counts = np.asarray(counts)
    if arm == "outlier":
        order = np.lexsort((np.arange(counts.size), -counts))
    elif arm == "random":
        order = (rng or Rng(0)).permutation(counts.size)
    else:
        raise ContractError(f"unknown arm {arm!r}")
    return np.sort(order[:n_select])


def outlier_dense_stress(model: ToyModel, x_per_layer, m: float = 5.0, top_frac: float = 0.1,
                         row_sparsity: float = 0.9, arm: str = "outlier", seed: int = 0):
    """Heavily prune the rows with the most outlier scores (or random rows).

    Scores are Wanda scores on ``x_per_layer``.  Each selected row loses its
    round(row_sparsity * N) lowest-scoring weights; other rows stay dense.
    """
    if not 0 < top_frac < 1:
        raise ContractError("top_frac must lie in (0, 1)")
    if not 0 <= row_sparsity <= 1:
        raise ContractError("row_sparsity must lie in [0, 1]")
    if x_per_layer is None:
        raise ContractError("need per-layer activations")
    rng = Rng(seed)
    out = model.copy()
    layers = []
    pruned = 0
    for layer, x in zip(out.layers, x_per_layer):
        w = layer.weight
        d, n = w.shape
        a = score_wanda(w, x)
        counts = per_dimension_outlier_counts(a, m)
        n_sel = int(math.ceil(top_frac * d - 1e-9))
        rows = select_rows(counts, n_sel, arm, rng)
        k = min(int(np.rint(row_sparsity * n)), n)
        row_k = np.zeros(d, dtype=np.int64)
        row_k[rows] = k
        mask = mask_from_row_counts(row_order(a), row_k)
        y = matmul(w, x)
        w[mask] = 0.0
        pruned += int(mask.sum())
        layers.append({
            "name": layer.name,
            "rows": [int(r) for r in rows],
            "outlier_counts": [int(counts[r]) for r in rows],
            "layer_cosine": qmetric(y, matmul(w, x), "cosim_flat"),
        })
    report = {
        "schema_version": 1,
        "arm": arm,
        "m": m,
        "top_frac": top_frac,
        "row_sparsity": row_sparsity,
        "seed": seed if arm == "random" else None,
        "layers": layers,
        "total_sparsity": pruned / model.n_params(),
    }
    return out, report
