"""Iterative dimension-wise sparsity adjustment and the learning-rate search.

Each iteration prunes the layer with the current per-row sparsity vector,
scores the whole layer and each output row, and rebuilds the vector from the
layer target: rows that kept their output well get more sparsity, rows that
suffered get less.  The best vector seen (uniform included) is returned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetError, ContractError, NumericalError, ShapeError
from .masking import (DEFAULT_CUTOFF, SparsityVector, mask_from_row_counts, round_counts,
                      row_order)
from .quality import DIM_METRICS, LAYER_METRICS, qmetric, qmetric_dimwise
from .tensor import as_matrix, matmul

DEFAULT_LR_SCHEDULE = (0.01, 0.02, 0.05, 0.1, 0.2, 0.5)


@dataclass(frozen=True)
class TrimConfig:
    k_iters: int = 10
    lr_schedule: tuple = DEFAULT_LR_SCHEDULE
    epsilon: float = 1e-8
    cutoff: float = DEFAULT_CUTOFF
    layer_metric: str = "cosim_flat"
    dim_metric: str = "cosine"

    def __post_init__(self):
        object.__setattr__(self, "lr_schedule", tuple(float(a) for a in self.lr_schedule))
        if self.k_iters < 1:
            raise ContractError("k_iters must be >= 1")
        sched = self.lr_schedule
        if not sched or any(a <= 0 for a in sched) or any(b <= a for a, b in zip(sched, sched[1:])):
            raise ContractError(f"lr_schedule must be positive and strictly increasing: {sched}")
        if not 0 < self.cutoff < 1:
            raise ContractError(f"cutoff must lie in (0, 1), got {self.cutoff}")
        if self.layer_metric not in LAYER_METRICS:
            raise ContractError(f"unknown layer metric {self.layer_metric!r}")
        if self.dim_metric not in DIM_METRICS:
            raise ContractError(f"unknown dimension metric {self.dim_metric!r}")


@dataclass
class TrimResult:
    s_best: SparsityVector
    q_best: float
    q_uniform: float
    chosen_lr: float
    per_iter_quality: list = field(default_factory=list)
    dim_quality_final: np.ndarray | None = None

    def report(self, layer: str, s_vector_ref: str | None = None) -> dict:
        return {
            "layer": layer,
            "T": self.s_best.target,
            "chosen_lr": self.chosen_lr,
            "q_uniform": self.q_uniform,
            "q_best": self.q_best,
            "per_iter_quality": list(self.per_iter_quality),
            "s_vector_ref": s_vector_ref if s_vector_ref is not None else f"{layer}.svec",
        }


def recenter(delta, t: float) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float64)
    return delta - delta.mean() + t


def normalize_minmax(c, epsilon: float = 1e-8) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    lo = c.min()
    return (c - lo) / (c.max() - lo + epsilon)


def project_to_bounds(s, t: float, cutoff: float) -> np.ndarray:
    """Clamp to [0, cutoff] and shift the unclamped rows so the mean stays ``t``.

    Finds the scalar shift mu with mean(clip(s + mu, 0, cutoff)) = t, which is
    the Euclidean projection onto the feasible set and keeps the row order.
    """
    s = np.asarray(s, dtype=np.float64)
    d = s.size
    if not 0 <= t <= cutoff:
        raise BudgetError(f"target {t} outside [0, {cutoff}]")
    if s.min() >= 0 and s.max() <= cutoff and abs(s.mean() - t) <= 1e-12:
        return s.copy()
    lo, hi = -s.max() - 1.0, cutoff - s.min() + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.clip(s + mid, 0.0, cutoff).mean() < t:
            lo = mid
        else:
            hi = mid
    out = np.clip(s + 0.5 * (lo + hi), 0.0, cutoff)
    # leftover rounding residual goes to rows strictly inside the bounds
    gap = d * t - out.sum()
    if gap != 0:
        free = (out > 0) & (out < cutoff)
        if not free.any():
            # every row on a bound: any row able to move in the gap's direction will do
            free = out < cutoff if gap > 0 else out > 0
        if not free.any():
            raise BudgetError("every row saturated; target cannot be met")
        out[free] = np.clip(out[free] + gap / free.sum(), 0.0, cutoff)
    return out


class LayerProblem:
    """One layer's weights, calibration batch, dense output and row order."""

    def __init__(self, w, x, scores):
        self.w = as_matrix(w, "weights")
        self.x = as_matrix(x, "activations")
        self.scores = as_matrix(scores, "scores")
        if self.x.shape[0] != self.w.shape[1]:
            raise ShapeError(f"activations {self.x.shape} do not match weights {self.w.shape}")
        if self.scores.shape != self.w.shape:
            raise ShapeError(f"scores {self.scores.shape} do not match weights {self.w.shape}")
        self.d, self.n = self.w.shape
        self.y = matmul(self.w, self.x)
        self.order = row_order(self.scores)

    def mask(self, s: SparsityVector) -> np.ndarray:
        return mask_from_row_counts(self.order, round_counts(s, self.n))

    def pruned_output(self, s: SparsityVector) -> np.ndarray:
        pruned = np.where(self.mask(s), np.float32(0), self.w)
        return matmul(pruned, self.x)


def _adjust(problem: LayerProblem, t: float, alpha: float, cfg: TrimConfig) -> TrimResult:
    s = SparsityVector.uniform(problem.d, t, cfg.cutoff)
    q_best = -math.inf
    s_best = s
    c_best = None
    history = []
    for _ in range(cfg.k_iters):
        yhat = problem.pruned_output(s)
        q = qmetric(problem.y, yhat, cfg.layer_metric)
        if not math.isfinite(q):
            raise NumericalError(f"layer quality is not finite ({q}) at alpha={alpha}")
        history.append(q)
        c = qmetric_dimwise(problem.y, yhat, cfg.dim_metric)
        if q > q_best:
            q_best, s_best, c_best = q, s, c
        delta = alpha * normalize_minmax(c, cfg.epsilon)
        s = SparsityVector(project_to_bounds(recenter(delta, t), t, cfg.cutoff), t, cfg.cutoff)
    return TrimResult(s_best, q_best, history[0], alpha, history, c_best)


def _check_target(t: float, cfg: TrimConfig):
    if not 0 <= t < cfg.cutoff:
        raise ContractError(f"target sparsity {t} must lie in [0, {cfg.cutoff})")


def trim_adjust(w, x, scores, t: float, alpha: float, cfg: TrimConfig | None = None) -> TrimResult:
    """Run the adjustment loop once for a fixed learning rate ``alpha``."""
    cfg = cfg or TrimConfig()
    _check_target(t, cfg)
    return _adjust(LayerProblem(w, x, scores), t, alpha, cfg)


def _walk(problem, t, cfg, sign):
    best = None
    for a in cfg.lr_schedule:
        res = _adjust(problem, t, sign * a, cfg)
        if best is None or res.q_best > best.q_best:
            best = res
        elif res.q_best < best.q_best:
            break
        # equal quality: the larger rate landed on the same integer counts, keep going
    return best


def lr_search(w, x, scores, t: float, cfg: TrimConfig | None = None,
              problem: LayerProblem | None = None) -> TrimResult:
    """Walk the learning-rate schedule upward, then negated if nothing helps.

    The walk stops as soon as a larger rate does worse than the best result
    so far; an exact tie (same integer prune counts) does not stop it.  If
    neither direction beats uniform sparsity, the uniform result is returned
    with ``chosen_lr = 0``.
    """
    cfg = cfg or TrimConfig()
    _check_target(t, cfg)
    problem = problem or LayerProblem(w, x, scores)
    best = _walk(problem, t, cfg, 1.0)
    if best.q_best > best.q_uniform:
        return best
    neg = _walk(problem, t, cfg, -1.0)
    if neg.q_best > neg.q_uniform:
        return neg
    return uniform_result(problem, t, cfg)


def uniform_result(problem: LayerProblem, t: float, cfg: TrimConfig) -> TrimResult:
    s = SparsityVector.uniform(problem.d, t, cfg.cutoff)
    yhat = problem.pruned_output(s)
    q = qmetric(problem.y, yhat, cfg.layer_metric)
    c = qmetric_dimwise(problem.y, yhat, cfg.dim_metric)
    return TrimResult(s, q, q, 0.0, [q], c)
