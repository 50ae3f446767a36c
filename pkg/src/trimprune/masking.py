"""From scores and sparsity targets to boolean prune masks.

Mask convention: ``True`` means the weight is removed.  Within a comparison
group the lowest-scoring weights go first; exact score ties are broken by
(row, column) order, earlier index pruned first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import BudgetError, ContractError, ShapeError
from .tensor import as_matrix

DEFAULT_CUTOFF = 0.95
_MEAN_TOL = 1e-9
_BOUND_TOL = 1e-12


@dataclass(frozen=True)
class SparsityVector:
    """Per-row sparsity targets whose mean equals ``target``."""

    s: np.ndarray
    target: float
    cutoff: float = DEFAULT_CUTOFF

    def __post_init__(self):
        s = np.array(self.s, dtype=np.float64).reshape(-1)
        if s.size == 0:
            raise ContractError("sparsity vector must be non-empty")
        if not 0 < self.cutoff < 1:
            raise ContractError(f"cutoff must lie in (0, 1), got {self.cutoff}")
        if not np.all(np.isfinite(s)):
            raise ContractError("sparsity vector contains non-finite values")
        if s.min() < -_BOUND_TOL or s.max() > self.cutoff + _BOUND_TOL:
            raise ContractError(
                f"sparsity entries must lie in [0, {self.cutoff}]; "
                f"got range [{s.min():.6g}, {s.max():.6g}]"
            )
        s = np.clip(s, 0.0, self.cutoff)
        if abs(s.mean() - self.target) > _MEAN_TOL:
            raise ContractError(
                f"mean sparsity {s.mean():.12g} differs from target {self.target:.12g}"
            )
        s.setflags(write=False)
        object.__setattr__(self, "s", s)

    @classmethod
    def uniform(cls, rows: int, target: float, cutoff: float = DEFAULT_CUTOFF):
        return cls(np.full(rows, float(target)), float(target), cutoff)

    @classmethod
    def from_values(cls, values, cutoff: float = DEFAULT_CUTOFF):
        values = np.asarray(values, dtype=np.float64)
        return cls(values, float(values.mean()), cutoff)

    def __len__(self):
        return self.s.size

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.s == self.s[0]))


@dataclass(frozen=True)
class ComparisonGroup:
    kind: str = "per_output"
    block_size: int = 128

    KINDS = ("per_output", "whole_layer", "input_block")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ContractError(f"unknown comparison group {self.kind!r}")
        if self.block_size < 1:
            raise ContractError("block_size must be >= 1")

    @classmethod
    def parse(cls, token: str) -> "ComparisonGroup":
        """Parse ``per_output``, ``whole_layer``, ``input_block`` or ``input_block:<size>``."""
        kind, _, size = token.partition(":")
        return cls(kind, int(size)) if size else cls(kind)


@dataclass(frozen=True)
class PruneMask:
    mask: np.ndarray
    row_counts: np.ndarray = field(repr=False)

    @classmethod
    def from_array(cls, mask) -> "PruneMask":
        mask = np.asarray(mask, dtype=bool)
        return cls(mask, mask.sum(axis=1).astype(np.int64))

    @property
    def pruned_count(self) -> int:
        return int(self.row_counts.sum())

    @property
    def shape(self):
        return self.mask.shape


def budget_count(target: float, size: int) -> int:
    """Total number of weights to prune; halves round to even."""
    return int(np.rint(target * size))


def row_cap(cutoff: float, n_cols: int) -> int:
    # the epsilon absorbs representation error, e.g. 0.95 * 20 = 18.999...
    return int(math.floor(cutoff * n_cols + 1e-9))


def largest_remainder(quotas, total: int, caps=None) -> np.ndarray:
    """Integerize ``quotas`` so they sum to ``total``.

    Every entry starts at floor(quota); the leftover units go to the largest
    fractional remainders, ties to the lower index.  Entries never exceed
    ``caps``.  If the floors already overshoot ``total`` (possible only from
    float noise) units are removed from the smallest remainders.
    """
    quotas = np.asarray(quotas, dtype=np.float64)
    floors = np.floor(quotas).astype(np.int64)
    if caps is None:
        caps = np.full(quotas.shape, np.iinfo(np.int64).max)
    caps = np.asarray(caps, dtype=np.int64)
    counts = np.minimum(floors, caps)
    rem = quotas - floors
    idx = np.arange(quotas.size)
    extra = total - int(counts.sum())
    if extra > 0:
        # largest remainder first, lower index on ties; rows at cap are skipped
        order = np.lexsort((idx, -rem))
        while extra > 0:
            progressed = False
            for i in order:
                if extra == 0:
                    break
                if counts[i] < caps[i]:
                    counts[i] += 1
                    extra -= 1
                    progressed = True
            if not progressed:
                raise BudgetError(f"cannot place {extra} more units under the caps")
    elif extra < 0:
        order = np.lexsort((idx, rem))
        for i in order:
            if extra == 0:
                break
            if counts[i] > 0:
                counts[i] -= 1
                extra += 1
    return counts


def round_counts(s: SparsityVector, n_cols: int) -> np.ndarray:
    """Per-row integer prune counts summing exactly to round(T * D * N)."""
    d = len(s)
    total = budget_count(s.target, d * n_cols)
    cap = row_cap(s.cutoff, n_cols)
    if total > cap * d:
        raise BudgetError(
            f"budget of {total} weights exceeds the {cap * d} allowed by cutoff {s.cutoff}"
        )
    return largest_remainder(s.s * n_cols, total, np.full(d, cap))


def row_order(scores) -> np.ndarray:
    """Per-row ascending score order (stable), reused across many masks."""
    return _kernels.stable_row_order(np.ascontiguousarray(scores))


def mask_from_row_counts(order: np.ndarray, counts) -> np.ndarray:
    counts = np.ascontiguousarray(counts, dtype=np.int64)
    return _kernels.mask_from_order(np.ascontiguousarray(order, dtype=np.int64), counts)


def _flat_group_mask(scores: np.ndarray, k: int) -> np.ndarray:
    # row-major flattening makes the stable sort break ties by (row, col)
    flat = scores.reshape(1, -1)
    order = _kernels.stable_row_order(np.ascontiguousarray(flat))
    return mask_from_row_counts(order, np.array([k])).reshape(scores.shape)


def build_mask(scores, s: SparsityVector, group: ComparisonGroup | str = "per_output") -> PruneMask:
    a = as_matrix(scores, "scores")
    if isinstance(group, str):
        group = ComparisonGroup.parse(group)
    d, n = a.shape
    if len(s) != d:
        raise ShapeError(f"sparsity vector has {len(s)} entries for {d} rows")

    if group.kind == "per_output":
        mask = mask_from_row_counts(row_order(a), round_counts(s, n))
        return PruneMask.from_array(mask)

    if not s.is_uniform:
        raise ContractError(f"non-uniform sparsity requires per_output, not {group.kind}")
    total = budget_count(s.target, d * n)

    if group.kind == "whole_layer":
        return PruneMask.from_array(_flat_group_mask(a, total))

    starts = list(range(0, n, group.block_size))
    sizes = np.array([min(group.block_size, n - c) * d for c in starts])
    block_counts = largest_remainder(total * sizes / sizes.sum(), total, sizes)
    mask = np.zeros((d, n), dtype=bool)
    for c0, k in zip(starts, block_counts):
        c1 = min(c0 + group.block_size, n)
        mask[:, c0:c1] = _flat_group_mask(np.ascontiguousarray(a[:, c0:c1]), int(k))
    return PruneMask.from_array(mask)


def apply_mask(w, m: PruneMask | np.ndarray) -> np.ndarray:
    w = as_matrix(w, "weights")
    mask = m.mask if isinstance(m, PruneMask) else np.asarray(m, dtype=bool)
    if mask.shape != w.shape:
        raise ShapeError(f"mask shape {mask.shape} != weights shape {w.shape}")
    out = w.copy()
    out[mask] = 0.0
    return out
