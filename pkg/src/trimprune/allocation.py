"""Layer-wise sparsity budgets: uniform, outlier-weighted (OWL-style), or imported."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetError, ContractError, FormatError
from .masking import DEFAULT_CUTOFF

SCHEMA_VERSION = 1
METHODS = ("uniform", "owl", "import")


@dataclass(frozen=True)
class OwlParams:
    m: float = 5.0
    lam: float = 0.08

    def check(self, t: float, cutoff: float = DEFAULT_CUTOFF):
        if not self.m > 1:
            raise ContractError(f"outlier multiple M must exceed 1, got {self.m}")
        limit = min(t, 1 - t - (1 - cutoff))
        if not (0 <= self.lam and (self.lam < limit or self.lam == 0)):
            raise ContractError(f"lambda={self.lam} must lie in [0, {limit:.6g}) for T={t}")


@dataclass
class LayerAllocation:
    per_layer_t: list
    global_target: float
    method: str
    names: list = field(default_factory=list)
    params: list = field(default_factory=list)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"unknown allocation method {self.method!r}")
        if not self.names:
            self.names = [f"layer{i}" for i in range(len(self.per_layer_t))]
        if not self.params:
            self.params = [1] * len(self.per_layer_t)
        if not (len(self.names) == len(self.params) == len(self.per_layer_t)):
            raise ContractError("names, params and per_layer_t lengths differ")
        if any(not 0 <= t < 1 for t in self.per_layer_t):
            raise ContractError(f"layer sparsities must lie in [0, 1): {self.per_layer_t}")

    def weighted_mean(self) -> float:
        p = np.asarray(self.params, dtype=np.float64)
        return float(np.dot(p, self.per_layer_t) / p.sum())

    def target_for(self, name: str) -> float:
        try:
            return self.per_layer_t[self.names.index(name)]
        except ValueError:
            raise ContractError(f"allocation has no entry for layer {name!r}") from None

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "global_t": self.global_target,
            "layers": [
                {"name": n, "t": float(t), "params": int(p)}
                for n, t, p in zip(self.names, self.per_layer_t, self.params)
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LayerAllocation":
        try:
            layers = doc["layers"]
            return cls(
                per_layer_t=[float(e["t"]) for e in layers],
                global_target=float(doc["global_t"]),
                method=doc.get("method", "import"),
                names=[str(e["name"]) for e in layers],
                params=[int(e.get("params", 1)) for e in layers],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed allocation file: {exc}") from None

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "LayerAllocation":
        try:
            return cls.from_json(json.loads(text))
        except json.JSONDecodeError as exc:
            raise FormatError(f"allocation file is not JSON: {exc}") from None


def outlier_threshold(scores, m: float) -> float:
    return m * float(np.mean(np.asarray(scores, dtype=np.float64)))


def outlier_ratio(scores, m: float) -> float:
    """Fraction of entries greater than ``m`` times the layer mean."""
    a = np.asarray(scores, dtype=np.float64)
    if a.size == 0:
        raise ContractError("empty score matrix")
    return float(np.count_nonzero(a > outlier_threshold(a, m)) / a.size)


def per_dimension_outlier_counts(scores, m: float) -> np.ndarray:
    a = np.asarray(scores, dtype=np.float64)
    return np.count_nonzero(a > outlier_threshold(a, m), axis=1).astype(np.int64)


def uniform_allocate(names, sizes, t: float) -> LayerAllocation:
    return LayerAllocation([float(t)] * len(names), float(t), "uniform", list(names), list(sizes))


def _weighted_project(t_layers, weights, t, lo, hi):
    """Shift so the weighted mean is ``t`` while staying in [lo, hi]."""
    w = weights / weights.sum()
    lo_mu, hi_mu = lo - t_layers.max() - 1.0, hi - t_layers.min() + 1.0
    for _ in range(200):
        mid = 0.5 * (lo_mu + hi_mu)
        if np.dot(w, np.clip(t_layers + mid, lo, hi)) < t:
            lo_mu = mid
        else:
            hi_mu = mid
    out = np.clip(t_layers + 0.5 * (lo_mu + hi_mu), lo, hi)
    gap = t - np.dot(w, out)
    free = (out > lo) & (out < hi)
    if abs(gap) > 1e-15:
        if not free.any():
            raise BudgetError("every layer saturated at the lambda bound")
        out[free] += gap / w[free].sum()
    return out


def owl_allocate(ratios, sizes, t: float, params: OwlParams, names=None,
                 cutoff: float = DEFAULT_CUTOFF, eps: float = 1e-12) -> LayerAllocation:
    """Give layers with more outliers less sparsity, within [t - lam, t + lam].

    The map is affine in the outlier ratio around the size-weighted mean ratio
    and scaled so the most extreme layer sits exactly on the lambda bound.
    """
    r = np.asarray(ratios, dtype=np.float64)
    sizes_arr = np.asarray(sizes, dtype=np.float64)
    if r.size == 0:
        raise ContractError("need at least one layer")
    if sizes_arr.shape != r.shape or np.any(sizes_arr <= 0):
        raise ContractError("sizes must be positive, one per layer")
    params.check(t, cutoff)
    mean_r = float(np.dot(sizes_arr, r) / sizes_arr.sum())
    spread = max(float(np.max(np.abs(r - mean_r))), eps)
    raw = t + params.lam * (mean_r - r) / spread
    out = _weighted_project(raw, sizes_arr, t, t - params.lam, t + params.lam)
    names = list(names) if names is not None else [f"layer{i}" for i in range(r.size)]
    return LayerAllocation([float(v) for v in out], float(t), "owl", names,
                           [int(s) for s in sizes_arr])
