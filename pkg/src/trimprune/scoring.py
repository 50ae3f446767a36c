"""Per-weight importance scores.

All scorers take a D x N weight matrix and (where needed) an N x L batch of
calibration inputs, and return a nonnegative D x N float32 score matrix.
Higher score = more important = pruned later.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericalError, ShapeError
from .tensor import as_matrix

METRICS = ("magnitude", "wanda", "sparsegpt", "gblm")

#: which comparison group each metric uses by default
DEFAULT_GROUP = {
    "magnitude": "whole_layer",
    "wanda": "per_output",
    "sparsegpt": "input_block",
    "gblm": "per_output",
}

DEFAULT_DAMPING = 1e-2
DEFAULT_GBLM_BLEND = 1.0


def _check_inputs(w, x):
    w = as_matrix(w, "weights")
    x = as_matrix(x, "activations")
    if x.shape[0] != w.shape[1]:
        raise ShapeError(
            f"activations have {x.shape[0]} features but weights have {w.shape[1]} inputs"
        )
    if x.shape[1] < 1:
        raise ShapeError("activations need at least one sample")
    return w, x


def feature_norms(x) -> np.ndarray:
    """L2 norm of each input feature (row of ``x``) over the samples, float64."""
    x = np.asarray(x, dtype=np.float64)
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def score_magnitude(w) -> np.ndarray:
    return np.abs(as_matrix(w, "weights"))


def score_wanda(w, x) -> np.ndarray:
    w, x = _check_inputs(w, x)
    return (np.abs(w.astype(np.float64)) * feature_norms(x)[None, :]).astype(np.float32)


def inverse_hessian_diag(x, damping: float = DEFAULT_DAMPING) -> np.ndarray:
    """diag(H^-1) for H = X X^T + damping * mean(diag(X X^T)) * I."""
    if not damping > 0:
        raise ContractError(f"damping must be > 0, got {damping}")
    x = np.asarray(x, dtype=np.float64)
    h = x @ x.T
    mean_diag = float(np.mean(np.diag(h)))
    if mean_diag <= 0:
        # all-zero activations; any positive ridge keeps H invertible
        mean_diag = 1.0
    h[np.diag_indices_from(h)] += damping * mean_diag
    try:
        chol = np.linalg.cholesky(h)
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(h)
        raise NumericalError(
            f"Hessian not positive definite after damping={damping}: "
            f"min eigenvalue {eig.min():.3e}, max {eig.max():.3e}"
        ) from None
    # diag(H^-1) = squared column norms of L^-1
    linv = np.linalg.solve(chol, np.eye(h.shape[0]))
    inv_diag = np.einsum("ij,ij->j", linv, linv)
    if not np.all(np.isfinite(inv_diag)) or np.any(inv_diag <= 0):
        raise NumericalError("non-positive or non-finite entries in diag(H^-1)")
    return inv_diag


def score_sparsegpt(w, x, damping: float = DEFAULT_DAMPING) -> np.ndarray:
    w, x = _check_inputs(w, x)
    inv_diag = inverse_hessian_diag(x, damping)
    w64 = w.astype(np.float64)
    return (w64 * w64 / inv_diag[None, :]).astype(np.float32)


def score_gblm(w, x, grads, blend: float = DEFAULT_GBLM_BLEND) -> np.ndarray:
    """|W_ij| * (||X_j|| + blend * G_ij) with G the gradient magnitudes."""
    w, x = _check_inputs(w, x)
    g = as_matrix(grads, "gradients")
    if g.shape != w.shape:
        raise ShapeError(f"gradients shape {g.shape} != weights shape {w.shape}")
    if blend < 0:
        raise ContractError(f"gblm blend must be >= 0, got {blend}")
    if np.any(g < 0):
        raise ContractError("gradient magnitudes must be nonnegative")
    term = feature_norms(x)[None, :] + blend * g.astype(np.float64)
    return (np.abs(w.astype(np.float64)) * term).astype(np.float32)


def compute_scores(metric: str, w, x=None, grads=None, *, damping=DEFAULT_DAMPING,
                   blend=DEFAULT_GBLM_BLEND) -> np.ndarray:
    """Dispatch on a metric token."""
    if metric == "magnitude":
        return score_magnitude(w)
    if metric == "wanda":
        return score_wanda(w, x)
    if metric == "sparsegpt":
        return score_sparsegpt(w, x, damping)
    if metric == "gblm":
        if grads is None:
            raise ContractError("gblm scoring requires gradient magnitudes")
        return score_gblm(w, x, grads, blend)
    raise ContractError(f"unknown metric {metric!r}; expected one of {METRICS}")
