"""Reconstruction quality of a pruned layer output against the dense output.

Every metric is oriented so that larger is better: MSE is reported negated.
Both arguments are D x L matrices (output dimensions x samples).
"""
from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import ContractError, ShapeError

LAYER_METRICS = ("cosim_flat", "cosim_sample", "neg_mse")
DIM_METRICS = ("cosine", "psnr", "neg_mse")
PSNR_CAP_DB = 120.0


def _pair(y, yhat):
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 2:
        raise ShapeError(f"quality: shapes {y.shape} and {yhat.shape} differ or are not 2-D")
    return y, yhat


def cosine(a, b) -> float:
    """Cosine of two vectors; 0 if exactly one is zero, 1 if both are."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na = np.sqrt(a @ a)
    nb = np.sqrt(b @ b)
    if na == 0 or nb == 0:
        return 1.0 if na == nb else 0.0
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def qmetric(y, yhat, metric_id: str = "cosim_flat") -> float:
    y, yhat = _pair(y, yhat)
    if metric_id == "cosim_flat":
        return cosine(y, yhat)
    if metric_id == "cosim_sample":
        # columns are samples; row_cosine works on rows
        return float(np.mean(_kernels.row_cosine(np.ascontiguousarray(y.T),
                                                 np.ascontiguousarray(yhat.T))))
    if metric_id == "neg_mse":
        return -float(np.mean((y - yhat) ** 2))
    raise ContractError(f"unknown layer metric {metric_id!r}; expected one of {LAYER_METRICS}")


def qmetric_dimwise(y, yhat, metric_id: str = "cosine") -> np.ndarray:
    y, yhat = _pair(y, yhat)
    if metric_id == "cosine":
        return _kernels.row_cosine(np.ascontiguousarray(y), np.ascontiguousarray(yhat))
    row_mse = np.mean((y - yhat) ** 2, axis=1)
    if metric_id == "neg_mse":
        return -row_mse
    if metric_id == "psnr":
        peak = float(np.max(np.abs(y))) if y.size else 0.0
        out = np.full(y.shape[0], PSNR_CAP_DB)
        ok = row_mse > 0
        if peak == 0:
            # nothing to reconstruct: any error is total loss
            out[ok] = -PSNR_CAP_DB
            return out
        with np.errstate(divide="ignore"):
            out[ok] = 10.0 * np.log10(peak**2 / row_mse[ok])
        return np.clip(out, -PSNR_CAP_DB, PSNR_CAP_DB)
    raise ContractError(f"unknown dimension metric {metric_id!r}; expected one of {DIM_METRICS}")
