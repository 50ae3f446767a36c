"""Seeded synthetic layers, models and tasks for experiments and tests."""
from __future__ import annotations

import numpy as np

from .pipeline import CalibrationSet, Layer, ToyModel, train_regressor
from .tensor import Rng, as_matrix


def random_layer(seed: int, d: int, n: int, n_samples: int = 64, row_spread: float = 1.0):
    """Gaussian weights whose rows have log-normally spread scales, plus inputs."""
    rng = Rng(seed)
    scales = np.exp(row_spread * rng.normal(d))
    w = rng.normal((d, n)) * scales[:, None]
    x = rng.normal((n, n_samples))
    return as_matrix(w), as_matrix(x)


def homogeneous_layer(seed: int, d: int = 32, n: int = 64, n_samples: int = 128):
    """i.i.d. standard Gaussian weights and inputs."""
    rng = Rng(seed)
    return rng.gaussian_matrix(d, n), rng.gaussian_matrix(n, n_samples)


def concentrated_layer(seed: int, d: int = 32, n: int = 64, n_samples: int = 128,
                       n_heavy: int = 3):
    """Half the rows carry their signal in a few weights, half spread it evenly.

    Concentrated rows (even indices) hold ``n_heavy`` weights of magnitude ~3 on
    a background of ~0.02; diffuse rows (odd indices) have magnitudes uniform in
    [0.7, 1.3].  Signs are random.  Inputs are standard Gaussian.
    """
    rng = Rng(seed)
    w = np.empty((d, n))
    for i in range(d):
        signs = np.where(rng.uniform(n) < 0.5, -1.0, 1.0)
        if i % 2 == 0:
            mags = 0.02 * np.abs(rng.normal(n))
            heavy = rng.permutation(n)[:n_heavy]
            mags[heavy] = 3.0 * (0.8 + 0.4 * rng.uniform(n_heavy))
        else:
            mags = 0.7 + 0.6 * rng.uniform(n)
        w[i] = signs * mags
    x = rng.normal((n, n_samples))
    return as_matrix(w), as_matrix(x)


def tiny_instance(seed: int, max_d: int = 4, max_n: int = 8, n_samples: int = 16):
    """A D x N layer (D <= 4, N <= 8) with rows of mixed concentration."""
    rng = Rng(seed)
    d = 2 + rng.integers(max_d - 1)
    n = 4 + rng.integers(max_n - 3)
    w = rng.normal((d, n))
    # sharpen some rows so rows differ in sensitivity
    power = 1.0 + 3.0 * rng.uniform(d)
    w = np.sign(w) * np.abs(w) ** power[:, None]
    x = rng.normal((n, n_samples))
    return as_matrix(w), as_matrix(x)


def feature_scales(seed: int, n: int, n_outlier: int = 2, outlier_scale: float = 8.0):
    """Unit feature scales with a few large "outlier" features."""
    scales = np.ones(n)
    scales[Rng(seed).permutation(n)[:n_outlier]] = outlier_scale
    return scales


def teacher_task(seed: int, dims=(32, 96, 96, 16), n_train: int = 512, n_holdout: int = 256,
                 train_steps: int = 400):
    """Train a student MLP to imitate a random teacher with uneven row scales.

    Returns ``(student, train_set, holdout_set)``; both sets carry targets and
    share the same input feature scales (two outlier features).
    """
    rng = Rng(seed)
    n_layers = len(dims) - 1
    acts = ["relu"] * (n_layers - 1) + ["none"]
    teacher_layers = []
    for i in range(n_layers):
        row_scale = np.exp(0.6 * rng.normal(dims[i + 1]))
        w = rng.normal((dims[i + 1], dims[i])) * row_scale[:, None] / np.sqrt(dims[i])
        teacher_layers.append(Layer(f"layer{i}", w, acts[i]))
    teacher = ToyModel(teacher_layers)
    scales = feature_scales(seed + 1, dims[0])
    train = CalibrationSet.synthetic(dims[0], n_train, seed=2 * seed + 1001, feature_scales=scales)
    hold = CalibrationSet.synthetic(dims[0], n_holdout, seed=2 * seed + 1002, feature_scales=scales)
    train.targets = teacher.forward(train.samples)
    hold.targets = teacher.forward(hold.samples)
    student = ToyModel([
        Layer(f"layer{i}", rng.normal((dims[i + 1], dims[i])) / np.sqrt(dims[i]), acts[i])
        for i in range(n_layers)
    ])
    student = train_regressor(student, train.samples, train.targets, steps=train_steps, lr=1e-2)
    return student, train, hold


def demo_model(seed: int = 0) -> tuple[ToyModel, CalibrationSet]:
    """Two-layer 16 -> 32 -> 8 relu/linear model with a calibration set and targets."""
    rng = Rng(seed)
    w0 = rng.normal((32, 16)) * np.exp(0.5 * rng.normal(32))[:, None] / 4.0
    w1 = rng.normal((8, 32)) * np.exp(0.5 * rng.normal(8))[:, None] / np.sqrt(32)
    model = ToyModel([Layer("layer0", w0, "relu"), Layer("layer1", w1, "none")])
    calib = CalibrationSet.synthetic(16, 128, seed=seed + 1, feature_scales=feature_scales(seed, 16))
    noise = Rng(seed + 2).normal((8, 128), 0.1)
    calib.targets = as_matrix(model.forward(calib.samples) + noise)
    return model, calib
