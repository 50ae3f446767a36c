"""End-to-end pruning of small MLP chains.

A :class:`ToyModel` is a list of bias-free linear layers, each followed by an
activation.  Layer ``i`` maps ``N_i`` inputs to ``D_i`` outputs, and the
model is applied column-wise to an ``input_dim x L`` sample matrix.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .allocation import LayerAllocation
from .errors import ContractError, FormatError, ShapeError
from .masking import (ComparisonGroup, SparsityVector, apply_mask, budget_count, build_mask,
                      largest_remainder)
from .optimizer import LayerProblem, TrimConfig, TrimResult, lr_search, uniform_result
from .quality import cosine, qmetric
from .scoring import DEFAULT_DAMPING, DEFAULT_GBLM_BLEND, METRICS, compute_scores
from .tensor import Rng, as_matrix, load_container, matmul, save_container, write_atomic

ACTIVATIONS = ("relu", "gelu", "none")
_GELU_C = math.sqrt(2.0 / math.pi)


def activate(z, kind: str):
    if kind == "relu":
        return np.maximum(z, 0)
    if kind == "gelu":
        # tanh approximation
        return 0.5 * z * (1.0 + np.tanh(_GELU_C * (z + 0.044715 * z**3)))
    if kind == "none":
        return z
    raise ContractError(f"unknown activation {kind!r}")


def activate_grad(z, kind: str):
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "gelu":
        u = _GELU_C * (z + 0.044715 * z**3)
        th = np.tanh(u)
        du = _GELU_C * (1.0 + 3 * 0.044715 * z**2)
        return 0.5 * (1.0 + th) + 0.5 * z * (1.0 - th**2) * du
    if kind == "none":
        return np.ones_like(z)
    raise ContractError(f"unknown activation {kind!r}")


@dataclass
class Layer:
    name: str
    weight: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weight = as_matrix(self.weight, f"{self.name}.weight")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")


@dataclass
class ToyModel:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ContractError("model needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[0] != nxt.weight.shape[1]:
                raise ShapeError(
                    f"{prev.name} outputs {prev.weight.shape[0]} but {nxt.name} "
                    f"expects {nxt.weight.shape[1]} inputs"
                )
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ContractError("layer names must be unique")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def names(self) -> list:
        return [layer.name for layer in self.layers]

    def n_params(self) -> int:
        return sum(layer.weight.size for layer in self.layers)

    def copy(self) -> "ToyModel":
        return ToyModel([replace(layer, weight=layer.weight.copy()) for layer in self.layers])

    def with_weights(self, weights: dict) -> "ToyModel":
        return ToyModel([replace(layer, weight=weights.get(layer.name, layer.weight))
                         for layer in self.layers])

    def forward(self, x) -> np.ndarray:
        h = _check_input(self, x)
        for layer in self.layers:
            h = activate(matmul(layer.weight, h), layer.activation)
        return h

    # -- files -------------------------------------------------------------

    def save(self, path) -> None:
        path = Path(path)
        save_container({f"{layer.name}.weight": layer.weight for layer in self.layers}, path)
        write_atomic(sidecar_path(path), json.dumps(self.sidecar(), indent=2) + "\n")

    def sidecar(self) -> dict:
        return {
            "layers": [{"name": layer.name, "activation": layer.activation} for layer in self.layers],
            "input_dim": self.input_dim,
        }

    @classmethod
    def load(cls, path) -> "ToyModel":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"no model file {path}")
        try:
            meta = json.loads(sidecar_path(path).read_text())
        except FileNotFoundError:
            raise FormatError(f"missing model sidecar {sidecar_path(path)}") from None
        except json.JSONDecodeError as exc:
            raise FormatError(f"model sidecar is not JSON: {exc}") from None
        tensors = load_container(path)
        try:
            layers = [Layer(e["name"], tensors[f"{e['name']}.weight"], e.get("activation", "relu"))
                      for e in meta["layers"]]
        except KeyError as exc:
            raise FormatError(f"model file lacks {exc}") from None
        model = cls(layers)
        if int(meta.get("input_dim", model.input_dim)) != model.input_dim:
            raise FormatError("sidecar input_dim does not match first layer")
        return model


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def _check_input(model, x):
    x = as_matrix(x, "calibration samples")
    if x.shape[0] != model.input_dim:
        raise ShapeError(f"samples have {x.shape[0]} features, model expects {model.input_dim}")
    return x


@dataclass
class CalibrationSet:
    samples: np.ndarray
    targets: np.ndarray | None = None
    source: str = "container_file"
    seed: int | None = None

    def __post_init__(self):
        self.samples = as_matrix(self.samples, "calibration samples")
        if self.samples.shape[1] < 1:
            raise ContractError("calibration needs at least one sample")
        if self.targets is not None:
            self.targets = as_matrix(self.targets, "targets")
            if self.targets.shape[1] != self.samples.shape[1]:
                raise ShapeError("targets and samples differ in sample count")

    @classmethod
    def synthetic(cls, input_dim: int, n_samples: int = 128, seed: int = 0,
                  feature_scales=None) -> "CalibrationSet":
        x = Rng(seed).normal((input_dim, n_samples))
        if feature_scales is not None:
            x = x * np.asarray(feature_scales, dtype=np.float64)[:, None]
        return cls(x, None, "synthetic_gaussian", seed)

    @classmethod
    def load(cls, path) -> "CalibrationSet":
        c = load_container(path)
        if "input" not in c:
            raise FormatError(f"calibration file {path} has no 'input' tensor")
        return cls(c["input"], c.get("targets"), "container_file")

    def save(self, path) -> None:
        tensors = {"input": self.samples}
        if self.targets is not None:
            tensors["targets"] = self.targets
        save_container(tensors, path)


def capture_activations(model: ToyModel, calib) -> list:
    """Inputs seen by every layer during a dense forward pass."""
    x = calib.samples if isinstance(calib, CalibrationSet) else calib
    h = _check_input(model, x)
    inputs = []
    for layer in model.layers:
        inputs.append(h)
        h = activate(matmul(layer.weight, h), layer.activation)
    return inputs


def loss_and_gradients(model: ToyModel, x, targets):
    """Mean-over-samples squared error and its exact gradient per weight, float64."""
    x = _check_input(model, x).astype(np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != (model.output_dim, x.shape[1]):
        raise ShapeError(f"targets shape {t.shape} != {(model.output_dim, x.shape[1])}")
    hs, zs = [x], []
    for layer in model.layers:
        z = layer.weight.astype(np.float64) @ hs[-1]
        zs.append(z)
        hs.append(activate(z, layer.activation))
    n = x.shape[1]
    err = hs[-1] - t
    loss = float(np.sum(err**2) / n)
    grads = [None] * len(model.layers)
    dout = 2.0 * err / n
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        dz = dout * activate_grad(zs[i], layer.activation)
        grads[i] = dz @ hs[i].T
        dout = layer.weight.astype(np.float64).T @ dz
    return loss, grads


def capture_gradients(model: ToyModel, calib, targets=None) -> list:
    """Entrywise |dL/dW| for squared error against ``targets``."""
    if isinstance(calib, CalibrationSet):
        x = calib.samples
        targets = calib.targets if targets is None else targets
    else:
        x = calib
    if targets is None:
        raise ContractError("gradient capture needs targets")
    _, grads = loss_and_gradients(model, x, targets)
    return [as_matrix(np.abs(g), "gradient") for g in grads]


@dataclass(frozen=True)
class ScoreConfig:
    metric: str = "wanda"
    group: str = "per_output"
    damping: float = DEFAULT_DAMPING
    blend: float = DEFAULT_GBLM_BLEND

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ContractError(f"unknown metric {self.metric!r}")
        ComparisonGroup.parse(self.group)


def score_model(model: ToyModel, calib: CalibrationSet, cfg: ScoreConfig, grads=None) -> dict:
    """Importance scores per layer from dense-model activations."""
    inputs = capture_activations(model, calib)
    if cfg.metric == "gblm" and grads is None:
        grads = capture_gradients(model, calib)
    out = {}
    for i, (layer, x) in enumerate(zip(model.layers, inputs)):
        g = grads[i] if grads is not None else None
        out[layer.name] = compute_scores(cfg.metric, layer.weight, x, g,
                                         damping=cfg.damping, blend=cfg.blend)
    return out


@dataclass
class PruneRun:
    dense: ToyModel
    pruned: ToyModel
    allocation: LayerAllocation
    trim_enabled: bool
    recalc_enabled: bool
    scores: dict
    masks: dict
    results: dict
    eval: dict = field(default_factory=dict)

    def pruned_count(self) -> int:
        return int(sum(m.sum() for m in self.masks.values()))

    def sparsity(self) -> float:
        return self.pruned_count() / self.dense.n_params()

    def report(self) -> dict:
        layers = []
        for layer in self.dense.layers:
            res = self.results[layer.name]
            rec = res.report(layer.name)
            rec["pruned"] = int(self.masks[layer.name].sum())
            rec["size"] = int(layer.weight.size)
            layers.append(rec)
        return {
            "schema_version": 1,
            "trim": self.trim_enabled,
            "recalc": self.recalc_enabled,
            "allocation": self.allocation.to_json(),
            "global_sparsity": self.sparsity(),
            "layers": layers,
            "eval": self.eval,
        }

    def container(self) -> dict:
        out = {}
        for layer in self.pruned.layers:
            name = layer.name
            out[f"{name}.weight"] = layer.weight
            out[f"{name}.mask"] = self.masks[name].astype(np.float32)
            out[f"{name}.svec"] = np.asarray(self.results[name].s_best.s, dtype=np.float32)
            out[f"{name}.score"] = self.scores[name]
        return out


def layer_targets(model: ToyModel, allocation: LayerAllocation) -> dict:
    """Per-layer targets whose pruned counts add up to the global budget.

    Layer counts are a largest-remainder split of round(sum t_l * size_l); a
    layer's target is only nudged when its own rounding would break the total.
    """
    sizes = np.array([layer.weight.size for layer in model.layers])
    ts = np.array([allocation.target_for(layer.name) for layer in model.layers])
    quotas = ts * sizes
    counts = largest_remainder(quotas, int(np.rint(quotas.sum())), sizes)
    out = {}
    for layer, t, size, k in zip(model.layers, ts, sizes, counts):
        out[layer.name] = float(t) if budget_count(t, size) == k else float(k) / size
    return out


def prune_model(model: ToyModel, calib: CalibrationSet, score_cfg: ScoreConfig,
                allocation: LayerAllocation, trim_cfg: TrimConfig | None = None,
                recalc: bool = False, trim: bool = True, grads=None) -> PruneRun:
    trim_cfg = trim_cfg or TrimConfig()
    group = ComparisonGroup.parse(score_cfg.group)
    if trim and group.kind != "per_output":
        raise ContractError("dimension-wise allocation needs the per_output comparison group")
    dense_inputs = capture_activations(model, calib)
    # scores always come from the dense model, recalculation or not
    scores = score_model(model, calib, score_cfg, grads)
    targets = layer_targets(model, allocation)

    pruned_weights = {}
    masks, results = {}, {}
    h = dense_inputs[0]
    for i, layer in enumerate(model.layers):
        x_eval = h if recalc else dense_inputs[i]
        t = targets[layer.name]
        a = scores[layer.name]
        problem = LayerProblem(layer.weight, x_eval, a)
        if group.kind == "per_output":
            res = lr_search(None, None, None, t, trim_cfg, problem) if trim \
                else uniform_result(problem, t, trim_cfg)
            mask = problem.mask(res.s_best)
        else:
            s = SparsityVector.uniform(layer.weight.shape[0], t, trim_cfg.cutoff)
            mask = build_mask(a, s, group).mask
            yhat = matmul(np.where(mask, np.float32(0), layer.weight), x_eval)
            q = qmetric(problem.y, yhat, trim_cfg.layer_metric)
            res = TrimResult(s, q, q, 0.0, [q], None)
        masks[layer.name] = mask
        results[layer.name] = res
        pruned_weights[layer.name] = apply_mask(layer.weight, mask)
        if recalc:
            h = activate(matmul(pruned_weights[layer.name], h), layer.activation)
    return PruneRun(model, model.with_weights(pruned_weights), allocation, trim, recalc,
                    scores, masks, results)


def toy_loss(outputs, targets) -> float:
    """Mean over samples of the summed squared error."""
    o = np.asarray(outputs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    return float(np.sum((o - t) ** 2) / o.shape[1])


def evaluate_models(dense: ToyModel, pruned: ToyModel, holdout: CalibrationSet) -> dict:
    """Layer-by-layer and end-to-end comparison on ``holdout``."""
    h_dense = h_pruned = _check_input(dense, holdout.samples)
    layers = []
    for ld, lp in zip(dense.layers, pruned.layers):
        h_dense = activate(matmul(ld.weight, h_dense), ld.activation)
        h_pruned = activate(matmul(lp.weight, h_pruned), lp.activation)
        layers.append({
            "name": ld.name,
            "cosine": cosine(h_dense, h_pruned),
            "sparsity": float(np.mean(lp.weight == 0) if ld.weight.size else 0.0),
        })
    targets = holdout.targets if holdout.targets is not None else h_dense
    dense_loss = toy_loss(h_dense, targets)
    pruned_loss = toy_loss(h_pruned, targets)
    zeros = sum(int(np.count_nonzero(lp.weight == 0)) for lp in pruned.layers)
    return {
        "schema_version": 1,
        "layers": layers,
        "global": {
            "end_to_end_cosine": cosine(h_dense, h_pruned),
            "dense_loss": dense_loss,
            "pruned_loss": pruned_loss,
            "loss_delta": pruned_loss - dense_loss,
            "zero_fraction": zeros / dense.n_params(),
        },
    }


def evaluate_run(run: PruneRun, holdout: CalibrationSet, calib: CalibrationSet | None = None) -> dict:
    if (calib is not None and holdout.seed is not None and calib.seed is not None
            and holdout.seed == calib.seed):
        raise ContractError("holdout must use a different seed than calibration")
    run.eval = evaluate_models(run.dense, run.pruned, holdout)
    return run.eval


def train_regressor(model: ToyModel, x, targets, steps: int = 300, lr: float = 1e-2,
                    weight_decay: float = 0.0) -> ToyModel:
    """Full-batch Adam on squared error.  Deterministic given its inputs."""
    model = model.copy()
    ws = [layer.weight.astype(np.float64) for layer in model.layers]
    m = [np.zeros_like(w) for w in ws]
    v = [np.zeros_like(w) for w in ws]
    b1, b2 = 0.9, 0.999
    for step in range(1, steps + 1):
        cur = ToyModel([replace(layer, weight=w.astype(np.float32))
                        for layer, w in zip(model.layers, ws)])
        _, grads = loss_and_gradients(cur, x, targets)
        for i, g in enumerate(grads):
            g = g + weight_decay * ws[i]
            m[i] = b1 * m[i] + (1 - b1) * g
            v[i] = b2 * v[i] + (1 - b2) * g * g
            mhat = m[i] / (1 - b1**step)
            vhat = v[i] / (1 - b2**step)
            ws[i] = ws[i] - lr * mhat / (np.sqrt(vhat) + 1e-8)
    return ToyModel([replace(layer, weight=w.astype(np.float32))
                     for layer, w in zip(model.layers, ws)])
