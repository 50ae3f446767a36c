import numpy as np
import pytest

from oracles import finite_difference_grad, forward_loops
from trimprune.allocation import OwlParams, owl_allocate, uniform_allocate
from trimprune.errors import ContractError, FormatError, ShapeError
from trimprune.optimizer import lr_search
from trimprune.pipeline import (CalibrationSet, Layer, ScoreConfig, ToyModel, capture_activations,
                                capture_gradients, evaluate_models, evaluate_run,
                                layer_targets, loss_and_gradients, prune_model, toy_loss)
from trimprune.scoring import score_wanda
from trimprune.tensor import Rng


def _random_model(seed, dims=(6, 10, 8, 4), acts=("relu", "gelu", "none")):
    rng = Rng(seed)
    return ToyModel([Layer(f"layer{i}", rng.normal((dims[i + 1], dims[i])) / np.sqrt(dims[i]), a)
                     for i, a in enumerate(acts)])


def test_identity_layer_captures_calibration():
    c = Rng(0).gaussian_matrix(3, 5)
    model = ToyModel([Layer("id", np.eye(3), "none")])
    np.testing.assert_array_equal(capture_activations(model, CalibrationSet(c))[0], c)


def test_two_layer_relu_hand_case():
    model = ToyModel([Layer("a", [[1, -1], [2, 0]], "relu"), Layer("b", [[1, 1]], "none")])
    c = np.array([[1.0, 0.0], [2.0, 1.0]])
    # W1 C = [[-1, -1], [2, 0]] -> relu -> [[0, 0], [2, 0]]
    np.testing.assert_array_equal(capture_activations(model, c)[1], [[0, 0], [2, 0]])


def test_activations_match_forward_oracle():
    model = _random_model(1)
    x = Rng(2).gaussian_matrix(6, 9)
    inputs, out = forward_loops([l.weight for l in model.layers],
                                [l.activation for l in model.layers], x)
    for got, want in zip(capture_activations(model, x), inputs):
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(model.forward(x), out, rtol=1e-5, atol=1e-6)


def test_broken_chain():
    with pytest.raises(ShapeError):
        ToyModel([Layer("a", np.ones((3, 2))), Layer("b", np.ones((2, 4)))])
    with pytest.raises(ShapeError):
        capture_activations(_random_model(0), np.ones((5, 2)))


def test_zero_gradients():
    model = _random_model(3)
    g = capture_gradients(model, np.zeros((6, 4)), np.zeros((4, 4)))
    assert all(np.all(gi == 0) for gi in g)


def test_linear_closed_form_gradient():
    w = np.array([[1.0, 2.0], [0.5, -1.0]])
    x = np.array([[1.0], [3.0]])
    t = np.array([[2.0], [0.0]])
    g = capture_gradients(ToyModel([Layer("l", w, "none")]), x, t)[0]
    np.testing.assert_allclose(g, np.abs(2 * (w @ x - t) @ x.T), rtol=1e-6)


def test_gradients_match_finite_differences():
    model = _random_model(4, dims=(4, 6, 3), acts=("gelu", "none"))
    rng = Rng(5)
    x = rng.normal((4, 7))
    t = rng.normal((3, 7))
    _, grads = loss_and_gradients(model, x, t)
    weights = [l.weight.astype(np.float64) for l in model.layers]
    acts = [l.activation for l in model.layers]

    def loss(ws):
        _, out = forward_loops(ws, acts, x)
        return float(np.sum((out - t) ** 2) / x.shape[1])

    for layer in range(2):
        for _ in range(5):
            i = rng.integers(weights[layer].shape[0])
            j = rng.integers(weights[layer].shape[1])
            fd = finite_difference_grad(loss, weights, layer, i, j)
            assert grads[layer][i, j] == pytest.approx(fd, rel=1e-3, abs=1e-8)


def test_model_save_load(tmp_path):
    model = _random_model(6)
    model.save(tmp_path / "m.tnsr")
    back = ToyModel.load(tmp_path / "m.tnsr")
    assert back.names == model.names
    assert [l.activation for l in back.layers] == ["relu", "gelu", "none"]
    for a, b in zip(back.layers, model.layers):
        np.testing.assert_array_equal(a.weight, b.weight)
    (tmp_path / "m.json").unlink()
    with pytest.raises(FormatError):
        ToyModel.load(tmp_path / "m.tnsr")


def test_one_layer_run_equals_direct_search():
    rng = Rng(7)
    model = ToyModel([Layer("fc", rng.normal((12, 20)) * np.exp(rng.normal(12))[:, None], "none")])
    calib = CalibrationSet.synthetic(20, 48, seed=8)
    run = prune_model(model, calib, ScoreConfig("wanda"), uniform_allocate(["fc"], [240], 0.6))
    w = model.layers[0].weight
    direct = lr_search(w, calib.samples, score_wanda(w, calib.samples), 0.6)
    np.testing.assert_array_equal(run.results["fc"].s_best.s, direct.s_best.s)
    assert run.results["fc"].q_best == direct.q_best
    assert run.pruned_count() == round(0.6 * 240)


def test_recalc_first_layer_unchanged_scores_dense():
    model = _random_model(9, dims=(8, 16, 16, 4))
    calib = CalibrationSet.synthetic(8, 64, seed=10)
    alloc = uniform_allocate(model.names, [l.weight.size for l in model.layers], 0.5)
    off = prune_model(model, calib, ScoreConfig("wanda"), alloc, recalc=False)
    on = prune_model(model, calib, ScoreConfig("wanda"), alloc, recalc=True)
    for name in model.names:
        assert off.scores[name].tobytes() == on.scores[name].tobytes()
    np.testing.assert_array_equal(off.masks["layer0"], on.masks["layer0"])
    assert off.pruned_count() == on.pruned_count()


def test_layer_targets_keep_global_budget():
    model = _random_model(11, dims=(5, 7, 3), acts=("relu", "none"))
    alloc = owl_allocate([0.0, 0.1], [35, 21], 0.5, OwlParams(lam=0.1), names=model.names)
    targets = layer_targets(model, alloc)
    counts = [round(targets[l.name] * l.weight.size) for l in model.layers]
    assert sum(counts) == round(sum(t * s for t, s in zip(alloc.per_layer_t, [35, 21])))


def test_no_trim_and_other_groups():
    model = _random_model(12)
    calib = CalibrationSet.synthetic(6, 32, seed=13)
    alloc = uniform_allocate(model.names, [l.weight.size for l in model.layers], 0.5)
    run = prune_model(model, calib, ScoreConfig("magnitude", "whole_layer"), alloc, trim=False)
    assert all(r.chosen_lr == 0 for r in run.results.values())
    with pytest.raises(ContractError):
        prune_model(model, calib, ScoreConfig("magnitude", "whole_layer"), alloc, trim=True)


def test_evaluate_unpruned_and_heavier():
    model = _random_model(14)
    calib = CalibrationSet.synthetic(6, 32, seed=15)
    hold = CalibrationSet.synthetic(6, 32, seed=16)
    ev = evaluate_models(model, model, hold)
    assert ev["global"]["end_to_end_cosine"] == pytest.approx(1.0)
    assert ev["global"]["loss_delta"] == 0.0
    sizes = [l.weight.size for l in model.layers]
    cos = []
    for t in (0.2, 0.5, 0.8):
        run = prune_model(model, calib, ScoreConfig("wanda"), uniform_allocate(model.names, sizes, t),
                          trim=False)
        cos.append(evaluate_run(run, hold, calib)["global"]["end_to_end_cosine"])
    assert cos[2] <= cos[1] <= cos[0]


def test_evaluate_rejects_shared_seed():
    model = _random_model(17)
    calib = CalibrationSet.synthetic(6, 16, seed=3)
    run = prune_model(model, calib, ScoreConfig("wanda"),
                      uniform_allocate(model.names, [l.weight.size for l in model.layers], 0.5))
    with pytest.raises(ContractError):
        evaluate_run(run, CalibrationSet.synthetic(6, 16, seed=3), calib)


def test_toy_loss():
    assert toy_loss([[1.0, 2.0]], [[0.0, 0.0]]) == pytest.approx(2.5)


def test_report_shape():
    model = _random_model(18)
    calib = CalibrationSet.synthetic(6, 16, seed=19)
    run = prune_model(model, calib, ScoreConfig("gblm"),
                      uniform_allocate(model.names, [l.weight.size for l in model.layers], 0.5),
                      grads=[np.ones_like(l.weight) for l in model.layers])
    rep = run.report()
    assert rep["schema_version"] == 1 and len(rep["layers"]) == 3
    assert set(run.container()) == {f"layer{i}.{k}" for i in range(3)
                                    for k in ("weight", "mask", "svec", "score")}
