"""Command-line entry point: ``trimprune <command> [options]``.

Exit codes: 0 success, 2 usage error, 3 format error, 4 numerical/budget error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import diagnostics as diag
from .allocation import METHODS, LayerAllocation, OwlParams, outlier_ratio, owl_allocate, \
    uniform_allocate
from .errors import ContractError, TrimError
from .masking import DEFAULT_CUTOFF
from .optimizer import DEFAULT_LR_SCHEDULE, TrimConfig
from .pipeline import (CalibrationSet, ScoreConfig, ToyModel, capture_activations,
                       evaluate_models, prune_model, score_model)
from .quality import DIM_METRICS, LAYER_METRICS
from .scoring import DEFAULT_DAMPING, DEFAULT_GBLM_BLEND, METRICS
from .tensor import load_container, save_container, write_atomic
from .toys import demo_model

log = logging.getLogger("trimprune")

REPORT_SCHEMA = 1


def _dump_json(path, doc) -> None:
    write_atomic(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    write_atomic(path, buf.getvalue())


def _load_calib(args, model: ToyModel) -> CalibrationSet:
    if args.calib:
        return CalibrationSet.load(args.calib)
    return CalibrationSet.synthetic(model.input_dim, args.calib_samples, seed=args.seed)


def _load_grads(args, model):
    if not getattr(args, "grads", None):
        return None
    c = load_container(args.grads)
    try:
        return [c[f"{layer.name}.grad"] for layer in model.layers]
    except KeyError as exc:
        raise ContractError(f"gradient file lacks {exc}") from None


def _check_gblm_inputs(args, calib):
    if args.metric == "gblm" and not getattr(args, "grads", None) and calib.targets is None:
        raise ContractError("gblm needs --grads or a calibration file with 'targets'")


def _parse_schedule(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad learning-rate schedule {text!r}") from None


# -- commands ---------------------------------------------------------------

def cmd_demo(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, calib = demo_model(args.seed)
    model.save(out / "model.tnsr")
    calib.save(out / "calib.tnsr")
    log.info("wrote demo model and calibration set to %s", out)


def cmd_score(args) -> None:
    model = ToyModel.load(args.model)
    calib = _load_calib(args, model)
    _check_gblm_inputs(args, calib)
    cfg = ScoreConfig(args.metric, "per_output", args.damping, args.gblm_blend)
    scores = score_model(model, calib, cfg, _load_grads(args, model))
    save_container({f"{name}.score": a for name, a in scores.items()}, args.out)


def _layer_scores(path):
    c = load_container(path)
    names = [k[: -len(".score")] for k in c if k.endswith(".score")]
    if not names:
        raise ContractError(f"{path} holds no '<layer>.score' tensors")
    names.sort(key=_layer_sort_key)
    return names, [c[f"{n}.score"] for n in names]


def _layer_sort_key(name):
    # layer2 before layer10
    digits = "".join(ch for ch in name if ch.isdigit())
    return (name.rstrip("0123456789"), int(digits) if digits else -1, name)


def cmd_allocate(args) -> None:
    if args.method == "import":
        if not args.import_file:
            raise ContractError("--method import needs --import FILE")
        alloc = LayerAllocation.loads(Path(args.import_file).read_text())
    else:
        if args.t is None:
            raise ContractError("--t is required")
        names, scores = _layer_scores(args.scores)
        sizes = [a.size for a in scores]
        if args.method == "uniform":
            alloc = uniform_allocate(names, sizes, args.t)
        else:
            ratios = [outlier_ratio(a, args.owl_m) for a in scores]
            alloc = owl_allocate(ratios, sizes, args.t, OwlParams(args.owl_m, args.owl_lambda),
                                 names, args.cutoff)
    write_atomic(args.out, alloc.dumps())


def _trim_config(args) -> TrimConfig:
    return TrimConfig(args.k, args.lr_schedule, 1e-8, args.cutoff, args.layer_metric,
                      args.dim_metric)


def cmd_prune(args) -> None:
    model = ToyModel.load(args.model)
    calib = _load_calib(args, model)
    _check_gblm_inputs(args, calib)
    if args.allocation:
        alloc = LayerAllocation.loads(Path(args.allocation).read_text())
    elif args.t is not None:
        alloc = uniform_allocate(model.names, [layer.weight.size for layer in model.layers], args.t)
    else:
        raise ContractError("give --allocation FILE or --t")
    run = prune_model(model, calib, ScoreConfig(args.metric, args.group, args.damping,
                                                args.gblm_blend),
                      alloc, _trim_config(args), recalc=args.recalc, trim=not args.no_trim,
                      grads=_load_grads(args, model))
    save_container(run.container(), args.out)
    report = run.report()
    report["calib_seed"] = None if args.calib else args.seed
    report["model"] = Path(args.model).name
    _dump_json(args.report or Path(args.out).with_suffix(".report.json"), report)


def cmd_eval(args) -> None:
    dense = ToyModel.load(args.model)
    run = load_container(args.run)
    pruned = dense.with_weights({n: run[f"{n}.weight"] for n in dense.names if f"{n}.weight" in run})
    if args.holdout:
        holdout = CalibrationSet.load(args.holdout)
    else:
        holdout = CalibrationSet.synthetic(dense.input_dim, args.holdout_samples,
                                           seed=args.holdout_seed)
        if args.report:
            calib_seed = json.loads(Path(args.report).read_text()).get("calib_seed")
            if calib_seed is not None and calib_seed == args.holdout_seed:
                raise ContractError("holdout seed equals the calibration seed")
    _dump_json(args.out, evaluate_models(dense, pruned, holdout))


def cmd_diagnose(args) -> None:
    model = ToyModel.load(args.model)
    calib = _load_calib(args, model)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inputs = capture_activations(model, calib)
    scores = score_model(model, calib, ScoreConfig("wanda"))

    if args.which == "gini":
        rows, reports = [], []
        for layer in model.layers:
            rep = diag.gini_report(scores[layer.name], layer.name, args.bins)
            reports.append(rep.to_json())
            rows += [[layer.name, i, repr(float(g))] for i, g in enumerate(rep.per_row_gini)]
        _write_csv(out / "gini.csv", ["layer", "row", "gini"], rows)
        _dump_json(out / "gini.json", {"schema_version": REPORT_SCHEMA, "layers": reports})

    elif args.which == "curve":
        grid = diag.parse_grid(args.grid)
        rows = []
        for layer, x in zip(model.layers, inputs):
            curve = diag.degradation_curve(layer.weight, x, scores[layer.name], grid, args.cutoff)
            rows += [[layer.name, i] + [repr(float(v)) for v in q]
                     for i, q in enumerate(curve.per_dim_quality)]
        _write_csv(out / "curve.csv", ["layer", "row"] + [f"{t:g}" for t in grid], rows)

    elif args.which == "remove-one":
        holdout = CalibrationSet.synthetic(model.input_dim, args.calib_samples, seed=args.holdout_seed)
        reports = {}
        for strategy in ("min_norm", "max_norm", "random"):
            pruned, rep = diag.remove_one_dimension(model, strategy, args.seed)
            rep["eval"] = evaluate_models(model, pruned, holdout)["global"]
            reports[strategy] = rep
        _dump_json(out / "remove_one.json", {"schema_version": REPORT_SCHEMA, "arms": reports})

    elif args.which == "outlier-stress":
        holdout = CalibrationSet.synthetic(model.input_dim, args.calib_samples, seed=args.holdout_seed)
        reports = {}
        for arm in ("outlier", "random"):
            pruned, rep = diag.outlier_dense_stress(model, inputs, args.owl_m, args.top_frac,
                                                    args.row_sparsity, arm, args.seed)
            rep["eval"] = evaluate_models(model, pruned, holdout)["global"]
            reports[arm] = rep
        _dump_json(out / "outlier_stress.json", {"schema_version": REPORT_SCHEMA, "arms": reports})


# -- parser -------------------------------------------------------------------

def _add_calib(p):
    p.add_argument("--calib", help="calibration container with an 'input' tensor "
                                   "(and optional 'targets'); synthetic Gaussian if omitted")
    p.add_argument("--calib-samples", type=int, default=128,
                   help="number of synthetic calibration samples")
    p.add_argument("--seed", type=int, default=0, help="seed for synthetic data and random arms")


def _add_scoring(p):
    p.add_argument("--metric", choices=METRICS, default="wanda")
    p.add_argument("--damping", type=float, default=DEFAULT_DAMPING,
                   help="Hessian damping relative to mean diagonal (sparsegpt)")
    p.add_argument("--gblm-blend", type=float, default=DEFAULT_GBLM_BLEND,
                   help="gradient blend coefficient (gblm)")
    p.add_argument("--grads", help="container with '<layer>.grad' magnitudes (gblm)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="trimprune", description=__doc__, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo", help="write the bundled 2-layer demo model", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("score", help="compute importance scores", formatter_class=fmt)
    p.add_argument("--model", required=True)
    _add_calib(p)
    _add_scoring(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("allocate", help="layer-wise sparsity budgets", formatter_class=fmt)
    p.add_argument("--scores", help="score container from 'score'")
    p.add_argument("--method", choices=METHODS, default="uniform")
    p.add_argument("--t", type=float, help="global target sparsity")
    p.add_argument("--owl-m", type=float, default=5.0, help="outlier multiple M")
    p.add_argument("--owl-lambda", type=float, default=0.08, help="max deviation from T")
    p.add_argument("--cutoff", type=float, default=DEFAULT_CUTOFF)
    p.add_argument("--import", dest="import_file", help="allocation JSON to import")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("prune", help="prune a model", formatter_class=fmt)
    p.add_argument("--model", required=True)
    _add_calib(p)
    _add_scoring(p)
    p.add_argument("--group", default="per_output",
                   help="comparison group: per_output, whole_layer, input_block[:size]")
    p.add_argument("--allocation", help="allocation JSON; overrides --t")
    p.add_argument("--t", type=float, help="uniform target sparsity if no allocation file")
    p.add_argument("--k", type=int, default=10, help="iterations per learning rate")
    p.add_argument("--lr-schedule", type=_parse_schedule,
                   default=DEFAULT_LR_SCHEDULE, help="comma-separated increasing rates")
    p.add_argument("--cutoff", type=float, default=DEFAULT_CUTOFF, help="per-row sparsity ceiling")
    p.add_argument("--layer-metric", choices=LAYER_METRICS, default="cosim_flat")
    p.add_argument("--dim-metric", choices=DIM_METRICS, default="cosine")
    p.add_argument("--recalc", action="store_true",
                   help="evaluate each layer on inputs from already-pruned layers")
    p.add_argument("--no-trim", action="store_true", help="uniform per-row sparsity")
    p.add_argument("--out", required=True, help="run container")
    p.add_argument("--report", help="run report JSON (default: <out>.report.json)")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("diagnose", help="per-dimension analyses", formatter_class=fmt)
    p.add_argument("which", choices=("gini", "curve", "remove-one", "outlier-stress"))
    p.add_argument("--model", required=True)
    _add_calib(p)
    p.add_argument("--bins", type=int, default=20, help="gini histogram bins")
    p.add_argument("--grid", default="0:0.95:0.05", help="sparsity grid start:stop:step")
    p.add_argument("--cutoff", type=float, default=DEFAULT_CUTOFF)
    p.add_argument("--owl-m", type=float, default=3.0, help="outlier multiple M")
    p.add_argument("--top-frac", type=float, default=0.1)
    p.add_argument("--row-sparsity", type=float, default=0.9)
    p.add_argument("--holdout-seed", type=int, default=1000)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("eval", help="evaluate a pruned run on holdout data", formatter_class=fmt)
    p.add_argument("--model", required=True, help="dense model")
    p.add_argument("--run", required=True, help="run container from 'prune'")
    p.add_argument("--report", help="run report, used to reject a reused calibration seed")
    p.add_argument("--holdout", help="holdout container; synthetic if omitted")
    p.add_argument("--holdout-seed", type=int, default=1000)
    p.add_argument("--holdout-samples", type=int, default=128)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except TrimError as exc:
        print(f"trimprune: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"trimprune: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
