"""Command-line entry point: ``graphfeat <subcommand> ...``.

Every subcommand prints one JSON report (with an embedded run manifest) to
stdout and, with ``--out``, writes files into an output directory.

Exit codes: 0 success, 2 input/validation error, 3 undefined metric under
``--strict``, 4 non-finite training loss.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adapter import TUGA_VERSION, Adapter, AdapterSpec
from .errors import InputError, NumericalError, UndefinedMetricError
from .evaluation import evaluate_lp, evaluate_nc, reports_to_csv
from .gnn import (TUGN_VERSION, GnnModel, GnnSpec, default_lp_config, default_nc_config,
                  gnn_train_lp, gnn_train_nc)
from .graph import (TUGF_VERSION, check_split_disjoint, load_edge_list, load_features,
                    load_labels, load_split, save_edge_list, save_features, save_split,
                    split_edges)
from .metrics import metrics_report
from .synth import CORRUPTIONS, KINDS, SynthSpec, generate, write_dataset
from .trainer import LEARNING_RATE_GRID, TrainConfig, touchup

logger = logging.getLogger("graphfeat")

EXIT_INPUT, EXIT_UNDEFINED, EXIT_NUMERICAL = 2, 3, 4


# ------------------------------------------------------------------ helpers

def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _input_digests(paths: dict) -> dict:
    out = {}
    for name, p in paths.items():
        if p is None:
            continue
        p = Path(p)
        if p.is_dir():
            out[name] = {f.name: _digest(f) for f in sorted(p.iterdir()) if f.is_file()}
        else:
            out[name] = _digest(p)
    return out


def manifest(args, inputs: dict) -> dict:
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    return {
        "subcommand": args.command,
        "flags": flags,
        "inputs": _input_digests(inputs),
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "formats": {"TUGF": TUGF_VERSION, "TUGA": TUGA_VERSION, "TUGN": TUGN_VERSION},
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def _emit(args, report: dict, name="report.json") -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if getattr(args, "out", None):
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text + "\n", encoding="utf-8")


def _timing(args) -> bool:
    return not args.deterministic


def _train_config(args, prefix="") -> TrainConfig:
    get = lambda name: getattr(args, prefix + name)  # noqa: E731
    return TrainConfig(learning_rate=get("lr"), batch_size=get("batch_size"),
                       max_epochs=get("max_epochs"), clip_norm=get("clip_norm"),
                       patience=get("patience"), valid_subsample_frac=get("valid_frac"),
                       valid_negatives=get("valid_negatives"),
                       negatives_per_edge=get("negatives_per_edge"),
                       fixed_valid_subset=get("fixed_valid_subset"), seed=args.seed,
                       max_steps_per_epoch=get("max_steps_per_epoch"))


def _add_train_flags(p, prefix="", defaults: TrainConfig | None = None):
    d = defaults or TrainConfig()
    dash = prefix.replace("_", "-")
    p.add_argument(f"--{dash}lr", dest=f"{prefix}lr", type=float, default=d.learning_rate,
                   help=f"learning rate (searched grid: {', '.join(map(str, LEARNING_RATE_GRID))})")
    p.add_argument(f"--{dash}batch-size", dest=f"{prefix}batch_size", type=int, default=d.batch_size)
    p.add_argument(f"--{dash}max-epochs", dest=f"{prefix}max_epochs", type=int, default=d.max_epochs)
    p.add_argument(f"--{dash}clip-norm", dest=f"{prefix}clip_norm", type=float, default=d.clip_norm)
    p.add_argument(f"--{dash}patience", dest=f"{prefix}patience", type=int, default=d.patience)
    p.add_argument(f"--{dash}valid-frac", dest=f"{prefix}valid_frac", type=float,
                   default=d.valid_subsample_frac)
    p.add_argument(f"--{dash}valid-negatives", dest=f"{prefix}valid_negatives", type=int,
                   default=d.valid_negatives)
    p.add_argument(f"--{dash}negatives-per-edge", dest=f"{prefix}negatives_per_edge", type=int,
                   default=d.negatives_per_edge)
    p.add_argument(f"--{dash}fixed-valid-subset", dest=f"{prefix}fixed_valid_subset",
                   action="store_true", default=d.fixed_valid_subset)
    p.add_argument(f"--{dash}max-steps-per-epoch", dest=f"{prefix}max_steps_per_epoch", type=int,
                   default=d.max_steps_per_epoch)


def _add_gnn_flags(p):
    p.add_argument("--gnn-layers", type=int, default=2, choices=(1, 2))
    p.add_argument("--gnn-hidden", type=int, default=64)
    p.add_argument("--gnn-out", type=int, default=64)
    _add_train_flags(p, "gnn_", default_lp_config())
    p.add_argument("--nc-lr", type=float, default=default_nc_config().learning_rate)
    p.add_argument("--nc-max-epochs", type=int, default=default_nc_config().max_epochs)
    p.add_argument("--nc-patience", type=int, default=default_nc_config().patience)


def _gnn_spec(args) -> GnnSpec:
    return GnnSpec(args.gnn_layers, args.gnn_hidden, args.gnn_out)


def _nc_config(args) -> TrainConfig:
    return TrainConfig(learning_rate=args.nc_lr, max_epochs=args.nc_max_epochs,
                       patience=args.nc_patience, clip_norm=args.gnn_clip_norm, seed=args.seed)


def _synth_spec(args) -> SynthSpec:
    return SynthSpec(kind=args.kind, n=args.n, d=args.d, communities=args.communities,
                     p_in=args.p_in, p_out=args.p_out, noise_sigma=args.noise_sigma,
                     corruption=args.corruption, seed=args.seed)


def _add_synth_flags(p, defaults: SynthSpec):
    p.add_argument("--kind", choices=KINDS, default=defaults.kind)
    p.add_argument("--n", type=int, default=defaults.n)
    p.add_argument("--d", type=int, default=defaults.d)
    p.add_argument("--communities", type=int, default=defaults.communities)
    p.add_argument("--p-in", type=float, default=defaults.p_in,
                   help="within-community edge probability (edge probability for er-random)")
    p.add_argument("--p-out", type=float, default=defaults.p_out)
    p.add_argument("--noise-sigma", type=float, default=defaults.noise_sigma)
    p.add_argument("--corruption", choices=CORRUPTIONS, default=defaults.corruption)


# -------------------------------------------------------------- subcommands

def cmd_metrics(args) -> int:
    graph = load_edge_list(args.graph, write_remap=False)
    feats = load_features(args.features, graph)
    report = metrics_report(graph, feats, threads=args.threads)
    report["graph_file"] = str(args.graph)
    report["manifest"] = manifest(args, {"graph": args.graph, "features": args.features})
    _emit(args, report, "metrics.json")
    if args.strict and not report["defined"]:
        raise UndefinedMetricError("feature homophily is undefined (zero feature spread over edges)")
    return 0


def cmd_synth(args) -> int:
    data = generate(_synth_spec(args))
    paths = write_dataset(data, args.out)
    report = {"files": paths, "nodes": data.graph.node_count, "edges": data.graph.edge_count,
              "dim": data.features.dim,
              "metrics": metrics_report(data.graph, data.features, args.threads),
              "manifest": manifest(args, {})}
    _emit(args, report, "synth.json")
    return 0


def cmd_split(args) -> int:
    graph = load_edge_list(args.graph, write_remap=False)
    graph_train, split = split_edges(graph, tuple(args.ratios), args.negatives, args.seed)
    out = Path(args.out)
    save_split(split, out)
    save_edge_list(graph_train, out / "train_graph.txt")
    report = {"train": len(split.train_edges), "valid": len(split.valid_edges),
              "test": len(split.test_edges), "negatives_per_edge": args.negatives,
              "train_graph": str(out / "train_graph.txt"),
              "manifest": manifest(args, {"graph": args.graph})}
    _emit(args, report, "split.json")
    return 0


def cmd_touchup(args) -> int:
    graph_train = load_edge_list(args.graph, write_remap=False)
    feats = load_features(args.features, graph_train)
    split = load_split(args.split, graph_train)
    # reject a graph file that leaks held-out edges before any training
    check_split_disjoint(graph_train, split)
    spec = AdapterSpec(args.adapter, args.output_dim, args.hidden_dim)
    adapter, touched, log = touchup(graph_train, feats, split, spec, _train_config(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    adapter.save(out / "adapter.tuga")
    save_features(touched, out / "features.tugf")
    (out / "train_log.jsonl").write_text(log.to_jsonl(_timing(args)), encoding="utf-8")
    figures = {}
    if args.figures:
        from .plotting import plot_training_curve
        figures["training_curve"] = plot_training_curve(log, out / "training_curve.png")
    report = {"adapter": {"kind": adapter.kind, "input_dim": adapter.input_dim,
                          "hidden_dim": adapter.hidden_dim, "output_dim": adapter.output_dim,
                          "parameters": adapter.parameter_count},
              "train_log": log.summary(_timing(args)),
              "h_f_before": metrics_report(graph_train, feats)["h_f"],
              "h_f_after": log.final_h_f, "h_f_graph": "training graph",
              "files": {"adapter": str(out / "adapter.tuga"),
                        "features": str(out / "features.tugf"),
                        "train_log": str(out / "train_log.jsonl"), **figures},
              "manifest": manifest(args, {"graph": args.graph, "features": args.features,
                                          "split": args.split})}
    _emit(args, report, "touchup.json")
    return 0


def cmd_eval(args) -> int:
    graph = load_edge_list(args.graph, write_remap=False)
    feats = load_features(args.features, graph)
    base = load_features(args.base_features, graph) if args.base_features else None
    inputs = {"graph": args.graph, "features": args.features, "base_features": args.base_features,
              "gnn_checkpoint": args.gnn_checkpoint}
    train_log = None
    if args.task == "lp":
        if not args.split:
            raise InputError("--split is required for --task lp")
        split = load_split(args.split, graph)
        inputs["split"] = args.split
        check_split_disjoint(graph, split)
        scorer = "dot"
        if args.scorer == "gnn":
            if args.gnn_checkpoint:
                scorer = GnnModel.load(args.gnn_checkpoint)
            else:
                scorer, train_log = gnn_train_lp(graph, feats, split, _gnn_spec(args),
                                                 _train_config(args, "gnn_"))
        report = evaluate_lp(scorer, graph, feats, split, args.ks, args.which, base)
    else:
        if not args.labels:
            raise InputError("--labels is required for --task nc")
        labels = load_labels(args.labels, graph)
        inputs["labels"] = args.labels
        if args.gnn_checkpoint:
            model = GnnModel.load(args.gnn_checkpoint)
        else:
            model, train_log = gnn_train_nc(graph, feats, labels, _gnn_spec(args), _nc_config(args))
        report = evaluate_nc(model, graph, feats, labels)
        if base is not None:
            report.h_f_before = metrics_report(graph, base)["h_f"]
        scorer = model
    if args.save_gnn and isinstance(scorer, GnnModel):
        scorer.save(args.save_gnn)
    out = report.to_dict(_timing(args))
    if train_log is not None:
        out["gnn_train_log"] = train_log.summary(_timing(args))
    out["manifest"] = manifest(args, inputs)
    if args.csv:
        text = reports_to_csv([report])
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            (Path(args.out) / "eval.csv").write_text(text, encoding="utf-8")
        print(text, end="")
        if args.out:
            (Path(args.out) / "eval.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
        return 0
    _emit(args, out, "eval.json")
    return 0


def run_pipeline(args) -> dict:
    """synth -> split -> metrics -> touchup -> metrics -> eval, one report."""
    out = Path(args.out)
    timing = _timing(args)
    data_dir, split_dir, touch_dir = out / "data", out / "split", out / "touchup"
    data = generate(_synth_spec(args))
    paths = write_dataset(data, data_dir)

    graph = load_edge_list(paths["graph"], write_remap=False)
    base = load_features(paths["features"], graph)
    graph_train, split = split_edges(graph, tuple(args.ratios), args.negatives, args.seed)
    save_split(split, split_dir)
    save_edge_list(graph_train, split_dir / "train_graph.txt")

    before = metrics_report(graph, base, args.threads)
    adapter, touched, log = touchup(graph_train, base, split,
                                    AdapterSpec(args.adapter, args.output_dim, args.hidden_dim),
                                    _train_config(args))
    touch_dir.mkdir(parents=True, exist_ok=True)
    adapter.save(touch_dir / "adapter.tuga")
    save_features(touched, touch_dir / "features.tugf")
    (touch_dir / "train_log.jsonl").write_text(log.to_jsonl(timing), encoding="utf-8")
    after = metrics_report(graph, touched, args.threads)

    evals = {"lp_dot_base": evaluate_lp("dot", graph_train, base, split, args.ks),
             "lp_dot_touchup": evaluate_lp("dot", graph_train, touched, split, args.ks, base_features=base)}
    gnn_logs = {}
    if not args.skip_gnn:
        for name, feats in (("base", base), ("touchup", touched)):
            model, glog = gnn_train_lp(graph_train, feats, split, _gnn_spec(args),
                                       _train_config(args, "gnn_"))
            evals[f"lp_gnn_{name}"] = evaluate_lp(model, graph_train, feats, split, args.ks)
            gnn_logs[f"lp_gnn_{name}"] = glog.summary(timing)
        if data.labels is not None:
            for name, feats in (("base", base), ("touchup", touched)):
                model, glog = gnn_train_nc(graph, feats, data.labels, _gnn_spec(args), _nc_config(args))
                evals[f"nc_gnn_{name}"] = evaluate_nc(model, graph, feats, data.labels)
                gnn_logs[f"nc_gnn_{name}"] = glog.summary(timing)

    report = {
        "metrics_before": before, "metrics_after": after, "metrics_graph": "full graph",
        "h_f_ratio": (after["h_f"] / before["h_f"]) if before["h_f"] else None,
        "touchup_log": log.summary(timing),
        "evaluations": {k: v.to_dict(timing) for k, v in evals.items()},
        "gnn_logs": gnn_logs,
    }
    (out / "report.csv").write_text(reports_to_csv(evals.values()), encoding="utf-8")
    if args.figures:
        from .plotting import plot_homophily, plot_metric_comparison, plot_training_curve
        rows = {k: {"mrr": v.mrr, "hits@1": v.hits_at.get(1), "hits@10": v.hits_at.get(10)}
                for k, v in evals.items() if v.task == "lp"}
        report["figures"] = {
            "homophily": plot_homophily(before["h_f"], after["h_f"], out / "homophily.png"),
            "training_curve": plot_training_curve(log, out / "training_curve.png"),
            "link_prediction": plot_metric_comparison(rows, out / "link_prediction.png"),
        }
    report["manifest"] = manifest(args, {})
    return report


def cmd_pipeline(args) -> int:
    report = run_pipeline(args)
    _emit(args, report, "report.json")
    return 0


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphfeat",
        description="Measure and improve structure/feature alignment of graph node features.")
    parser.add_argument("--version", action="version",
                        version=f"graphfeat {__version__} (TUGF v{TUGF_VERSION}, "
                                f"TUGA v{TUGA_VERSION}, TUGN v{TUGN_VERSION})")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for metric reductions")
    parser.add_argument("--deterministic", action="store_true",
                        help="single-threaded fixed-order reductions; no wall-clock values in reports")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("metrics", help="feature homophily, smoothness and mean edge cosine")
    p.add_argument("--graph", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--strict", action="store_true", help="exit 3 when h_f is undefined")
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_synth_flags(p, SynthSpec())
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="train/valid/test edge split with negatives")
    p.add_argument("--graph", required=True)
    p.add_argument("--ratios", type=float, nargs=3, default=(0.6, 0.1, 0.3))
    p.add_argument("--negatives", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("touchup", help="train an adapter head with the structure loss")
    p.add_argument("--graph", required=True, help="training graph edge list (train_graph.txt from 'split')")
    p.add_argument("--features", required=True)
    p.add_argument("--split", required=True, help="directory written by 'split'")
    p.add_argument("--adapter", choices=("linear", "mlp"), default="mlp")
    p.add_argument("--output-dim", type=int)
    p.add_argument("--hidden-dim", type=int)
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--figures", action="store_true", help="also write training_curve.png")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_touchup)

    p = sub.add_parser("eval", help="link prediction or node classification evaluation")
    p.add_argument("--task", choices=("lp", "nc"), default="lp")
    p.add_argument("--graph", required=True,
                   help="training graph for lp (message passing never sees held-out edges); full graph for nc")
    p.add_argument("--features", required=True)
    p.add_argument("--base-features", help="reference features for h_f_before")
    p.add_argument("--split")
    p.add_argument("--labels")
    p.add_argument("--which", choices=("valid", "test"), default="test")
    p.add_argument("--scorer", choices=("dot", "gnn"), default="dot")
    p.add_argument("--gnn-checkpoint")
    p.add_argument("--save-gnn")
    p.add_argument("--ks", type=int, nargs="+", default=[1, 10])
    _add_gnn_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", action="store_true", help="emit one flat CSV row instead of JSON")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="synth, split, touch-up and evaluate in one run")
    _add_synth_flags(p, SynthSpec(corruption="shuffle-rows", noise_sigma=1.0))
    p.add_argument("--ratios", type=float, nargs=3, default=(0.6, 0.1, 0.3))
    p.add_argument("--negatives", type=int, default=100)
    p.add_argument("--adapter", choices=("linear", "mlp"), default="mlp")
    p.add_argument("--output-dim", type=int)
    p.add_argument("--hidden-dim", type=int)
    _add_train_flags(p)
    _add_gnn_flags(p)
    p.add_argument("--ks", type=int, nargs="+", default=[1, 10])
    p.add_argument("--skip-gnn", action="store_true")
    p.add_argument("--figures", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.deterministic:
        args.threads = 1
    try:
        return args.func(args)
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except UndefinedMetricError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
