"""Command-line entry point: ``keystep-graph <subcommand> ...``.

Exit codes: 0 ok, 2 usage error, 3 data error, 4 training divergence.
Failures print one line to stderr: ``error <module>.<Category>: <message>``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .datamodel import load_manifest
from .errors import KeystepGraphError
from .graphs import ContextMode, dump_graphs_jsonl, graph_stats
from .metrics import aggregate_folds, fold_metrics
from .model import load_checkpoint, save_checkpoint
from .synthgen import SynthConfig, generate
from .trainer import (
    TrainConfig,
    Variant,
    cross_validate,
    inference_graphs,
    model_config_for,
    pool_manifest,
    predict_records,
    training_graphs,
    write_trace,
)

log = logging.getLogger("keystep_graph")

CONTEXT_LABELS = {"none": "no-context", "short": "short context", "full": "full context"}

# (flag, dest, type, default, owner, help); owner routes the value to ModelConfig or TrainConfig
TUNABLES = [
    ("--hidden-dim", "hidden_dim", int, 128, "model", "hidden width"),
    ("--num-layers", "num_layers", int, 2, "model", "message-passing layers"),
    ("--dropout", "dropout_p", float, 0.2, "model", "dropout probability after each layer"),
    ("--lr", "learning_rate", float, 1e-3, "train", "Adam learning rate"),
    ("--epochs", "epochs", int, 200, "train", "maximum epochs per fold"),
    ("--patience", "early_stop_patience", int, 20, "train", "early-stop patience in epochs (0 disables)"),
    ("--threshold", "threshold", float, 0.1, "train", "confidence threshold of the F1 metric"),
]


def _add_tunables(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model and training (flags override --config)")
    for flag, dest, typ, default, _, text in TUNABLES:
        g.add_argument(flag, dest=dest, type=typ, default=None, help=f"{text} (default: {default})")
    g.add_argument("--exo-temporal-edges", action="store_true", default=None,
                   help="chain exo nodes of each view with Temporal edges (default: off)")
    g.add_argument("--config", type=Path, default=None,
                   help="JSON file with any of the options above, keyed by option name (default: none)")
    g.add_argument("--parallel-folds", type=int, default=1, help="folds trained concurrently (default: 1)")


def _resolve(args) -> tuple[dict, dict]:
    """Merge defaults < config file < flags into (model overrides, train overrides)."""
    cfg = {}
    if args.config is not None:
        cfg = json.loads(Path(args.config).read_text())
        known = {t[1] for t in TUNABLES} | {"exo_temporal_edges"}
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown keys in {args.config}: {sorted(unknown)}")
    model, train = {}, {}
    for _, dest, _, default, owner, _ in TUNABLES:
        value = getattr(args, dest)
        if value is None:
            value = cfg.get(dest, default)
        (model if owner == "model" else train)[dest] = value
    if train["early_stop_patience"] == 0:
        train["early_stop_patience"] = None
    train["exo_temporal_edges"] = bool(args.exo_temporal_edges if args.exo_temporal_edges is not None
                                       else cfg.get("exo_temporal_edges", False))
    return model, train


def _write_predictions(path: Path, records) -> None:
    records = sorted(records, key=lambda r: (r.take_id, r.segment_index))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["take_id", "segment_index", "true_label", "pred_label", "confidence"])
        for r in records:
            w.writerow([r.take_id, r.segment_index, r.true_label, r.predicted_label, repr(r.confidence)])


def _run_cv(manifest, variant: Variant, context: ContextMode, seed: int, args, out: Path, pooled=None):
    model_kw, train_kw = _resolve(args)
    tc = TrainConfig(seed=seed, variant=variant, context=context, **train_kw)
    mc = model_config_for(manifest, variant, **model_kw)
    result = cross_validate(manifest, mc, tc, pooled=pooled, parallel_folds=args.parallel_folds)
    out.mkdir(parents=True, exist_ok=True)
    for f in result.folds:
        d = out / f"fold_{f.fold}"
        d.mkdir(exist_ok=True)
        write_trace(d / "trace.csv", f.trace)
        save_checkpoint(d / "model.glvp", f.params, mc)
    (out / "report.json").write_text(result.report.to_json())
    _write_predictions(out / "predictions.csv", result.records)
    return result


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_synthetic(args) -> int:
    cfg = {}
    if args.config is not None:
        cfg = json.loads(Path(args.config).read_text())
    if args.seed is not None:
        cfg["seed"] = args.seed
    manifest = generate(SynthConfig.from_dict(cfg), args.out)
    print(json.dumps({"manifest": str(Path(args.out) / "manifest.json"), "takes": len(manifest.takes)}))
    return 0


def cmd_build_graphs(args) -> int:
    manifest = load_manifest(args.manifest)
    variant, context = Variant(args.variant), ContextMode(args.context)
    graphs = [
        g
        for p in pool_manifest(manifest)
        for g in training_graphs(p, variant, context, args.exo_temporal_edges)
    ]
    if args.dump is not None:
        dump_graphs_jsonl(graphs, args.dump)
    print(json.dumps(graph_stats(graphs).as_dict()))
    return 0


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    result = _run_cv(manifest, Variant(args.variant), ContextMode(args.context), args.seed, args, Path(args.out))
    print(result.report.table())
    return 0


def cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest)
    params, mc = load_checkpoint(args.checkpoint)
    variant = Variant(args.variant) if args.variant else _variant_of(mc)
    context = ContextMode(args.context)
    graphs = [g for p in pool_manifest(manifest) for g in inference_graphs(p, variant, context)]
    records = predict_records(graphs, params, mc)
    report = aggregate_folds(
        [fold_metrics(0, records, args.threshold, mc.num_classes)], variant.value, context.value, args.threshold
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    _write_predictions(out / "predictions.csv", records)
    print(report.table())
    return 0


def _variant_of(mc) -> Variant:
    from .graphs import NodeType

    exo = NodeType.ExoVision in mc.input_dims
    text = NodeType.Text in mc.input_dims
    return {(False, False): Variant.EgoOnly, (True, False): Variant.MultiView,
            (False, True): Variant.Hetero, (True, True): Variant.MultiViewHetero}[(exo, text)]


def cmd_ablate_context(args) -> int:
    manifest = load_manifest(args.manifest)
    pooled = pool_manifest(manifest)
    out = Path(args.out)
    variant = Variant(args.variant)
    rows = []
    for context in (ContextMode.NoContext, ContextMode.ShortContext, ContextMode.FullContext):
        res = _run_cv(manifest, variant, context, args.seed, args, out / context.value, pooled=pooled)
        rows.append((context.value, res.report))
    comparison = {
        "variant": variant.value,
        "rows": [{"context": c, "mean_acc": r.mean_acc, "mean_f1": r.mean_f1} for c, r in rows],
    }
    (out / "comparison.json").write_text(json.dumps(comparison, indent=2) + "\n")
    lines = [f"{'Context size':<16}{'Acc':>8}{'F1@' + str(rows[0][1].threshold):>10}"]
    lines += [f"{CONTEXT_LABELS[c]:<16}{r.mean_acc:>8.2f}{r.mean_f1:>10.2f}" for c, r in rows]
    table = "\n".join(lines) + "\n"
    (out / "comparison.txt").write_text(table)
    print(table, end="")
    return 0


# ---------------------------------------------------------------------------


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Appends defaults, except where the help text already states one or the option is required."""

    def _get_help_string(self, action):
        text = action.help or ""
        if action.required or "(default" in text:
            return text
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    fmt = _HelpFormatter
    parser = argparse.ArgumentParser(prog="keystep-graph", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    variants = [v.value for v in Variant]
    contexts = [c.value for c in ContextMode]

    p = sub.add_parser("gen-synthetic", help="write a synthetic dataset", formatter_class=fmt)
    p.add_argument("--config", type=Path, default=None, help="JSON file of SynthConfig fields")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="overrides the config's seed")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("build-graphs", help="build training graphs and print their statistics", formatter_class=fmt)
    p.add_argument("--manifest", type=Path, required=True, help="manifest JSON")
    p.add_argument("--variant", choices=variants, default="ego", help="graph variant")
    p.add_argument("--context", choices=contexts, default="full", help="temporal context")
    p.add_argument("--dump", type=Path, default=None, help="write graphs as JSON lines here")
    p.add_argument("--exo-temporal-edges", action="store_true", help="chain exo nodes per view")
    p.set_defaults(func=cmd_build_graphs)

    for name, func, text in (
        ("train", cmd_train, "five-fold cross-validated training"),
        ("ablate-context", cmd_ablate_context, "cross-validate at every context length"),
    ):
        p = sub.add_parser(name, help=text, formatter_class=fmt)
        p.add_argument("--manifest", type=Path, required=True, help="manifest JSON")
        p.add_argument("--variant", choices=variants, default="ego", help="graph variant")
        if name == "train":
            p.add_argument("--context", choices=contexts, default="full", help="temporal context")
        p.add_argument("--seed", type=int, default=0, help="RNG seed (folds use seed + fold index)")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        _add_tunables(p)
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest's ego views", formatter_class=fmt)
    p.add_argument("--manifest", type=Path, required=True, help="manifest JSON")
    p.add_argument("--checkpoint", type=Path, required=True, help="model.glvp file")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--variant", choices=variants, default=None, help="inferred from the checkpoint when omitted")
    p.add_argument("--context", choices=contexts, default="full", help="temporal context")
    p.add_argument("--threshold", type=float, default=0.1, help="confidence threshold of the F1 metric")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except KeystepGraphError as exc:
        print(f"error {exc.code}: {exc}".replace("\n", " "), file=sys.stderr)
        return exc.exit_code
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error usage.InvalidValue: {exc}".replace("\n", " "), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error io.{type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
