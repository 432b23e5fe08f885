"""Command-line interface.

Subcommands: synth, train-source, warmup, run, relocalize, eval, bench.
All outputs are JSON or CSV files under --out; every stochastic command
takes --seed.  The run manifest deliberately contains no wall-clock data so
that fixed-seed runs are byte-identical.
"""

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .data import Dataset, positive_negative_split
from .dataio import load_dataset, load_selections, save_dataset, save_selections
from .graph import EvalCounter, GraphProblem, build_graph, subproblem
from .inference import (IcmConfig, InitScheme, full_image_labels_for, icm_run,
                        initialize, partition_mini_problems, trws_solve)
from .losses import LossWeights
from .metrics import corloc, selection_accuracy
from .model import ScoringModel, TrainConfig, train_source
from .pipeline import MODES, PipelineConfig, run
from .synth import SynthConfig, generate
from .transfer import BlendWeights, BlendedOracle

log = logging.getLogger(__name__)

TRACE_FIELDS = ["timestamp", "step", "epoch", "energy", "lower_bound",
                "pairwise_evals"]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, blob) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, fields, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def _train_config(args) -> TrainConfig:
    return TrainConfig(learning_rate=args.learning_rate, momentum=args.momentum,
                       iterations=args.iterations, fg_per_bag=args.fg_per_bag,
                       bg_per_bag=args.bg_per_bag, seed=args.seed,
                       bags_per_step=args.bags_per_step)


def _add_train_flags(p):
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.5)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--fg-per-bag", type=int, default=3)
    p.add_argument("--bg-per-bag", type=int, default=7)
    p.add_argument("--bags-per-step", type=int, default=8)


# ----------------------------------------------------------------------
# synth
# ----------------------------------------------------------------------

def cmd_synth(args):
    cfg = SynthConfig(num_classes=args.num_classes,
                      bags_per_class=args.bags_per_class,
                      proposals_per_bag=args.proposals_per_bag,
                      feature_dim=args.feature_dim,
                      cluster_separation=args.cluster_separation,
                      distractor_overlap=args.distractor_overlap,
                      noise_sigma=args.noise_sigma, seed=args.seed,
                      source_fg_per_bag=args.source_fg_per_bag,
                      source_num_classes=args.source_num_classes)
    source, target, truth = generate(cfg)
    out = _out_dir(args)
    save_dataset(source, out / "source.jsonl")
    save_dataset(target, out / "target.jsonl")
    _write_json(out / "truth.json", truth)
    _write_json(out / "synth_config.json", dataclasses.asdict(cfg))
    print(f"wrote {len(source.bags)} source / {len(target.bags)} target bags "
          f"to {out}")
    return 0


# ----------------------------------------------------------------------
# train-source
# ----------------------------------------------------------------------

def cmd_train_source(args):
    source = load_dataset(args.source)
    target_classes = (sorted(load_dataset(args.target).classes)
                      if args.target else sorted(source.classes))
    model = ScoringModel(source.d, target_classes, seed=args.seed)
    config = _train_config(args)
    _, trace = train_source(model, source, LossWeights(args.alpha), config,
                            use_pairwise=not args.unary_only)
    out = _out_dir(args)
    model.save(out / "model.json")
    _write_csv(out / "source_loss.csv", ["step", "loss"],
               [{"step": i, "loss": repr(v)} for i, v in enumerate(trace)])
    print(f"trained generic scorers: loss {trace[0]:.3f} -> {trace[-1]:.3f}")
    return 0


# ----------------------------------------------------------------------
# relocalize / warmup (shared machinery)
# ----------------------------------------------------------------------

def _traced_relocalize(dataset, model, blend, alpha, scheme, icm_cfg, classes):
    """Per-class re-localization emitting trace rows for every phase."""
    selections, rows = {}, []

    def emit(cls, step, epoch, energy, lb, evals):
        rows.append({"timestamp": repr(time.time()), "class": cls,
                     "step": step, "epoch": epoch,
                     "energy": repr(float(energy)),
                     "lower_bound": "" if lb is None else repr(float(lb)),
                     "pairwise_evals": evals})

    for cls in classes:
        positive, _ = positive_negative_split(dataset, cls)
        if not positive:
            continue
        counter = EvalCounter()
        problem = build_graph(positive, BlendedOracle(model, cls, blend),
                              alpha, mode="lazy", counter=counter)
        if scheme.variant == "mini_problems":
            labels = [0] * problem.num_nodes
            lbs = []
            for group in partition_mini_problems(range(problem.num_nodes),
                                                 scheme.k, scheme.seed):
                sub = subproblem(problem, group)
                sub_labels, lb_trace = trws_solve(sub, scheme.trws)
                lbs.append(lb_trace[-1])
                for node, lab in zip(group, sub_labels):
                    labels[node] = lab
            lb = sum(lbs)
        else:
            fil = (full_image_labels_for(positive)
                   if scheme.variant == "full_image" else None)
            labels = initialize(problem, scheme, fil)
            lb = None
        emit(cls, "init", 0, problem.energy(labels), lb, counter.pairwise_evals)
        for epoch in range(1, icm_cfg.epochs + 1):
            labels, trace = icm_run(problem, labels,
                                    IcmConfig(epochs=1, order=icm_cfg.order,
                                              seed=icm_cfg.seed + epoch))
            emit(cls, "icm", epoch, trace[-1], None, counter.pairwise_evals)
        selections[cls] = {b.id: int(x) for b, x in zip(positive, labels)}
    from .data import Selection
    return ({cls: Selection(cls, chosen) for cls, chosen in selections.items()},
            rows)


def _reloc_common(args, blend):
    dataset = load_dataset(args.target)
    model = ScoringModel.load(args.model)
    scheme = InitScheme(args.init, k=args.k, seed=args.seed)
    icm_cfg = IcmConfig(epochs=args.icm_epochs, seed=args.seed)
    classes = sorted(dataset.classes)
    selections, rows = _traced_relocalize(dataset, model, blend, args.alpha,
                                          scheme, icm_cfg, classes)
    out = _out_dir(args)
    save_selections(selections, out / "selections.json")
    _write_csv(out / "trace.csv", ["timestamp", "class"] + TRACE_FIELDS[1:], rows)
    n = sum(len(s.chosen) for s in selections.values())
    print(f"selected proposals for {n} positive bags across "
          f"{len(selections)} classes")
    return 0


def cmd_warmup(args):
    return _reloc_common(args, BlendWeights(lambda1=1.0, lambda2=1.0))


def cmd_relocalize(args):
    return _reloc_common(args, BlendWeights(lambda1=args.lambda1,
                                            lambda2=args.lambda2))


# ----------------------------------------------------------------------
# run
# ----------------------------------------------------------------------

def cmd_run(args):
    source = load_dataset(args.source)
    target = load_dataset(args.target)
    train = _train_config(args)
    source_train = dataclasses.replace(train, iterations=args.source_iterations)
    config = PipelineConfig(outer_iterations=args.outer_iterations,
                            folds=args.folds, mode=args.mode, alpha=args.alpha,
                            blend=BlendWeights(args.lambda1, args.lambda2),
                            train=train, source_train=source_train,
                            k=args.k, icm_epochs=args.icm_epochs,
                            seed=args.seed,
                            early_stop_change=args.early_stop_change)
    out = _out_dir(args)

    def checkpoint(tag, model):
        model.save(out / f"model_{tag}.json")

    result = run(config, source, target, checkpoint=checkpoint)
    result.model.save(out / "model.json")
    save_selections(result.selections, out / "selections.json")
    manifest = {
        "config": {
            "outer_iterations": config.outer_iterations,
            "folds": config.folds,
            "mode": config.mode,
            "alpha": config.alpha,
            "blend": dataclasses.asdict(config.blend),
            "train": dataclasses.asdict(config.train),
            "source_train": dataclasses.asdict(config.source_train),
            "k": config.k,
            "icm_epochs": config.icm_epochs,
            "early_stop_change": config.early_stop_change,
        },
        "seed": config.seed,
        "history": result.history,
        "selections": {cls: dict(sorted(sel.chosen.items()))
                       for cls, sel in sorted(result.selections.items())},
    }
    _write_json(out / "manifest.json", manifest)
    print(f"{config.mode} run finished after {len(result.history) - 1} "
          f"alternations; outputs in {out}")
    return 0


# ----------------------------------------------------------------------
# eval
# ----------------------------------------------------------------------

def cmd_eval(args):
    dataset = load_dataset(args.target)
    selections = load_selections(args.selections)
    report = {}
    for thr in args.iou_thresholds:
        per_class, mean = corloc(selections, dataset, thr)
        report[f"corloc@{thr:g}"] = {"per_class": per_class, "mean": mean}
    if args.truth:
        with open(args.truth, "r", encoding="utf-8") as fh:
            truth = json.load(fh)
        report["selection_accuracy"] = selection_accuracy(selections, truth)
    out = _out_dir(args)
    _write_json(out / "eval.json", report)
    for key, val in report.items():
        if isinstance(val, dict):
            print(f"{key}: mean {val['mean']:.2f}")
        else:
            print(f"{key}: {val:.4f}")
    return 0


# ----------------------------------------------------------------------
# bench
# ----------------------------------------------------------------------

def _random_problem(m, b, alpha, rng, counter):
    unary = rng.standard_normal((m, b))
    pair = {}

    def unary_fn(i):
        return unary[i]

    def pair_fn(i, a_idx, j, b_idx):
        out = np.empty(len(a_idx))
        for k, (a, bb) in enumerate(zip(a_idx, b_idx)):
            key = (i, int(a), j, int(bb))
            if key not in pair:
                pair[key] = float(rng.standard_normal())
            out[k] = pair[key]
        return out

    return GraphProblem([f"n{i}" for i in range(m)], [b] * m, unary_fn,
                        pair_fn, alpha, mode="lazy", counter=counter)


def cmd_bench(args):
    rng = np.random.default_rng(args.seed)
    rows = []
    for m in args.m:
        for k in args.k:
            for b in args.b:
                counter = EvalCounter()
                problem = _random_problem(m, b, args.alpha, rng, counter)
                t0 = time.perf_counter()
                labels = initialize(problem, InitScheme("mini_problems", k=k,
                                                        seed=args.seed))
                init_evals = counter.pairwise_evals
                t1 = time.perf_counter()
                _, trace = icm_run(problem, labels,
                                   IcmConfig(epochs=args.icm_epochs))
                t2 = time.perf_counter()
                rows.append({"m": m, "k": k, "b": b,
                             "init_pairwise_evals": init_evals,
                             "total_pairwise_evals": counter.pairwise_evals,
                             "unary_evals": counter.unary_evals,
                             "final_energy": repr(trace[-1]),
                             "init_seconds": f"{t1 - t0:.6f}",
                             "icm_seconds": f"{t2 - t1:.6f}"})
                print(f"M={m} K={k} B={b}: init {init_evals} pairwise evals, "
                      f"total {counter.pairwise_evals}")
    out = _out_dir(args)
    _write_csv(out / "bench.csv", list(rows[0].keys()), rows)
    return 0


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="pairloc",
        description="Weakly supervised proposal selection with learned "
                    "pairwise similarity")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted synthetic benchmark")
    p.add_argument("--num-classes", type=int, default=4)
    p.add_argument("--bags-per-class", type=int, default=10)
    p.add_argument("--proposals-per-bag", type=int, default=10)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--cluster-separation", type=float, default=3.0)
    p.add_argument("--distractor-overlap", type=float, default=0.5)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--source-fg-per-bag", type=int, default=3)
    p.add_argument("--source-num-classes", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-source", help="train class-generic scorers on "
                                            "a fully labeled source set")
    p.add_argument("--source", required=True)
    p.add_argument("--target", help="target dataset; defines the class list "
                                    "of the saved model")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--unary-only", action="store_true")
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_source)

    for name, helptext in [("warmup", "re-localize with transferred scores "
                                      "only (lambda1 = lambda2 = 1)"),
                           ("relocalize", "one re-localization step with a "
                                          "chosen initializer and blend")]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--target", required=True)
        p.add_argument("--model", required=True)
        p.add_argument("--alpha", type=float, default=1.0)
        p.add_argument("--init", default="mini_problems",
                       choices=["random", "objectness", "full_image",
                                "mini_problems"])
        p.add_argument("--k", type=int, default=8)
        p.add_argument("--icm-epochs", type=int, default=2)
        if name == "relocalize":
            p.add_argument("--lambda1", type=float, default=0.5)
            p.add_argument("--lambda2", type=float, default=0.5)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        p.set_defaults(func=cmd_warmup if name == "warmup" else cmd_relocalize)

    p = sub.add_parser("run", help="full alternating-optimization pipeline")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--mode", default="full", choices=list(MODES))
    p.add_argument("--outer-iterations", type=int, default=3)
    p.add_argument("--folds", type=int, default=1)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--lambda1", type=float, default=0.5)
    p.add_argument("--lambda2", type=float, default=0.5)
    _add_train_flags(p)
    p.add_argument("--source-iterations", type=int, default=2000)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--icm-epochs", type=int, default=2)
    p.add_argument("--early-stop-change", type=float, default=0.005)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="CorLoc / selection-accuracy report")
    p.add_argument("--target", required=True)
    p.add_argument("--selections", required=True)
    p.add_argument("--truth", help="planted truth JSON from synth")
    p.add_argument("--iou-thresholds", type=float, nargs="+",
                   default=[0.5, 0.7])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="evaluation-counter and wall-time traces "
                                     "on random instances")
    p.add_argument("--m", type=int, nargs="+", default=[8, 16, 32])
    p.add_argument("--k", type=int, nargs="+", default=[2, 4, 8])
    p.add_argument("--b", type=int, nargs="+", default=[5, 10, 20])
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--icm-epochs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
