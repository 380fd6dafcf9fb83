"""Command-line front end.

Subcommands:
  generate  build a synthetic distribution-shift task directory
  retrieve  match and rank a caption corpus against a class list
  train     run one adaptation recipe end to end and write a run directory
  sweep     train across a list of perturbation radii and tabulate
  report    aggregate finished run directories into summary tables
"""

from __future__ import annotations

import argparse
import json
import os

from . import adversarial, data, evaluation, pipeline, retrieval
from .checkpoint import load_checkpoint
from .model import DualEncoderModel, ModelConfig


def _read_class_list(path):
    with open(path, encoding="utf-8") as fh:
        names = [line.strip() for line in fh if line.strip()]
    if not names:
        raise SystemExit(f"{path}: no class names found")
    return names


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _parse_overrides(pairs):
    out: dict = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise SystemExit(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        target = out
        *parents, leaf = key.split(".")
        for parent in parents:
            target = target.setdefault(parent, {})
        target[leaf] = _parse_value(raw)
    return out


def _cmd_generate(args):
    bench = data.generate_shift_benchmark(num_classes=args.classes,
                                          input_dim=args.dim, seed=args.seed,
                                          magnitude=args.magnitude)
    data.save_benchmark(bench, args.out)
    counts = bench.meta["counts"]
    print(f"wrote task {bench.name!r} to {args.out}")
    for tag in sorted(counts):
        print(f"  {tag}\t{counts[tag]}")
    return 0


def _cmd_retrieve(args):
    corpus = retrieval.read_corpus_tsv(args.corpus, args.payloads)
    names = _read_class_list(args.classes)
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint).model
    else:
        # matching is model-free; ranking just needs some text encoder
        model = DualEncoderModel(ModelConfig(input_dim=2, num_classes=len(names)),
                                 seed=args.seed)
    cap = None if args.cap == 0 else args.cap
    ds = retrieval.retrieve_all(corpus, names, model, cap=cap)
    retrieval.write_retrieved_tsv(ds, args.out)
    print(f"wrote {len(ds)} retrieved records to {args.out}")
    for name, count in ds.histogram().items():
        print(f"  {name}\t{count}")
    return 0


def _cmd_train(args):
    overrides = _parse_overrides(args.set)  # fail on bad --set before any IO
    task = data.load_benchmark(args.task)
    corpus = retrieval.read_corpus_tsv(args.corpus, args.payloads) \
        if args.corpus else None
    result = pipeline.run_recipe(args.recipe, task, corpus=corpus,
                                 shots=args.shots, seed=args.seed, cap=args.cap,
                                 overrides=overrides,
                                 pretrain_epochs=args.pretrain_epochs)
    pipeline.write_run_dir(result, args.out)
    print(f"{args.recipe} seed={args.seed} shots={args.shots} "
          f"selected epoch {result.checkpoint.epoch} "
          f"(id_val {result.checkpoint.id_val_top1:.4f})")
    print(evaluation.format_report(result.report))
    return 0


def _cmd_sweep(args):
    overrides = _parse_overrides(args.set)
    task = data.load_benchmark(args.task)
    epsilons = [float(tok) for tok in args.epsilons.split(",")]
    rows = adversarial.sweep_epsilon(task, epsilons, shots=args.shots,
                                     seed=args.seed, overrides=overrides,
                                     pretrain_epochs=args.pretrain_epochs)
    table = adversarial.format_sweep_table(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table + "\n")
    print(table)
    return 0


def _read_run(run_dir):
    with open(os.path.join(run_dir, "run.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    per = {}
    ood_mean = float("nan")
    with open(os.path.join(run_dir, "report.tsv"), encoding="utf-8") as fh:
        for line in fh:
            name, value = line.rstrip("\n").split("\t")
            if name == "ood_mean":
                ood_mean = float(value)
            else:
                per[name] = float(value)
    report = evaluation.EvalReport(per_dataset_top1=per, ood_mean=ood_mean,
                                   seed=meta["seed"], tag=meta["method"])
    return meta, report


def _cmd_report(args):
    by_method: dict = {}
    for run_dir in args.runs:
        meta, report = _read_run(run_dir)
        by_method.setdefault(meta["method"], []).append((meta, report))
    print("method\tseeds\tid_top1\tood_mean\tparams_trained")
    points = []
    for method in sorted(by_method):
        entries = by_method[method]
        summary = evaluation.summarize_seeds([r for _, r in entries])
        id_m, id_s = summary["id_test"]
        ood_m, ood_s = summary["ood_mean"]
        params = entries[0][0]["params_trained"]
        print(f"{method}\t{len(entries)}\t{id_m:.4f}±{id_s:.4f}"
              f"\t{ood_m:.4f}±{ood_s:.4f}\t{params}")
        points.append(evaluation.ScatterPoint(method, params, id_m, ood_m))
    if args.scatter:
        with open(args.scatter, "w", encoding="utf-8") as fh:
            fh.write(evaluation.format_scatter(points) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srapf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic shift task")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--magnitude", type=float, default=1.0)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("retrieve", help="string-match and rank a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--classes", required=True, help="text file, one class per line")
    p.add_argument("--cap", type=int, default=500, help="per-class cap; 0 = unlimited")
    p.add_argument("--out", required=True)
    p.add_argument("--payloads", default=None)
    p.add_argument("--checkpoint", default=None, help="rank with this model")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("train", help="run one adaptation recipe")
    p.add_argument("--recipe", required=True, choices=pipeline.RECIPES)
    p.add_argument("--task", required=True, help="task directory from `generate`")
    p.add_argument("--out", required=True, help="run directory to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shots", type=int, default=16)
    p.add_argument("--cap", type=int, default=500)
    p.add_argument("--corpus", default=None, help="override the task's corpus")
    p.add_argument("--payloads", default=None)
    p.add_argument("--pretrain-epochs", type=int, default=30)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="stage config override, e.g. --set epochs=5")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep", help="sweep the perturbation radius")
    p.add_argument("--task", required=True)
    p.add_argument("--epsilons", default="0,0.005,0.01,0.02,0.05")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shots", type=int, default=16)
    p.add_argument("--out", default=None)
    p.add_argument("--pretrain-epochs", type=int, default=30)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="aggregate run directories")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--scatter", default=None,
                   help="write a method/params/id/ood scatter table here")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
