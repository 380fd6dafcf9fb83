"""Evaluation: per-dataset top-1 accuracy, OOD means, and seed aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import classify


@dataclass
class EvalReport:
    """Top-1 accuracy per dataset plus the mean over OOD-tagged sets.

    ``ood_mean`` is NaN when the report contains no OOD dataset.
    """

    per_dataset_top1: dict
    ood_mean: float
    seed: int | None = None
    tag: str | None = None

    def __post_init__(self):
        for name, acc in self.per_dataset_top1.items():
            if not 0.0 <= acc <= 1.0:
                raise ValueError(f"accuracy for {name!r} out of [0, 1]: {acc}")
        if not math.isnan(self.ood_mean) and not 0.0 <= self.ood_mean <= 1.0:
            raise ValueError(f"ood_mean out of [0, 1]: {self.ood_mean}")


def top1_accuracy(model, dataset, batch_size: int = 256) -> float:
    """Fraction of examples whose argmax logit hits the label.

    Argmax ties resolve to the lowest class index, so the number is
    deterministic.
    """
    if len(dataset) == 0:
        raise ValueError("cannot score an empty dataset")
    hits = 0
    for start in range(0, len(dataset), batch_size):
        x = dataset.inputs[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        logits = classify(model.encode_image(x), model.classifier.value)
        hits += int((logits.argmax(axis=1) == y).sum())
    return hits / len(dataset)


def evaluate(model, datasets, seed=None, tag=None) -> EvalReport:
    """Score every dataset in a name -> LabeledDataset mapping.

    All datasets must share one label space matching the model's classifier.
    Datasets whose ``shift`` tag starts with "ood" feed the OOD mean.
    """
    if not datasets:
        raise ValueError("no datasets to evaluate")
    spaces = {ds.class_names for ds in datasets.values()}
    if len(spaces) != 1:
        raise ValueError("datasets disagree on the class-name table")
    (names,) = spaces
    if len(names) != model.num_classes:
        raise ValueError(f"model has {model.num_classes} classes, "
                         f"datasets have {len(names)}")
    per = {name: top1_accuracy(model, ds) for name, ds in datasets.items()}
    ood = [per[name] for name, ds in datasets.items() if ds.shift.startswith("ood")]
    ood_mean = float(np.mean(ood)) if ood else float("nan")
    return EvalReport(per_dataset_top1=per, ood_mean=ood_mean, seed=seed, tag=tag)


def summarize_seeds(reports) -> dict:
    """Mean and sample std of every metric across reports.

    The key set is the union of dataset names plus ``ood_mean``; all reports
    must cover the same datasets. Std uses ddof=1 and is 0 for a single
    report.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to summarize")
    keys = set(reports[0].per_dataset_top1)
    for r in reports[1:]:
        if set(r.per_dataset_top1) != keys:
            raise ValueError("reports cover different dataset sets")
    out = {}
    for key in sorted(keys) + ["ood_mean"]:
        vals = np.array([r.ood_mean if key == "ood_mean" else r.per_dataset_top1[key]
                         for r in reports])
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out[key] = (float(vals.mean()), std)
    return out


def format_report(report: EvalReport) -> str:
    lines = [f"{name}\t{acc:.6f}" for name, acc in sorted(report.per_dataset_top1.items())]
    lines.append(f"ood_mean\t{report.ood_mean:.6f}")
    return "\n".join(lines)


def format_summary(summary: dict) -> str:
    lines = ["metric\tmean\tstd"]
    lines += [f"{k}\t{m:.6f}\t{s:.6f}" for k, (m, s) in summary.items()]
    return "\n".join(lines)


@dataclass(frozen=True)
class ScatterPoint:
    """One method's position in the tradeoff plot: cost vs ID vs OOD."""

    method: str
    params_trained: int
    id_top1: float
    ood_mean: float


def format_scatter(points) -> str:
    """Tab-separated table: method, params_trained, id_top1, ood_mean."""
    lines = ["method\tparams_trained\tid_top1\tood_mean"]
    lines += [f"{p.method}\t{p.params_trained}\t{p.id_top1:.6f}\t{p.ood_mean:.6f}"
              for p in points]
    return "\n".join(lines)
