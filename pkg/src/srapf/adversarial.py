"""Projected-gradient perturbation of embedded features.

The attack runs in feature space, after the encoder and after normalization:
each step moves every coordinate by ``step_size`` in the sign of the
cross-entropy gradient, and the cumulative offset is clamped to the
[-epsilon, +epsilon] box around the clean features. Perturbed rows are NOT
re-normalized, so they sit slightly off the unit sphere by design.

Construction is gradient-isolated: it reads the classifier weights but never
writes to any parameter's ``grad``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import ce_loss_grads


@dataclass(frozen=True)
class PerturbationConfig:
    """Attack schedule: iteration count, box radius, per-step size.

    ``step_size=None`` resolves to the usual 2.5 * epsilon / iterations so the
    box can be crossed and re-crossed within the budget. ``random_start``
    draws the initial offset uniformly from the box instead of zero.
    """

    iterations: int = 10
    epsilon: float = 0.01
    step_size: float | None = None
    random_start: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")

    @property
    def resolved_step_size(self) -> float:
        if self.step_size is not None:
            return self.step_size
        if self.iterations == 0:
            return 0.0
        return 2.5 * self.epsilon / self.iterations


@dataclass
class PerturbationResult:
    perturbed: np.ndarray
    delta: np.ndarray
    iterations_run: int


def perturb(features: np.ndarray, labels: np.ndarray, weights: np.ndarray,
            config: PerturbationConfig, rng=None) -> PerturbationResult:
    """Run the sign-gradient attack against the current classifier.

    Returns the perturbed features, the offset actually applied (always inside
    the epsilon box), and the number of gradient steps taken. The clean
    features are never mutated. A zero radius or zero iterations returns the
    features unchanged.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if config.epsilon == 0.0 or config.iterations == 0:
        return PerturbationResult(features.copy(), np.zeros_like(features), 0)
    if config.random_start:
        if rng is None:
            raise ValueError("random_start requires an rng")
        delta = rng.uniform(-config.epsilon, config.epsilon, size=features.shape)
    else:
        delta = np.zeros_like(features)
    alpha = config.resolved_step_size
    for _ in range(config.iterations):
        _, dfeat, _ = ce_loss_grads(features + delta, labels, weights)
        delta = np.clip(delta + alpha * np.sign(dfeat), -config.epsilon, config.epsilon)
    return PerturbationResult(features + delta, delta, config.iterations)


class Perturber:
    """A perturbation config bound into a callable usable as a loss plug-in."""

    def __init__(self, config: PerturbationConfig, rng=None):
        self.config = config
        self.rng = rng

    def __call__(self, features, labels, weights) -> PerturbationResult:
        return perturb(features, labels, weights, self.config, self.rng)


def sweep_epsilon(task, epsilons, *, corpus=None, shots: int = 16, seed: int = 0,
                  overrides=None, pretrain_epochs: int = 30):
    """Train one adversarially-regularized run per radius and evaluate each.

    A zero radius is dispatched as plain partial finetuning: a zero-width box
    admits no perturbation, so the adversarial term would merely double the
    base loss. Every run reuses the same seed, so rows differ only through
    epsilon. Returns ``[(epsilon, EvalReport), ...]`` in the order given.
    """
    from . import pipeline  # deferred: pipeline imports this module

    rows = []
    for eps in epsilons:
        if eps < 0:
            raise ValueError(f"epsilon must be >= 0, got {eps}")
        if eps == 0.0:
            result = pipeline.run_recipe("PFT", task, corpus=corpus, shots=shots,
                                         seed=seed, overrides=overrides,
                                         pretrain_epochs=pretrain_epochs)
        else:
            ov = dict(overrides or {})
            ov["epsilon"] = eps
            result = pipeline.run_recipe("PFT+AP", task, corpus=corpus, shots=shots,
                                         seed=seed, overrides=ov,
                                         pretrain_epochs=pretrain_epochs)
        rows.append((float(eps), result.report))
    return rows


def format_sweep_table(rows) -> str:
    """Tab-separated sweep table: epsilon, id_top1, ood_mean_top1, per-dataset."""
    if not rows:
        raise ValueError("no sweep rows to format")
    ood_names = sorted(n for n in rows[0][1].per_dataset_top1 if n != "id_test")
    header = ["epsilon", "id_top1", "ood_mean_top1"] + ood_names
    lines = ["\t".join(header)]
    for eps, report in rows:
        cells = [f"{eps:.6g}", f"{report.per_dataset_top1['id_test']:.6f}",
                 f"{report.ood_mean:.6f}"]
        cells += [f"{report.per_dataset_top1[n]:.6f}" for n in ood_names]
        lines.append("\t".join(cells))
    return "\n".join(lines)
