"""Loss functions for classifier finetuning and contrastive tuning.

All losses are batch means over their own batch: the base cross-entropy
averages over the labeled batch, the retrieved term over the retrieved batch,
and the adversarial term over whatever batch was perturbed. The combined
objective is ``L = L_ce + lambda_ap * L_ap + lambda_ra * L_ra``; weighting
happens once, here, never inside the individual terms.

Gradients are returned by the ``*_grads`` variants rather than accumulated on
parameters, because callers differ in where the gradient should flow (into
the encoder, into the classifier, or nowhere at all during perturbation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossWeights:
    """Term weights for the combined objective, plus the contrastive temperature."""

    lambda_ap: float = 1.0
    lambda_ra: float = 1.0
    tau: float = 0.01

    def __post_init__(self):
        if self.lambda_ap < 0 or self.lambda_ra < 0:
            raise ValueError("loss weights must be non-negative")
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")


@dataclass
class Batch:
    """Embedded features with integer labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {self.features.shape}")
        if self.labels.ndim != 1 or len(self.labels) != len(self.features):
            raise ValueError("labels must be 1-d and aligned with features")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ValueError(f"labels must be integers, got {self.labels.dtype}")
        if len(self.labels) and self.labels.min() < 0:
            raise ValueError("labels must be non-negative")

    def __len__(self) -> int:
        return len(self.labels)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_labels(labels, num_classes):
    if len(labels) == 0:
        raise ValueError("empty batch has no mean loss")
    if labels.max() >= num_classes:
        raise ValueError(
            f"label {labels.max()} out of range for {num_classes} classes")


def ce_loss(features: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    """Mean cross-entropy of ``features @ weights`` logits against labels."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    _check_labels(labels, weights.shape[1])
    logp = log_softmax(features @ weights)
    return float(-logp[np.arange(len(labels)), labels].mean())


def ce_loss_grads(features: np.ndarray, labels: np.ndarray, weights: np.ndarray):
    """Loss plus gradients w.r.t. features and classifier weights."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    _check_labels(labels, weights.shape[1])
    n = len(labels)
    logp = log_softmax(features @ weights)
    loss = float(-logp[np.arange(n), labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits @ weights.T, features.T @ dlogits


def contrastive_loss(img_feats: np.ndarray, txt_feats: np.ndarray, tau: float) -> float:
    """Bidirectional InfoNCE over an aligned batch of embedding pairs.

    Both directional terms (image-to-text and text-to-image) are summed and
    divided by the batch size once. A single pair scores exactly zero.
    """
    loss, _, _ = contrastive_loss_grads(img_feats, txt_feats, tau, want_grads=False)
    return loss


def contrastive_loss_grads(img_feats: np.ndarray, txt_feats: np.ndarray,
                           tau: float, want_grads: bool = True):
    img_feats = np.asarray(img_feats, dtype=np.float64)
    txt_feats = np.asarray(txt_feats, dtype=np.float64)
    if img_feats.shape != txt_feats.shape:
        raise ValueError(
            f"paired batches must match: {img_feats.shape} vs {txt_feats.shape}")
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    n = len(img_feats)
    if n == 0:
        raise ValueError("empty batch has no mean loss")
    sim = (img_feats @ txt_feats.T) / tau
    logp_row = log_softmax(sim)
    logp_col = log_softmax(sim.T)
    diag = np.arange(n)
    loss = float(-(logp_row[diag, diag] + logp_col[diag, diag]).mean())
    if not want_grads:
        return loss, None, None
    dsim = np.exp(logp_row) + np.exp(logp_col).T
    dsim[diag, diag] -= 2.0
    dsim /= n * tau
    return loss, dsim @ txt_feats, dsim.T @ img_feats


def ap_loss(features: np.ndarray, labels: np.ndarray, weights: np.ndarray,
            perturber) -> float:
    """Mean cross-entropy on adversarially perturbed copies of the features.

    ``perturber`` is any callable ``(features, labels, weights) ->`` perturbed
    array (or an object with a ``perturbed`` attribute). The clean features
    are left untouched.
    """
    result = perturber(features, labels, weights)
    perturbed = getattr(result, "perturbed", result)
    return ce_loss(perturbed, labels, weights)


def ra_loss(features: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    """Mean cross-entropy over a retrieved batch (its own mean, never pooled)."""
    return ce_loss(features, labels, weights)


def combined_loss(id_batch: Batch, retrieved_batch, weights: np.ndarray,
                  loss_weights: LossWeights, perturber=None) -> float:
    """Weighted sum of the base, adversarial, and retrieved terms.

    The adversarial term perturbs the union of the labeled and retrieved
    batches when both are present. Terms with zero weight are skipped
    entirely, so ``lambda_ap=0`` never invokes the perturber.
    """
    if loss_weights.lambda_ra > 0 and retrieved_batch is None:
        raise ValueError("lambda_ra > 0 requires a retrieved batch")
    if loss_weights.lambda_ap > 0 and perturber is None:
        raise ValueError("lambda_ap > 0 requires a perturber")
    total = ce_loss(id_batch.features, id_batch.labels, weights)
    if loss_weights.lambda_ap > 0:
        if retrieved_batch is not None:
            feats = np.concatenate([id_batch.features, retrieved_batch.features])
            labels = np.concatenate([id_batch.labels, retrieved_batch.labels])
        else:
            feats, labels = id_batch.features, id_batch.labels
        total += loss_weights.lambda_ap * ap_loss(feats, labels, weights, perturber)
    if loss_weights.lambda_ra > 0:
        total += loss_weights.lambda_ra * ra_loss(
            retrieved_batch.features, retrieved_batch.labels, weights)
    return total
