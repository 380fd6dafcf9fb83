"""Loss oracles.

The reference implementations below compose softmax and log by hand, exactly
as the formulas read, with no shared code with the package. Gradients are
checked against central finite differences.
"""

import numpy as np
import pytest

from conftest import central_diff
from srapf.losses import (Batch, LossWeights, ap_loss, ce_loss, ce_loss_grads,
                          combined_loss, contrastive_loss,
                          contrastive_loss_grads, ra_loss)


def naive_ce(feats, labels, w):
    logits = feats @ w
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    return float(np.mean([-np.log(probs[i, labels[i]]) for i in range(len(labels))]))


def naive_infonce(img, txt, tau):
    s = img @ txt.T / tau
    n = len(img)
    total = 0.0
    for i in range(n):
        row = np.exp(s[i]) / np.exp(s[i]).sum()
        col = np.exp(s[:, i]) / np.exp(s[:, i]).sum()
        total += -np.log(row[i]) - np.log(col[i])
    return total / n


def test_ce_matches_naive_reference(rng):
    for _ in range(100):
        n, d, k = rng.integers(1, 9), rng.integers(2, 7), rng.integers(2, 6)
        feats = rng.normal(size=(n, d))
        labels = rng.integers(0, k, size=n)
        w = rng.normal(size=(d, k))
        assert abs(ce_loss(feats, labels, w) - naive_ce(feats, labels, w)) < 1e-9


def test_infonce_matches_naive_reference(rng):
    for _ in range(100):
        n, d = rng.integers(1, 9), rng.integers(2, 7)
        img = rng.normal(size=(n, d))
        img /= np.linalg.norm(img, axis=1, keepdims=True)
        txt = rng.normal(size=(n, d))
        txt /= np.linalg.norm(txt, axis=1, keepdims=True)
        tau = rng.uniform(0.05, 1.0)
        got = contrastive_loss(img, txt, tau)
        assert abs(got - naive_infonce(img, txt, tau)) < 1e-9


def test_ce_single_class_is_exactly_zero(rng):
    feats = rng.normal(size=(5, 3))
    w = rng.normal(size=(3, 1))
    assert ce_loss(feats, np.zeros(5, dtype=int), w) == 0.0


def test_ce_uniform_logits_is_ln_k(rng):
    k = 7
    feats = rng.normal(size=(4, 3))
    w = np.zeros((3, k))  # all logits identical within a row
    assert abs(ce_loss(feats, rng.integers(0, k, size=4), w) - np.log(k)) < 1e-12


def test_infonce_single_pair_is_exactly_zero(rng):
    v = rng.normal(size=(1, 4))
    v /= np.linalg.norm(v)
    u = rng.normal(size=(1, 4))
    u /= np.linalg.norm(u)
    assert contrastive_loss(v, u, 0.01) == 0.0


def test_infonce_is_symmetric(rng):
    img = rng.normal(size=(6, 5))
    txt = rng.normal(size=(6, 5))
    assert abs(contrastive_loss(img, txt, 0.3)
               - contrastive_loss(txt, img, 0.3)) < 1e-12


def test_ce_grads_match_fd(rng):
    feats = rng.normal(size=(4, 5))
    labels = rng.integers(0, 3, size=4)
    w = rng.normal(size=(5, 3))
    _, dfeat, dw = ce_loss_grads(feats, labels, w)
    np.testing.assert_allclose(
        dfeat, central_diff(lambda f: ce_loss(f, labels, w), feats), atol=1e-4)
    np.testing.assert_allclose(
        dw, central_diff(lambda m: ce_loss(feats, labels, m), w), atol=1e-4)


def test_infonce_grads_match_fd(rng):
    img = rng.normal(size=(5, 4))
    txt = rng.normal(size=(5, 4))
    tau = 0.2
    _, dimg, dtxt = contrastive_loss_grads(img, txt, tau)
    np.testing.assert_allclose(
        dimg, central_diff(lambda a: contrastive_loss(a, txt, tau), img), atol=1e-4)
    np.testing.assert_allclose(
        dtxt, central_diff(lambda b: contrastive_loss(img, b, tau), txt), atol=1e-4)


def test_infonce_validates(rng):
    with pytest.raises(ValueError, match="match"):
        contrastive_loss(rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), 0.1)
    with pytest.raises(ValueError, match="temperature"):
        contrastive_loss(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), 0.0)
    with pytest.raises(ValueError, match="empty"):
        contrastive_loss(np.empty((0, 4)), np.empty((0, 4)), 0.1)


def test_ap_loss_delegates_to_perturber(rng):
    feats = rng.normal(size=(4, 3))
    labels = rng.integers(0, 2, size=4)
    w = rng.normal(size=(3, 2))
    assert ap_loss(feats, labels, w, lambda f, y, m: f) == ce_loss(feats, labels, w)
    shift = 0.1 * np.ones_like(feats)
    got = ap_loss(feats, labels, w, lambda f, y, m: f + shift)
    assert got == ce_loss(feats + shift, labels, w)


def test_ra_loss_is_mean_ce_of_its_own_batch(rng):
    feats = rng.normal(size=(6, 3))
    labels = rng.integers(0, 2, size=6)
    w = rng.normal(size=(3, 2))
    assert ra_loss(feats, labels, w) == ce_loss(feats, labels, w)


def test_combined_loss_sums_weighted_terms(rng):
    w = rng.normal(size=(3, 2))
    idb = Batch(rng.normal(size=(4, 3)), rng.integers(0, 2, size=4))
    rb = Batch(rng.normal(size=(6, 3)), rng.integers(0, 2, size=6))
    lw = LossWeights(lambda_ap=0.5, lambda_ra=2.0)
    identity = lambda f, y, m: f
    got = combined_loss(idb, rb, w, lw, perturber=identity)
    union_feats = np.concatenate([idb.features, rb.features])
    union_labels = np.concatenate([idb.labels, rb.labels])
    want = (ce_loss(idb.features, idb.labels, w)
            + 0.5 * ce_loss(union_feats, union_labels, w)
            + 2.0 * ce_loss(rb.features, rb.labels, w))
    assert abs(got - want) < 1e-12


def test_combined_loss_zero_weights_skip_terms(rng):
    w = rng.normal(size=(3, 2))
    idb = Batch(rng.normal(size=(4, 3)), rng.integers(0, 2, size=4))

    def exploding_perturber(f, y, m):
        raise AssertionError("perturber must not run at lambda_ap=0")

    lw = LossWeights(lambda_ap=0.0, lambda_ra=0.0)
    got = combined_loss(idb, None, w, lw, perturber=exploding_perturber)
    assert got == ce_loss(idb.features, idb.labels, w)


def test_combined_loss_requires_inputs_for_active_terms(rng):
    w = rng.normal(size=(3, 2))
    idb = Batch(rng.normal(size=(4, 3)), rng.integers(0, 2, size=4))
    with pytest.raises(ValueError, match="retrieved"):
        combined_loss(idb, None, w, LossWeights(lambda_ap=0.0, lambda_ra=1.0))
    with pytest.raises(ValueError, match="perturber"):
        combined_loss(idb, idb, w, LossWeights(lambda_ap=1.0, lambda_ra=0.0))


def test_loss_weights_validate():
    with pytest.raises(ValueError, match="non-negative"):
        LossWeights(lambda_ap=-0.1)
    with pytest.raises(ValueError, match="temperature"):
        LossWeights(tau=0.0)


def test_batch_validates(rng):
    with pytest.raises(ValueError, match="aligned"):
        Batch(rng.normal(size=(3, 2)), np.array([0, 1]))
    with pytest.raises(ValueError, match="integers"):
        Batch(rng.normal(size=(2, 2)), np.array([0.0, 1.0]))
    with pytest.raises(ValueError, match="non-negative"):
        Batch(rng.normal(size=(2, 2)), np.array([0, -1]))


def test_ce_label_out_of_range(rng):
    with pytest.raises(ValueError, match="out of range"):
        ce_loss(rng.normal(size=(2, 3)), np.array([0, 5]), rng.normal(size=(3, 2)))
    with pytest.raises(ValueError, match="empty"):
        ce_loss(np.empty((0, 3)), np.empty(0, dtype=int), rng.normal(size=(3, 2)))
