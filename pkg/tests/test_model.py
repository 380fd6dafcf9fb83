import numpy as np
import pytest

from conftest import TINY
from srapf.model import (DualEncoderModel, ModelConfig, build_freeze_plan,
                         classify, count_trainable_params, hash_token,
                         init_classifier_from_text, texts_to_bags, tokenize,
                         wise_ft_interpolate)


def test_tokenize_lowercases_and_splits_punctuation():
    assert tokenize("A photo of a CAT!") == ["a", "photo", "of", "a", "cat"]
    assert tokenize("tabby-cat, 2nd") == ["tabby", "cat", "2nd"]
    assert tokenize("") == []


def test_hash_token_is_process_stable():
    # md5-based, so these values must never change across runs or machines
    assert hash_token("cat", 128) == hash_token("cat", 128)
    assert hash_token("cat", 128) == 68
    assert hash_token("dog", 128) == 48


def test_texts_to_bags_counts():
    bags = texts_to_bags(["cat cat dog", "dog"], 32)
    assert bags.shape == (2, 32)
    assert bags[0].sum() == 3
    assert bags[1].sum() == 1
    assert bags[0, hash_token("cat", 32)] == 2


def test_encoders_emit_unit_norm(tiny_model, rng):
    img = tiny_model.encode_image(rng.normal(size=(6, TINY.input_dim)))
    txt = tiny_model.encode_text(["a photo of a cat", "a dog"])
    assert img.shape == (6, TINY.embed_dim)
    assert txt.shape == (2, TINY.embed_dim)
    np.testing.assert_allclose(np.linalg.norm(img, axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(np.linalg.norm(txt, axis=1), 1.0, atol=1e-6)


def test_classify_is_plain_dot_product(tiny_model, rng):
    feats = tiny_model.encode_image(rng.normal(size=(5, TINY.input_dim)))
    w = tiny_model.classifier.value
    np.testing.assert_array_equal(classify(feats, w), feats @ w)
    with pytest.raises(ValueError, match="incompatible"):
        classify(feats[:, :-1], w)


def test_init_classifier_from_text(tiny_model):
    names = ["cat", "dog", "boat", "tree"]
    cols = init_classifier_from_text(tiny_model, names)
    assert cols.shape == (TINY.embed_dim, 4)
    np.testing.assert_allclose(np.linalg.norm(cols, axis=0), 1.0, atol=1e-12)
    np.testing.assert_array_equal(tiny_model.classifier.value, cols)
    # mean of template embeddings, renormalized
    from srapf.model import DEFAULT_PROMPT_TEMPLATES
    embs = tiny_model.encode_text([t.format("cat") for t in DEFAULT_PROMPT_TEMPLATES])
    mean = embs.mean(axis=0)
    np.testing.assert_allclose(cols[:, 0], mean / np.linalg.norm(mean), atol=1e-12)


def test_init_classifier_validates(tiny_model):
    with pytest.raises(ValueError, match="class names"):
        init_classifier_from_text(tiny_model, ["just", "three", "names"])
    with pytest.raises(ValueError, match="template"):
        init_classifier_from_text(tiny_model, ["a", "b", "c", "d"], templates=())


def test_param_groups_cover_everything(tiny_model):
    groups = tiny_model.param_groups()
    expect = {f"visual_block_{i}" for i in range(TINY.visual_blocks)}
    expect |= {f"text_block_{i}" for i in range(TINY.text_blocks)}
    expect |= {"classifier"}
    assert set(groups) == expect
    n_grouped = sum(len(ps) for ps in groups.values())
    assert n_grouped == len(tiny_model.named_parameters())


def test_freeze_plan_k0_trains_classifier_only(tiny_model):
    plan = build_freeze_plan(tiny_model, 0)
    assert plan.trainable == frozenset({"classifier"})
    assert plan.lr_for("classifier") == 1e-3


def test_freeze_plan_top_k(tiny_model):
    plan = build_freeze_plan(tiny_model, 2, top_k_text=1,
                             lr_backbone=1e-5, lr_classifier=1e-2)
    assert plan.trainable == frozenset(
        {"classifier", "visual_block_1", "visual_block_2", "text_block_1"})
    assert plan.lr_for("visual_block_2") == 1e-5
    assert not plan.is_trainable("visual_block_0")
    triples = plan.trainable_param_groups(tiny_model)
    assert {t[0] for t in triples} == set(plan.trainable)


def test_freeze_plan_validates_range(tiny_model):
    with pytest.raises(ValueError, match="top_k_visual"):
        build_freeze_plan(tiny_model, TINY.visual_blocks + 1)
    with pytest.raises(ValueError, match="top_k_text"):
        build_freeze_plan(tiny_model, 0, top_k_text=-1)


def test_count_trainable_params(tiny_model):
    lp = build_freeze_plan(tiny_model, 0)
    assert count_trainable_params(tiny_model, lp) == tiny_model.classifier.size
    full = build_freeze_plan(tiny_model, TINY.visual_blocks, TINY.text_blocks)
    everything = sum(p.size for _, p in tiny_model.named_parameters())
    assert count_trainable_params(tiny_model, full) == everything


def test_state_dict_round_trip(tiny_model):
    other = DualEncoderModel(TINY, seed=99)
    other.load_state_dict(tiny_model.state_dict())
    for (n1, p1), (_, p2) in zip(tiny_model.named_parameters(),
                                 other.named_parameters()):
        np.testing.assert_array_equal(p1.value, p2.value, err_msg=n1)
    bad = tiny_model.state_dict()
    bad.pop("classifier.W")
    with pytest.raises(ValueError, match="missing"):
        other.load_state_dict(bad)


def test_copy_is_independent(tiny_model):
    clone = tiny_model.copy()
    clone.classifier.value[0, 0] += 1.0
    assert tiny_model.classifier.value[0, 0] != clone.classifier.value[0, 0]


def test_wise_ft_endpoints_and_identity(tiny_model):
    pre = tiny_model
    ft = DualEncoderModel(TINY, seed=123)
    at0 = wise_ft_interpolate(ft, pre, 0.0)
    at1 = wise_ft_interpolate(ft, pre, 1.0)
    for name, p in at0.named_parameters():
        np.testing.assert_array_equal(p.value, dict(pre.named_parameters())[name].value)
    for name, p in at1.named_parameters():
        np.testing.assert_array_equal(p.value, dict(ft.named_parameters())[name].value)
    same = wise_ft_interpolate(pre, pre, 0.37)
    for name, p in same.named_parameters():
        np.testing.assert_array_equal(p.value, dict(pre.named_parameters())[name].value)


def test_wise_ft_midpoint(tiny_model):
    ft = DualEncoderModel(TINY, seed=123)
    mid = wise_ft_interpolate(ft, tiny_model, 0.5)
    pre_w = tiny_model.classifier.value
    ft_w = ft.classifier.value
    np.testing.assert_allclose(mid.classifier.value, pre_w + 0.5 * (ft_w - pre_w),
                               rtol=0, atol=0)


def test_wise_ft_validates(tiny_model):
    other = DualEncoderModel(ModelConfig(input_dim=8, num_classes=5), seed=0)
    with pytest.raises(ValueError, match="alpha"):
        wise_ft_interpolate(tiny_model, tiny_model, 1.5)
    with pytest.raises(ValueError, match="architectures"):
        wise_ft_interpolate(other, tiny_model, 0.5)
