"""Dual-encoder model: a visual encoder over raw feature vectors, a text
encoder over hashed bag-of-words vectors, and a linear classifier head.

Both encoders emit unit-norm embeddings in a shared space. The classifier is
a plain weight matrix applied to visual embeddings by dot product; there is
no logit scale. Parameters are organized into named groups (one per encoder
block, plus ``classifier``) so that partial-finetuning plans can freeze
everything below the top k blocks.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

from .nn import Encoder, Parameter

DEFAULT_PROMPT_TEMPLATES = (
    "a photo of a {}.",
    "a blurry photo of a {}.",
    "a close-up photo of a {}.",
    "a low-resolution photo of a {}.",
    "a drawing of a {}.",
    "a sketch of a {}.",
    "an image of a {}.",
)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; punctuation splits, nothing else survives."""
    return _TOKEN_RE.findall(text.lower())


def hash_token(token: str, vocab_size: int) -> int:
    # md5 rather than hash() so token ids are stable across processes.
    digest = hashlib.md5(token.encode("utf-8")).hexdigest()
    return int(digest[:8], 16) % vocab_size


def texts_to_bags(texts, vocab_size: int) -> np.ndarray:
    """Hashed bag-of-words count vectors, shape (len(texts), vocab_size)."""
    out = np.zeros((len(texts), vocab_size), dtype=np.float64)
    for i, text in enumerate(texts):
        for tok in tokenize(text):
            out[i, hash_token(tok, vocab_size)] += 1.0
    return out


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    num_classes: int
    embed_dim: int = 64
    width: int = 64
    visual_blocks: int = 6
    text_blocks: int = 6
    vocab_size: int = 128
    hidden_mult: int = 2

    def __post_init__(self):
        for name in ("input_dim", "num_classes", "embed_dim", "width",
                     "visual_blocks", "text_blocks", "vocab_size", "hidden_mult"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")


class DualEncoderModel:
    """Visual + text encoders sharing an embedding space, plus a classifier."""

    def __init__(self, config: ModelConfig, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.visual = Encoder(config.input_dim, config.width, config.visual_blocks,
                              config.embed_dim, rng, config.hidden_mult)
        self.text = Encoder(config.vocab_size, config.width, config.text_blocks,
                            config.embed_dim, rng, config.hidden_mult)
        self.classifier = Parameter(
            rng.normal(0.0, 1.0 / np.sqrt(config.embed_dim),
                       size=(config.embed_dim, config.num_classes)))

    # -- encoding ----------------------------------------------------------

    def encode_image(self, batch: np.ndarray, want_cache: bool = False):
        """Unit-norm visual embeddings for a (n, input_dim) batch."""
        feats, cache = self.visual.forward(batch, want_cache)
        return (feats, cache) if want_cache else feats

    def encode_text(self, prompts, want_cache: bool = False):
        """Unit-norm text embeddings for a list of prompt strings."""
        bags = texts_to_bags(list(prompts), self.config.vocab_size)
        feats, cache = self.text.forward(bags, want_cache)
        return (feats, cache) if want_cache else feats

    # -- parameter bookkeeping ----------------------------------------------

    def param_groups(self) -> dict[str, list[Parameter]]:
        groups = {}
        for i, params in self.visual.block_param_groups().items():
            groups[f"visual_block_{i}"] = params
        for i, params in self.text.block_param_groups().items():
            groups[f"text_block_{i}"] = params
        groups["classifier"] = [self.classifier]
        return groups

    def named_parameters(self):
        named = [(f"visual.{n}", p) for n, p in self.visual.parameters()]
        named += [(f"text.{n}", p) for n, p in self.text.parameters()]
        named.append(("classifier.W", self.classifier))
        return named

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.value.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        mine = dict(self.named_parameters())
        if set(state) != set(mine):
            missing = set(mine) - set(state)
            extra = set(state) - set(mine)
            raise ValueError(f"state dict mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in mine.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.value.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.value.shape}")
            p.value = arr.copy()
            p.grad = np.zeros_like(p.value)

    def copy(self) -> "DualEncoderModel":
        clone = DualEncoderModel(self.config, seed=0)
        clone.load_state_dict(self.state_dict())
        return clone

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.zero_grad()

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim


# -- operations on models ----------------------------------------------------


def classify(features: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Raw logits: dot products of embedding rows with classifier columns."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != weights.shape[0]:
        raise ValueError(
            f"features {features.shape} incompatible with weights {weights.shape}")
    return features @ weights


def init_classifier_from_text(model: DualEncoderModel, class_names,
                              templates=DEFAULT_PROMPT_TEMPLATES) -> np.ndarray:
    """Set classifier columns to normalized template-averaged text embeddings.

    For each class, every template is instantiated with the class name,
    encoded, and the embeddings are averaged then re-normalized to unit norm.
    Returns the new (embed_dim, num_classes) matrix.
    """
    class_names = list(class_names)
    if len(class_names) != model.num_classes:
        raise ValueError(
            f"got {len(class_names)} class names for a {model.num_classes}-way classifier")
    if not templates:
        raise ValueError("need at least one prompt template")
    cols = np.zeros((model.embed_dim, len(class_names)))
    for j, name in enumerate(class_names):
        embs = model.encode_text([t.format(name) for t in templates])
        mean = embs.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            raise ValueError(f"degenerate text embedding for class {name!r}")
        cols[:, j] = mean / norm
    model.classifier.value = cols
    model.classifier.grad = np.zeros_like(cols)
    return cols


@dataclass(frozen=True)
class FreezePlan:
    """Which parameter groups train, and at what learning rate.

    Groups absent from ``trainable`` are frozen: they are never handed to an
    optimizer, so their values stay bit-identical through training.
    """

    trainable: frozenset
    group_lrs: dict = field(compare=False)

    def __post_init__(self):
        missing = self.trainable - set(self.group_lrs)
        if missing:
            raise ValueError(f"no learning rate for trainable groups {sorted(missing)}")

    def is_trainable(self, group: str) -> bool:
        return group in self.trainable

    def lr_for(self, group: str) -> float:
        return self.group_lrs[group]

    def trainable_param_groups(self, model: DualEncoderModel):
        """(group_name, lr, params) triples in a stable order."""
        out = []
        for name, params in model.param_groups().items():
            if name in self.trainable:
                out.append((name, self.group_lrs[name], params))
        return out


def build_freeze_plan(model: DualEncoderModel, top_k_visual: int,
                      top_k_text: int = 0, lr_backbone: float = 1e-6,
                      lr_classifier: float = 1e-3) -> FreezePlan:
    """Freeze plan training the classifier plus the top-k blocks of each encoder.

    ``top_k_visual=0`` with ``top_k_text=0`` is linear probing; k equal to the
    block count is full finetuning of that encoder. The stem is grouped with
    the bottom block and the head with the top block, so they thaw exactly
    when those blocks do.
    """
    bv, bt = model.config.visual_blocks, model.config.text_blocks
    if not 0 <= top_k_visual <= bv:
        raise ValueError(f"top_k_visual must be in [0, {bv}], got {top_k_visual}")
    if not 0 <= top_k_text <= bt:
        raise ValueError(f"top_k_text must be in [0, {bt}], got {top_k_text}")
    trainable = {"classifier"}
    lrs = {"classifier": lr_classifier}
    for i in range(bv - top_k_visual, bv):
        trainable.add(f"visual_block_{i}")
        lrs[f"visual_block_{i}"] = lr_backbone
    for i in range(bt - top_k_text, bt):
        trainable.add(f"text_block_{i}")
        lrs[f"text_block_{i}"] = lr_backbone
    return FreezePlan(trainable=frozenset(trainable), group_lrs=lrs)


def count_trainable_params(model: DualEncoderModel, plan: FreezePlan) -> int:
    return sum(p.size for _, _, params in plan.trainable_param_groups(model)
               for p in params)


def wise_ft_interpolate(finetuned: DualEncoderModel, pretrained: DualEncoderModel,
                        alpha: float) -> DualEncoderModel:
    """Per-parameter linear interpolation ``pre + alpha * (ft - pre)``.

    alpha=0 returns the pretrained weights exactly, alpha=1 the finetuned
    ones; interpolating a model with itself is the identity.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if finetuned.config != pretrained.config:
        raise ValueError("cannot interpolate models with different architectures")
    ft, pre = finetuned.state_dict(), pretrained.state_dict()
    if alpha == 1.0:
        merged = ft
    else:
        merged = {n: pre[n] + alpha * (ft[n] - pre[n]) for n in pre}
    out = DualEncoderModel(finetuned.config, seed=0)
    out.load_state_dict(merged)
    return out
