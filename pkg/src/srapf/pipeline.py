"""Training pipeline: single stages, the two-stage recipe, and recipe presets.

A stage is one finetuning run under one StageConfig: freeze plan, loss mode,
optional retrieval augmentation (union batches of labeled and retrieved rows,
each loss term averaging over its own rows) and optional adversarial feature
perturbation (each batch contributes a clean and a perturbed copy, 1:1). The
two-stage recipe chains a retrieval-augmented stage and an adversarial stage,
selecting the checkpoint by ID validation accuracy after every epoch,
earliest epoch winning ties.

The recipe presets mirror a common lineup of adaptation baselines: linear
probing, full finetuning, partial finetuning of the top blocks, partial
contrastive tuning, and the retrieval/adversarial combinations.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .adversarial import Perturber, PerturbationConfig
from .checkpoint import Checkpoint, config_hash, save_checkpoint
from .data import Benchmark, LabeledDataset, sample_few_shot
from .evaluation import EvalReport, evaluate, format_report, top1_accuracy
from .losses import LossWeights, ce_loss_grads, contrastive_loss_grads
from .model import (DEFAULT_PROMPT_TEMPLATES, DualEncoderModel, FreezePlan,
                    ModelConfig, build_freeze_plan, init_classifier_from_text)
from .optim import AdamW, CosineWarmupSchedule
from .retrieval import retrieve_all

RECIPES = ("LP", "FFT", "PFT", "PCT", "PFT+RA", "PFT+AP", "PFT+RA+AP", "SRAPF")


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; message says which stage, epoch, and step."""


@dataclass
class StageConfig:
    """Everything one training stage needs besides the data."""

    top_k_visual: int = 4
    top_k_text: int = 0
    loss_mode: str = "ce"  # "ce" or "contrastive"
    use_ra: bool = False
    use_ap: bool = False
    epochs: int = 10
    batch_size: int = 64
    lr_backbone: float = 1e-3
    lr_classifier: float = 1e-2
    weight_decay: float = 0.01
    warmup_iters: int = 18
    warmup_lr: float = 1e-8
    loss_weights: LossWeights = field(default_factory=LossWeights)
    perturbation: PerturbationConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if self.loss_mode not in ("ce", "contrastive"):
            raise ValueError(f"unknown loss_mode {self.loss_mode!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.loss_mode == "contrastive" and (self.use_ra or self.use_ap):
            raise ValueError("retrieval/adversarial terms apply to the ce mode only")
        if self.use_ap and self.perturbation is None:
            self.perturbation = PerturbationConfig()


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    id_val_top1: float


def select_best(val_accs) -> int:
    """Index of the maximum, earliest index on ties."""
    val_accs = list(val_accs)
    if not val_accs:
        raise ValueError("no epochs to select from")
    best = 0
    for i, acc in enumerate(val_accs):
        if acc > val_accs[best]:
            best = i
    return best


def make_optimizer(model: DualEncoderModel, plan: FreezePlan,
                   config: StageConfig, total_steps: int):
    """Fresh AdamW over the plan's trainable groups plus its lr schedule."""
    groups = [(name, lr, config.weight_decay, params)
              for name, lr, params in plan.trainable_param_groups(model)]
    opt = AdamW(groups)
    sched = CosineWarmupSchedule(total_steps, config.warmup_iters, config.warmup_lr)
    return opt, sched


def _ce_terms(feats, labels, retrieved_mask, weights, lw: LossWeights, use_ra: bool):
    # Each term averages over its own rows (never one pooled mean), so the
    # retrieved weight multiplies an honest per-batch retrieved mean.
    if not use_ra:
        return ce_loss_grads(feats, labels, weights)
    loss = 0.0
    dfeat = np.zeros_like(feats)
    dw = np.zeros_like(weights)
    id_rows = np.flatnonzero(~retrieved_mask)
    r_rows = np.flatnonzero(retrieved_mask)
    if len(id_rows):
        l, df, dwi = ce_loss_grads(feats[id_rows], labels[id_rows], weights)
        loss += l
        dfeat[id_rows] = df
        dw += dwi
    if len(r_rows) and lw.lambda_ra > 0:
        l, df, dwr = ce_loss_grads(feats[r_rows], labels[r_rows], weights)
        loss += lw.lambda_ra * l
        dfeat[r_rows] = lw.lambda_ra * df
        dw += lw.lambda_ra * dwr
    return loss, dfeat, dw


def train_stage(model: DualEncoderModel, id_train: LabeledDataset,
                id_val: LabeledDataset, config: StageConfig, *,
                retrieved=None, stage_tag: str = "stage1"):
    """Train the model in place for one stage; return (Checkpoint, history).

    ``retrieved`` is a (raw_inputs, labels) pair and is required exactly when
    ``config.use_ra`` is set; retrieved rows are shuffled into the same
    batches as labeled rows. The checkpoint snapshots the epoch with the best
    ID validation accuracy (earliest on ties); the live model is left at its
    final-epoch state.
    """
    if len(id_train) == 0:
        raise ValueError("id_train is empty")
    if config.use_ra != (retrieved is not None):
        raise ValueError("retrieved data must be passed iff config.use_ra is set")

    if config.use_ra:
        r_feats, r_labels = retrieved
        if len(r_feats) == 0:
            raise ValueError("retrieved set is empty")
        pool_x = np.concatenate([id_train.inputs, np.asarray(r_feats, dtype=np.float64)])
        pool_y = np.concatenate([id_train.labels, np.asarray(r_labels, dtype=np.int64)])
        pool_mask = np.zeros(len(pool_x), dtype=bool)
        pool_mask[len(id_train):] = True
    else:
        pool_x, pool_y = id_train.inputs, id_train.labels
        pool_mask = np.zeros(len(pool_x), dtype=bool)

    plan = build_freeze_plan(model, config.top_k_visual, config.top_k_text,
                             config.lr_backbone, config.lr_classifier)
    if config.loss_mode == "contrastive":
        # the classifier is rebuilt from text embeddings at eval time, so it
        # has no business in the optimizer here
        plan = FreezePlan(
            trainable=plan.trainable - {"classifier"},
            group_lrs={k: v for k, v in plan.group_lrs.items() if k != "classifier"})

    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    steps_per_epoch = math.ceil(len(pool_x) / config.batch_size)
    opt, sched = make_optimizer(model, plan, config, config.epochs * steps_per_epoch)
    perturber = Perturber(config.perturbation, rng) if config.use_ap else None
    train_visual = any(g.startswith("visual") for g in plan.trainable)
    train_text = any(g.startswith("text") for g in plan.trainable)
    lw = config.loss_weights
    class_names = id_train.class_names

    history = []
    best = None  # (epoch, acc, state)
    global_step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(pool_x))
        losses = []
        for start in range(0, len(pool_x), config.batch_size):
            idx = order[start:start + config.batch_size]
            x, y, mask = pool_x[idx], pool_y[idx], pool_mask[idx]
            feats, cache = model.encode_image(x, want_cache=True) if train_visual \
                else (model.encode_image(x), None)

            if config.loss_mode == "ce":
                w = model.classifier.value
                loss, dfeat, dw = _ce_terms(feats, y, mask, w, lw, config.use_ra)
                if perturber is not None and lw.lambda_ap > 0:
                    # clean and perturbed copies of the same rows, 1:1
                    res = perturber(feats, y, w)
                    l_ap, df_ap, dw_ap = ce_loss_grads(res.perturbed, y, w)
                    loss += lw.lambda_ap * l_ap
                    dfeat += lw.lambda_ap * df_ap
                    dw += lw.lambda_ap * dw_ap
                model.classifier.grad += dw
                if train_visual:
                    model.visual.backward(dfeat, cache)
            else:
                prompts = [DEFAULT_PROMPT_TEMPLATES[rng.integers(len(DEFAULT_PROMPT_TEMPLATES))]
                           .format(class_names[label]) for label in y]
                if train_text:
                    tfeats, tcache = model.encode_text(prompts, want_cache=True)
                else:
                    tfeats = model.encode_text(prompts)
                loss, dimg, dtxt = contrastive_loss_grads(feats, tfeats, lw.tau)
                if train_visual:
                    model.visual.backward(dimg, cache)
                if train_text:
                    model.text.backward(dtxt, tcache)

            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"{stage_tag}: non-finite loss at epoch {epoch} step {global_step}")
            opt.step({name: sched.lr_at(plan.lr_for(name), global_step)
                      for name in plan.trainable})
            model.zero_grad()
            losses.append(loss)
            global_step += 1

        if config.loss_mode == "contrastive":
            init_classifier_from_text(model, class_names)
        val_acc = top1_accuracy(model, id_val)
        history.append(EpochStats(epoch, float(np.mean(losses)), val_acc))
        if best is None or val_acc > best[1]:
            best = (epoch, val_acc, model.state_dict())

    best_epoch, best_acc, best_state = best
    snapshot = DualEncoderModel(model.config, seed=0)
    snapshot.load_state_dict(best_state)
    ckpt = Checkpoint(model=snapshot, stage=stage_tag, epoch=best_epoch,
                      id_val_top1=best_acc, config_hash=config_hash(config),
                      trainable_groups=tuple(sorted(plan.trainable)))
    return ckpt, history


# -- contrastive pretraining ---------------------------------------------------


def pretrain(model: DualEncoderModel, corpus, *, epochs: int = 30,
             batch_size: int = 64, lr: float = 1e-3, tau: float = 0.05,
             weight_decay: float = 0.0, warmup_iters: int = 18, seed: int = 0):
    """Contrastively align the two encoders on (payload, caption) pairs.

    This plays the role of large-scale pretraining at desk scale: after it,
    captions and the vectors they describe land near each other in embedding
    space, which is what classifier-from-text initialization, retrieval
    ranking, and zero-shot evaluation all rely on. Trains every encoder
    parameter; the classifier is untouched. Returns per-epoch mean losses.
    """
    pairs = [(rec.caption, corpus.payload_vector(rec.payload_ref))
             for rec in corpus.records]
    if len(pairs) < 2:
        raise ValueError("pretraining needs at least two corpus records")
    captions = [c for c, _ in pairs]
    vectors = np.stack([v for _, v in pairs])

    groups = [(name, lr, weight_decay, params)
              for name, params in model.param_groups().items()
              if name != "classifier"]
    steps_per_epoch = math.ceil(len(pairs) / batch_size)
    opt = AdamW(groups)
    sched = CosineWarmupSchedule(epochs * steps_per_epoch, warmup_iters)
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    history = []
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(len(pairs))
        losses = []
        for start in range(0, len(pairs), batch_size):
            idx = order[start:start + batch_size]
            vfeats, vcache = model.visual.forward(vectors[idx], want_cache=True)
            tfeats, tcache = model.text.forward(
                _caption_bags(model, [captions[i] for i in idx]), want_cache=True)
            loss, dimg, dtxt = contrastive_loss_grads(vfeats, tfeats, tau)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"pretrain: non-finite loss at epoch {epoch} step {step}")
            model.visual.backward(dimg, vcache)
            model.text.backward(dtxt, tcache)
            opt.step({name: sched.lr_at(lr, step) for name, _, _, _ in groups})
            model.zero_grad()
            losses.append(loss)
            step += 1
        history.append(float(np.mean(losses)))
    return history


def _caption_bags(model, captions):
    from .model import texts_to_bags
    return texts_to_bags(captions, model.config.vocab_size)


# -- the two-stage recipe --------------------------------------------------------


@dataclass
class SrapfResult:
    checkpoint: Checkpoint
    stage1_checkpoint: Checkpoint
    histories: tuple
    report: EvalReport | None = None
    stage1_report: EvalReport | None = None
    retrieved_counts: dict = field(default_factory=dict)


def run_srapf(model: DualEncoderModel, id_train: LabeledDataset,
              id_val: LabeledDataset, corpus, config_s1: StageConfig,
              config_s2: StageConfig, *, eval_sets=None, cap: int = 500,
              synonyms=None) -> SrapfResult:
    """Stage 1: retrieval-augmented partial finetuning on labeled + retrieved
    data. Stage 2: adversarially-regularized partial finetuning on the labeled
    data alone, starting from the stage-1 selected checkpoint with a fresh
    optimizer. Returns the stage-2 selected checkpoint.

    The model passed in is used for retrieval ranking and trained in place
    through stage 1.
    """
    if not config_s1.use_ra:
        raise ValueError("stage 1 must have use_ra set")
    if not config_s2.use_ap or config_s2.use_ra:
        raise ValueError("stage 2 must have use_ap set and use_ra clear")
    retrieved_ds = retrieve_all(corpus, id_train.class_names, model, cap=cap,
                                synonyms=synonyms)
    ckpt1, hist1 = train_stage(model, id_train, id_val, config_s1,
                               retrieved=retrieved_ds.to_arrays(corpus),
                               stage_tag="stage1")
    stage2_model = ckpt1.model.copy()
    ckpt2, hist2 = train_stage(stage2_model, id_train, id_val, config_s2,
                               stage_tag="stage2")
    report = evaluate(ckpt2.model, eval_sets) if eval_sets else None
    report1 = evaluate(ckpt1.model, eval_sets) if eval_sets else None
    return SrapfResult(checkpoint=ckpt2, stage1_checkpoint=ckpt1,
                       histories=(hist1, hist2), report=report,
                       stage1_report=report1,
                       retrieved_counts=retrieved_ds.histogram())


# -- recipe presets ---------------------------------------------------------------


def recipe_configs(name: str, model_config: ModelConfig, seeds=(0, 0),
                   overrides=None) -> list[StageConfig]:
    """Stage configs for a named recipe, with optional field overrides.

    Override keys are StageConfig field names, plus ``epsilon``/``iterations``/
    ``step_size`` (routed into the perturbation config) and ``lambda_ap``/
    ``lambda_ra``/``tau`` (routed into the loss weights). A ``stage1`` or
    ``stage2`` key may hold a nested dict applied to that stage only.
    """
    if name not in RECIPES:
        raise ValueError(f"unknown recipe {name!r}; known: {RECIPES}")
    bv = model_config.visual_blocks
    base = {
        "LP": [dict(top_k_visual=0, epochs=50, weight_decay=0.1)],
        "FFT": [dict(top_k_visual=bv, epochs=50, weight_decay=0.1)],
        "PFT": [dict(top_k_visual=4, epochs=50, weight_decay=0.1)],
        "PCT": [dict(top_k_visual=3, top_k_text=3, loss_mode="contrastive",
                     epochs=50, weight_decay=0.1)],
        "PFT+RA": [dict(top_k_visual=4, use_ra=True, epochs=10, weight_decay=0.01)],
        "PFT+AP": [dict(top_k_visual=4, use_ap=True, epochs=50, weight_decay=0.1)],
        "PFT+RA+AP": [dict(top_k_visual=4, use_ra=True, use_ap=True, epochs=10,
                           weight_decay=0.01)],
        "SRAPF": [dict(top_k_visual=4, use_ra=True, epochs=10, weight_decay=0.01),
                  dict(top_k_visual=4, use_ap=True, epochs=10, weight_decay=0.01)],
    }[name]
    overrides = dict(overrides or {})
    per_stage = [overrides.pop("stage1", {}), overrides.pop("stage2", {})]
    configs = []
    for i, fields in enumerate(base):
        fields = dict(fields)
        fields.update(overrides)
        fields.update(per_stage[i] if i < len(per_stage) else {})
        fields["top_k_visual"] = min(fields["top_k_visual"], bv)
        fields["top_k_text"] = min(fields.get("top_k_text", 0), model_config.text_blocks)
        pert_kw = {k: fields.pop(k) for k in ("epsilon", "iterations", "step_size")
                   if k in fields}
        lw_kw = {k: fields.pop(k) for k in ("lambda_ap", "lambda_ra", "tau")
                 if k in fields}
        if lw_kw:
            fields["loss_weights"] = dataclasses.replace(
                fields.get("loss_weights", LossWeights()), **lw_kw)
        cfg = StageConfig(seed=seeds[i] if i < len(seeds) else seeds[-1], **fields)
        if pert_kw:
            cfg.perturbation = dataclasses.replace(
                cfg.perturbation or PerturbationConfig(), **pert_kw)
        configs.append(cfg)
    return configs


@dataclass
class RecipeResult:
    method: str
    seed: int
    shots: int
    report: EvalReport
    checkpoint: Checkpoint
    histories: tuple
    stage1_report: EvalReport | None
    pretrained: DualEncoderModel
    params_trained: int
    retrieved_counts: dict


def run_recipe(name: str, task: Benchmark, corpus=None, *, shots: int = 16,
               seed: int = 0, cap: int = 500, overrides=None, model_config=None,
               pretrain_epochs: int = 30) -> RecipeResult:
    """End-to-end: pretrain, init the classifier from class names, sample the
    few-shot split, train the named recipe, evaluate on ID and OOD test sets.

    One seed drives everything through spawned child streams (model init,
    pretraining, the few-shot split, and per-stage batch order), so results
    are a pure function of (name, task, shots, seed, overrides).
    """
    corpus = corpus if corpus is not None else task.corpus
    if corpus is None:
        raise ValueError("a caption corpus is required (for pretraining at minimum)")
    children = np.random.SeedSequence(seed).spawn(5)
    s_model, s_pretrain, s_split, s_stage1, s_stage2 = children

    mc = model_config or ModelConfig(input_dim=task.input_dim,
                                     num_classes=task.num_classes)
    model = DualEncoderModel(mc, seed=s_model)
    pretrain(model, corpus, epochs=pretrain_epochs, seed=_as_int(s_pretrain))
    init_classifier_from_text(model, task.class_names)
    # snapshot after classifier init: this is the zero-shot model, the natural
    # endpoint for weight-space interpolation against any finetuned checkpoint
    pretrained = model.copy()

    split = sample_few_shot(task.id_train, shots, seed=_as_int(s_split))
    fs_train = split.apply(task.id_train)
    stage_seeds = (_as_int(s_stage1), _as_int(s_stage2))
    configs = recipe_configs(name, mc, seeds=stage_seeds, overrides=overrides)

    if name == "SRAPF":
        res = run_srapf(model, fs_train, task.id_val, corpus, configs[0],
                        configs[1], eval_sets=task.eval_sets(), cap=cap)
        ckpt, histories = res.checkpoint, res.histories
        report, stage1_report = res.report, res.stage1_report
        retrieved_counts = res.retrieved_counts
    else:
        cfg = configs[0]
        retrieved = None
        retrieved_counts = {}
        if cfg.use_ra:
            rds = retrieve_all(corpus, task.class_names, model, cap=cap)
            retrieved = rds.to_arrays(corpus)
            retrieved_counts = rds.histogram()
        ckpt, hist = train_stage(model, fs_train, task.id_val, cfg,
                                 retrieved=retrieved, stage_tag=name)
        histories = (hist,)
        report, stage1_report = evaluate(ckpt.model, task.eval_sets()), None

    report.seed, report.tag = seed, name
    group_sizes = {g: sum(p.size for p in ps)
                   for g, ps in ckpt.model.param_groups().items()}
    params_trained = sum(group_sizes[g] for g in ckpt.trainable_groups)
    return RecipeResult(method=name, seed=seed, shots=shots, report=report,
                        checkpoint=ckpt, histories=histories,
                        stage1_report=stage1_report, pretrained=pretrained,
                        params_trained=params_trained,
                        retrieved_counts=retrieved_counts)


def _as_int(seed_seq) -> int:
    return int(seed_seq.generate_state(1, dtype=np.uint64)[0])


def write_run_dir(result: RecipeResult, out_dir) -> None:
    """Persist a finished run: checkpoint, report, histories, and metadata."""
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(result.checkpoint, os.path.join(out_dir, "checkpoint.npz"))
    with open(os.path.join(out_dir, "report.tsv"), "w", encoding="utf-8") as fh:
        fh.write(format_report(result.report) + "\n")
    with open(os.path.join(out_dir, "history.tsv"), "w", encoding="utf-8") as fh:
        fh.write("stage\tepoch\tmean_loss\tid_val_top1\n")
        for si, hist in enumerate(result.histories):
            for st in hist:
                fh.write(f"{si}\t{st.epoch}\t{st.mean_loss:.17g}\t{st.id_val_top1:.17g}\n")
    meta = {
        "method": result.method, "seed": result.seed, "shots": result.shots,
        "params_trained": result.params_trained,
        "selected_epoch": result.checkpoint.epoch,
        "id_val_top1": result.checkpoint.id_val_top1,
        "retrieved_counts": result.retrieved_counts,
    }
    with open(os.path.join(out_dir, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
