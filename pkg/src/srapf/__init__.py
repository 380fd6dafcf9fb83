"""srapf: stage-wise retrieval-augmented adversarial partial finetuning.

A desk-scale toolkit for studying few-shot adaptation of dual-encoder
models under distribution shift. The pieces:

- ``model``: a small numpy dual encoder (vector inputs, hashed bag-of-words
  text) with named parameter groups, freeze plans, classifier-from-text
  initialization, and weight-space interpolation.
- ``losses``: batch-mean cross-entropy, bidirectional InfoNCE, and the
  combined objective with retrieved and adversarial terms.
- ``adversarial``: sign-gradient feature perturbation inside an epsilon box.
- ``retrieval``: whole-word caption matching, similarity ranking, per-class
  caps, and byte-stable TSV round-trips.
- ``data``: few-shot splits and a synthetic distribution-shift benchmark
  with a paired caption corpus.
- ``pipeline``: stage training, checkpoint selection by ID validation
  accuracy, the two-stage recipe, and eight named adaptation presets.
- ``evaluation``: ID/OOD top-1 reports and multi-seed summaries.

Everything is deterministic given a seed and runs in seconds on a laptop.
"""

from .adversarial import (PerturbationConfig, PerturbationResult, Perturber,
                          format_sweep_table, perturb, sweep_epsilon)
from .checkpoint import Checkpoint, config_hash, load_checkpoint, save_checkpoint
from .data import (Benchmark, FewShotSplit, InsufficientDataError,
                   LabeledDataset, SHIFT_KINDS, apply_shift, dataset_hash,
                   generate_shift_benchmark, load_benchmark, load_split,
                   sample_few_shot, save_benchmark, save_split)
from .evaluation import (EvalReport, ScatterPoint, evaluate, format_report,
                         format_scatter, format_summary, summarize_seeds,
                         top1_accuracy)
from .losses import (Batch, LossWeights, ap_loss, ce_loss, ce_loss_grads,
                     combined_loss, contrastive_loss, contrastive_loss_grads,
                     ra_loss)
from .model import (DEFAULT_PROMPT_TEMPLATES, DualEncoderModel, FreezePlan,
                    ModelConfig, build_freeze_plan, classify,
                    count_trainable_params, init_classifier_from_text,
                    wise_ft_interpolate)
from .optim import AdamW, CosineWarmupSchedule
from .pipeline import (RECIPES, EpochStats, RecipeResult, SrapfResult,
                       StageConfig, TrainingDivergedError, pretrain,
                       recipe_configs, run_recipe, run_srapf, select_best,
                       train_stage, write_run_dir)
from .retrieval import (Corpus, CorpusError, CorpusRecord, RetrievedDataset,
                        RetrievedItem, match_class, rank_and_cap,
                        read_corpus_tsv, read_retrieved_tsv, retrieve_all,
                        write_corpus_tsv, write_retrieved_tsv)

__version__ = "0.1.0"
