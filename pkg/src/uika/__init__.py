"""Three-stage pretraining pipeline for aspect-based sentiment analysis.

Stage 1 samples target-related instances from a large sentence-level
corpus (BM25 + embedding rerank) and pretrains on pseudo aspect-level
data; stage 2 transfers that knowledge on the target data through a
guidance model and an EMA-tracked learner; stage 3 fine-tunes the
learner.
"""

__version__ = "0.1.0"

from .corpus import AspectInstance, PosLexicon, SentenceRecord, Vocabulary, build_vocab, tokenize
from .evaluation import Metrics, compute_metrics, evaluate, t_test
from .model import ModelConfig, forward, init_params, reinit_head
from .optim import AdamState, ParamSet, adam_step
from .retrieval import Bm25Index, EmbeddingTable, SampleConfig, build_index, build_sampled_dataset
from .training import (
    Components,
    PipelineConfig,
    StageConfig,
    alpha,
    ema_update,
    guidance_loss,
    run_pipeline,
    stage1_pretrain,
    stage2_guidance,
    stage3_finetune,
)

__all__ = [
    "AspectInstance",
    "PosLexicon",
    "SentenceRecord",
    "Vocabulary",
    "build_vocab",
    "tokenize",
    "Metrics",
    "compute_metrics",
    "evaluate",
    "t_test",
    "ModelConfig",
    "forward",
    "init_params",
    "reinit_head",
    "AdamState",
    "ParamSet",
    "adam_step",
    "Bm25Index",
    "EmbeddingTable",
    "SampleConfig",
    "build_index",
    "build_sampled_dataset",
    "Components",
    "PipelineConfig",
    "StageConfig",
    "alpha",
    "ema_update",
    "guidance_loss",
    "run_pipeline",
    "stage1_pretrain",
    "stage2_guidance",
    "stage3_finetune",
    "__version__",
]
