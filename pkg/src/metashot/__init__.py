"""Few-shot classification engine over precomputed embedding files.

Heads: zero-shot cosine classifier, training-free key/value cache blend, and
a meta-trained gated cross-attention adapter that refines class embeddings
from their support shots.
"""

from .adapter import (
    AdapterConfig,
    AdapterParams,
    RefinedClasses,
    adapter_logits,
    param_count,
    refine,
)
from .errors import EngineError
from .evalharness import EvalReport, cross_dataset, eval_method, harmonic_mean
from .store import LoadedTask, SynthSpec, load_task, split_by_zeroshot, synth_task
from .tip import CacheModel, TipParams, search_tip, tip_logits
from .trainer import TrainConfig, train
from .zeroshot import top1, zeroshot_logits

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig",
    "AdapterParams",
    "CacheModel",
    "EngineError",
    "EvalReport",
    "LoadedTask",
    "RefinedClasses",
    "SynthSpec",
    "TipParams",
    "TrainConfig",
    "adapter_logits",
    "cross_dataset",
    "eval_method",
    "harmonic_mean",
    "load_task",
    "param_count",
    "refine",
    "search_tip",
    "split_by_zeroshot",
    "synth_task",
    "tip_logits",
    "top1",
    "train",
    "zeroshot_logits",
    "__version__",
]
