"""Multimodal emotion/intent fusion with emotion-driven content ranking.

Pipeline: per-modality embedding sequences are projected into a shared space,
mixed by residual cross-modal attention, mean-pooled and fused with learned
softmax weights. Two softmax heads classify emotion and intent from the fused
vector, and the same vector ranks catalog items by dot product. Everything is
trained with a small reverse-mode autodiff core (``mmei.ndcore``).
"""

from .dataio import ContentItem, DatasetManifest, MultimodalSample, SplitSpec, load_dataset, split, synthesize
from .model import MmeiModel
from .recommender import RankedList, rank_top_k, simulate_feedback
from .trainer import Checkpoint, TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

__all__ = [
    "Checkpoint", "ContentItem", "DatasetManifest", "MmeiModel", "MultimodalSample", "RankedList",
    "SplitSpec", "TrainConfig", "evaluate", "load_checkpoint", "load_dataset", "rank_top_k",
    "save_checkpoint", "simulate_feedback", "split", "synthesize", "train",
]

__version__ = "0.1.0"
