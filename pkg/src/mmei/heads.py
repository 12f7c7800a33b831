"""Emotion and intent classifiers over the fused vector, and the joint objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import ndcore as nd
from .dataio import ContentItem
from .errors import ParameterError, ShapeError
from .ndcore import Tensor


@dataclass
class HeadParams:
    W_e: Tensor
    b_e: Tensor
    W_i: Tensor
    b_i: Tensor

    @classmethod
    def from_mapping(cls, params: Mapping[str, Tensor]) -> "HeadParams":
        return cls(params["heads.W_e"], params["heads.b_e"], params["heads.W_i"], params["heads.b_i"])


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda1 + self.lambda2 <= 0:
            raise ParameterError(f"loss weights must be non-negative with a positive sum, got "
                                 f"({self.lambda1}, {self.lambda2})")


def _classify(F: Tensor, W: Tensor, b: Tensor) -> Tensor:
    if F.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeError(f"head expects width {W.shape[1]} and bias {W.shape[0]}, got F {F.shape}, b {b.shape}")
    return nd.softmax_rows(nd.add(F @ W.T if F.ndim == 1 else nd.matmul_t(F, W), b))


def emotion_forward(F: Tensor, params: HeadParams) -> Tensor:
    """Class probabilities softmax(W_e F + b_e). F may be a vector or a [batch x d] matrix."""
    return _classify(F, params.W_e, params.b_e)


def intent_forward(F: Tensor, params: HeadParams) -> Tensor:
    return _classify(F, params.W_i, params.b_i)


def recognition_loss(emotion_probs: Tensor, intent_probs: Tensor,
                     emotion_labels: Sequence[int], intent_labels: Sequence[int]) -> Tensor:
    """Sum of the two batch-mean cross entropies."""
    if len(emotion_labels) != len(intent_labels):
        raise ShapeError("emotion and intent label counts differ")
    return (nd.cross_entropy(_as_batch(emotion_probs), emotion_labels)
            + nd.cross_entropy(_as_batch(intent_probs), intent_labels))


def _as_batch(x: Tensor) -> Tensor:
    return nd.concat_rows([x]) if x.ndim == 1 else x


def _embedding(x) -> Tensor:
    if isinstance(x, ContentItem):
        return Tensor(np.asarray(x.embedding, dtype=np.float64))
    return x


def ranking_loss(F_u: Tensor, positive, negative) -> Tensor:
    """Pairwise logistic loss -ln sigmoid(<F,E_pos> - <F,E_neg>), averaged over rows.

    ``positive``/``negative`` are ContentItems or tensors shaped like ``F_u``.
    """
    E_pos, E_neg = _embedding(positive), _embedding(negative)
    if not (F_u.shape == E_pos.shape == E_neg.shape):
        raise ShapeError(f"ranking_loss shapes differ: F {F_u.shape}, pos {E_pos.shape}, neg {E_neg.shape}")
    F, P, N = _as_batch(F_u), _as_batch(E_pos), _as_batch(E_neg)
    gap = nd.row_sums(F * (P - N))
    return -nd.mean(nd.log_sigmoid(gap))


def total_loss(recog: Tensor, rank: Tensor, weights: LossWeights) -> Tensor:
    return recog * weights.lambda1 + rank * weights.lambda2
