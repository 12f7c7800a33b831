"""Modality projection, cross-modal attention and adaptive weighted fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from . import ndcore as nd
from .dataio import MODALITIES, MultimodalSample
from .errors import ShapeError
from .ndcore import Tensor

# (target, source) order used for naming and iteration everywhere
BLOCK_PAIRS = tuple((tgt, src) for tgt in MODALITIES for src in MODALITIES)
PROJ_NAMES = {"visual": "W_v", "audio": "W_a", "text": "W_t"}


def block_name(layer: int, target: str, source: str, role: str) -> str:
    return f"fusion.layer{layer}.{target}<-{source}.{role}"


@dataclass
class FusionParams:
    W_v: Tensor
    W_a: Tensor
    W_t: Tensor
    blocks: list[dict[tuple[str, str], tuple[Tensor, Tensor, Tensor]]]
    alpha_scorer: Tensor

    @property
    def d(self) -> int:
        return self.W_v.shape[0]

    def projection(self, modality: str) -> Tensor:
        return getattr(self, PROJ_NAMES[modality])

    @classmethod
    def from_mapping(cls, params: Mapping[str, Tensor], n_layers: int) -> "FusionParams":
        blocks = [
            {
                (tgt, src): tuple(params[block_name(layer, tgt, src, role)] for role in ("query", "key", "value"))
                for tgt, src in BLOCK_PAIRS
            }
            for layer in range(n_layers)
        ]
        return cls(params["fusion.W_v"], params["fusion.W_a"], params["fusion.W_t"],
                   blocks, params["fusion.alpha_scorer"])


@dataclass
class FusedState:
    v_hat: Tensor
    a_hat: Tensor
    t_hat: Tensor
    pooled_v: Tensor
    pooled_a: Tensor
    pooled_t: Tensor
    alpha: Tensor
    F: Tensor


def project(sample: MultimodalSample, params: FusionParams) -> tuple[Tensor, Tensor, Tensor]:
    """Map every sequence row r to W_m r, giving width-d sequences."""
    out = []
    for m in MODALITIES:
        seq = getattr(sample, m)
        W = params.projection(m)
        if seq.ndim != 2 or seq.shape[1] != W.shape[1]:
            raise ShapeError(f"{m} sequence has shape {seq.shape}, projection expects width {W.shape[1]}")
        out.append(nd.matmul_t(Tensor(seq), W))
    return tuple(out)


def attention_weights(Q: Tensor, K: Tensor) -> Tensor:
    if K.ndim != 2 or K.shape[0] == 0:
        raise ShapeError(f"attention needs at least one key, got key shape {K.shape}")
    if Q.shape[-1] != K.shape[-1]:
        raise ShapeError(f"query width {Q.shape[-1]} differs from key width {K.shape[-1]}")
    return nd.softmax_rows(nd.scale(nd.matmul_t(Q, K), 1.0 / math.sqrt(K.shape[1])))


def attend(Q: Tensor, K: Tensor, V: Tensor) -> Tensor:
    """Scaled dot-product attention, softmax(Q K^T / sqrt(d)) V."""
    if V.shape[0] != K.shape[0]:
        raise ShapeError(f"{K.shape[0]} keys but {V.shape[0]} values")
    return attention_weights(Q, K) @ V


def cross_modal_encode(v_hat: Tensor, a_hat: Tensor, t_hat: Tensor,
                       params: FusionParams) -> tuple[Tensor, Tensor, Tensor]:
    """Residual self- and cross-attention; every modality queries all three.

    Within a layer all targets read the previous layer's sequences.
    """
    seqs = dict(zip(MODALITIES, (v_hat, a_hat, t_hat)))
    for m, s in seqs.items():
        if s.ndim != 2 or s.shape[1] != params.d:
            raise ShapeError(f"{m} sequence has shape {s.shape}, expected width {params.d}")
    for layer in params.blocks:
        updated = {}
        for tgt in MODALITIES:
            acc = seqs[tgt]
            for src in MODALITIES:
                Wq, Wk, Wv = layer[(tgt, src)]
                acc = acc + attend(nd.matmul_t(seqs[tgt], Wq), nd.matmul_t(seqs[src], Wk), nd.matmul_t(seqs[src], Wv))
            updated[tgt] = acc
        seqs = updated
    return seqs["visual"], seqs["audio"], seqs["text"]


def pool(seq: Tensor) -> Tensor:
    """Mean over sequence positions."""
    return nd.mean_rows(seq)


def fuse_weights(pooled_v: Tensor, pooled_a: Tensor, pooled_t: Tensor,
                 params: FusionParams) -> tuple[Tensor, Tensor]:
    stacked = nd.concat_rows([pooled_v, pooled_a, pooled_t])
    scores = (stacked @ params.alpha_scorer) / math.sqrt(params.d)
    return nd.softmax_rows(scores), stacked


def fuse(pooled_v: Tensor, pooled_a: Tensor, pooled_t: Tensor, params: FusionParams,
         projected: tuple[Tensor, Tensor, Tensor] | None = None) -> FusedState:
    alpha, stacked = fuse_weights(pooled_v, pooled_a, pooled_t, params)
    F = alpha @ stacked
    v_hat, a_hat, t_hat = projected if projected is not None else (None, None, None)
    return FusedState(v_hat, a_hat, t_hat, pooled_v, pooled_a, pooled_t, alpha, F)


def encode_sample(sample: MultimodalSample, params: FusionParams) -> FusedState:
    """Full fusion pipeline for one sample: project, encode, pool, fuse."""
    projected = project(sample, params)
    enriched = cross_modal_encode(*projected, params)
    pooled = [pool(s) for s in enriched]
    return fuse(*pooled, params, projected=projected)
