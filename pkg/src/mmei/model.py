"""Parameter container and batched forward pass of the full model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ndcore as nd
from .dataio import ContentItem, DatasetManifest, MultimodalSample
from .errors import SchemaError
from .fusion import BLOCK_PAIRS, FusedState, FusionParams, block_name, encode_sample
from .heads import HeadParams, LossWeights, emotion_forward, intent_forward, ranking_loss, recognition_loss, total_loss
from .ndcore import Tape, Tensor

CONTENT = "content.embeddings"


def param_shapes(d: int, d_v: int, d_a: int, d_t: int, n_emotion: int, n_intent: int,
                 n_layers: int, n_content: int) -> dict[str, tuple]:
    shapes = {"fusion.W_v": (d, d_v), "fusion.W_a": (d, d_a), "fusion.W_t": (d, d_t)}
    for layer in range(n_layers):
        for tgt, src in BLOCK_PAIRS:
            for role in ("query", "key", "value"):
                shapes[block_name(layer, tgt, src, role)] = (d, d)
    shapes["fusion.alpha_scorer"] = (d,)
    shapes["heads.W_e"] = (n_emotion, d)
    shapes["heads.b_e"] = (n_emotion,)
    shapes["heads.W_i"] = (n_intent, d)
    shapes["heads.b_i"] = (n_intent,)
    shapes[CONTENT] = (n_content, d)
    return shapes


@dataclass
class MmeiModel:
    manifest: DatasetManifest
    d: int
    n_layers: int
    content_ids: list[str]
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def initialize(cls, manifest: DatasetManifest, catalog: Sequence[ContentItem], d: int,
                   n_layers: int = 1, seed: int = 0) -> "MmeiModel":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; content rows copied from the catalog."""
        for item in catalog:
            if item.embedding.shape != (d,):
                raise SchemaError(f"catalog item {item.id!r} has embedding width "
                                  f"{item.embedding.shape[0]}, model d is {d}")
        rng = np.random.default_rng(seed)
        model = cls(manifest, d, n_layers, [c.id for c in catalog])
        for name, shape in model.shapes().items():
            if name == CONTENT:
                model.params[name] = np.stack([c.embedding for c in catalog]).astype(np.float64)
                continue
            fan_in = shape[1] if len(shape) == 2 else d
            bound = 1.0 / math.sqrt(fan_in)
            model.params[name] = rng.uniform(-bound, bound, size=shape)
        return model

    def shapes(self) -> dict[str, tuple]:
        m = self.manifest
        return param_shapes(self.d, m.d_v, m.d_a, m.d_t, len(m.emotion_space), len(m.intent_space),
                            self.n_layers, len(self.content_ids))

    def copy(self) -> "MmeiModel":
        return MmeiModel(self.manifest, self.d, self.n_layers, list(self.content_ids),
                         {k: v.copy() for k, v in self.params.items()})

    def tensors(self, tape: Tape | None = None) -> dict[str, Tensor]:
        if tape is None:
            return {k: Tensor(v) for k, v in self.params.items()}
        return {k: tape.watch(v) for k, v in self.params.items()}

    def content_catalog(self, catalog: Sequence[ContentItem]) -> list[ContentItem]:
        """Catalog items carrying this model's (trained) embeddings."""
        if [c.id for c in catalog] != self.content_ids:
            raise SchemaError("catalog ids do not match the content ids stored with the model")
        emb = self.params[CONTENT]
        return [ContentItem(c.id, emb[i].copy(), c.metadata) for i, c in enumerate(catalog)]

    def encode(self, sample: MultimodalSample, tensors: dict[str, Tensor] | None = None) -> FusedState:
        tensors = tensors if tensors is not None else self.tensors()
        return encode_sample(sample, FusionParams.from_mapping(tensors, self.n_layers))


@dataclass
class BatchLosses:
    total: Tensor
    recog: Tensor
    rank: Tensor
    emotion_probs: Tensor
    intent_probs: Tensor


def sample_pairs(samples: Sequence[MultimodalSample], content_index: dict[str, int],
                 rng: np.random.Generator) -> list[tuple[int, int, int]]:
    """One (row, positive, negative) triple per sample that has catalog positives."""
    n_items = len(content_index)
    triples = []
    for row, s in enumerate(samples):
        pos = sorted({content_index[p] for p in s.positives if p in content_index})
        if not pos or len(pos) == n_items:
            continue
        p = pos[int(rng.integers(len(pos)))]
        neg_pool = np.setdiff1d(np.arange(n_items), pos, assume_unique=True)
        n = int(neg_pool[rng.integers(len(neg_pool))])
        triples.append((row, p, n))
    return triples


def forward_batch(model: MmeiModel, tensors: dict[str, Tensor], samples: Sequence[MultimodalSample],
                  triples: Sequence[tuple[int, int, int]], weights: LossWeights,
                  dropout_p: float = 0.0, train: bool = False,
                  rng: np.random.Generator | None = None) -> BatchLosses:
    fp = FusionParams.from_mapping(tensors, model.n_layers)
    hp = HeadParams.from_mapping(tensors)
    F = nd.concat_rows([encode_sample(s, fp).F for s in samples])
    F = nd.dropout(F, dropout_p, train, rng if rng is not None else np.random.default_rng(0))
    pe, pi = emotion_forward(F, hp), intent_forward(F, hp)
    emo = model.manifest.emotion_space
    intents = model.manifest.intent_space
    recog = recognition_loss(pe, pi, [emo.index(s.emotion) for s in samples],
                             [intents.index(s.intent) for s in samples])
    if triples:
        rows, pos, neg = zip(*triples)
        E = tensors[CONTENT]
        rank = ranking_loss(nd.take_rows(F, rows), nd.take_rows(E, pos), nd.take_rows(E, neg))
    else:
        rank = Tensor(np.asarray(0.0))
    return BatchLosses(total_loss(recog, rank, weights), recog, rank, pe, pi)
