"""AdamW training loop, evaluation report and JSON checkpoints."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ndcore as nd
from .dataio import ContentItem, DatasetManifest, MultimodalSample, batches
from .errors import CheckpointError, NumericalError, ParameterError, SchemaError, ShapeError
from .heads import LossWeights, emotion_forward, intent_forward, HeadParams
from .metrics import (RankingJudgment, classification_metrics, hit_ratio_at_k, mean_average_precision,
                      mean_ndcg_at_k)
from .model import MmeiModel, forward_batch, sample_pairs
from .recommender import rank_top_k

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOSS_COLUMNS = ("epoch", "train_total", "train_recog", "train_rank", "val_total", "val_recog", "val_rank")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 100
    dropout_p: float = 0.2
    lambda1: float = 1.0
    lambda2: float = 1.0
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    d: int = 16
    n_layers: int = 1

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ParameterError("learning_rate must be non-negative")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ParameterError("dropout_p must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.d < 1 or self.n_layers < 0:
            raise ParameterError("epochs, batch_size and d must be positive, n_layers non-negative")
        LossWeights(self.lambda1, self.lambda2)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ParameterError(f"unknown config keys: {unknown}")
        return cls(**obj)


@dataclass
class EpochRecord:
    epoch: int
    train_total: float
    train_recog: float
    train_rank: float
    val_total: float
    val_recog: float
    val_rank: float
    wall_time: float = 0.0


@dataclass
class Checkpoint:
    config: TrainConfig
    model: MmeiModel
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    best_val_loss: float = float("inf")


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               moments: dict[str, tuple[np.ndarray, np.ndarray]], config: TrainConfig, t: int):
    """One AdamW update; returns new parameter and moment dicts (inputs untouched)."""
    if t < 1:
        raise ParameterError("AdamW step index starts at 1")
    b1, b2 = config.adam_beta1, config.adam_beta2
    lr, wd, eps = config.learning_rate, config.weight_decay, config.adam_eps
    new_params, new_moments = {}, {}
    for name, theta in params.items():
        g = grads[name]
        m, v = moments.get(name, (np.zeros_like(theta), np.zeros_like(theta)))
        if not (g.shape == m.shape == v.shape == theta.shape):
            raise ShapeError(f"AdamW shapes disagree for {name!r}: param {theta.shape}, grad {g.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_params[name] = theta - lr * (m_hat / (np.sqrt(v_hat) + eps) + wd * theta)
        new_moments[name] = (m, v)
    return new_params, new_moments


def _labels(model: MmeiModel, samples: Sequence[MultimodalSample]):
    emo, intents = model.manifest.emotion_space, model.manifest.intent_space
    return [emo.index(s.emotion) for s in samples], [intents.index(s.intent) for s in samples]


def _content_index(model: MmeiModel) -> dict[str, int]:
    return {cid: i for i, cid in enumerate(model.content_ids)}


def dataset_losses(model: MmeiModel, samples: Sequence[MultimodalSample], weights: LossWeights,
                   seed: int = 0) -> tuple[float, float, float]:
    """Dropout-off (total, recog, rank) over a whole set with seeded ranking pairs."""
    triples = sample_pairs(samples, _content_index(model), np.random.default_rng([seed, 7]))
    out = forward_batch(model, model.tensors(), samples, triples, weights)
    return out.total.item(), out.recog.item(), out.rank.item()


def _check_schema(model: MmeiModel, samples: Sequence[MultimodalSample]) -> None:
    dims = model.manifest.dims()
    for s in samples:
        for m, width in dims.items():
            seq = getattr(s, m)
            if seq.ndim != 2 or seq.shape[1] != width:
                raise SchemaError(f"sample {s.id!r}: {m} width {seq.shape[-1]} but model expects {width}")


def train(train_set: Sequence[MultimodalSample], val_set: Sequence[MultimodalSample], config: TrainConfig,
          manifest: DatasetManifest, catalog: Sequence[ContentItem],
          model: MmeiModel | None = None, select: str = "best") -> tuple[Checkpoint, list[EpochRecord]]:
    """Optimize the joint objective; returns a checkpoint and per-epoch records.

    ``select="best"`` keeps the lowest-validation-loss epoch, ``"last"`` the final one.
    """
    if select not in ("best", "last"):
        raise ParameterError(f"select must be 'best' or 'last', got {select!r}")
    if not train_set or not val_set:
        raise ParameterError("train and validation sets must be non-empty")
    if model is None:
        model = MmeiModel.initialize(manifest, catalog, config.d, config.n_layers, config.seed)
    model = model.copy()
    _check_schema(model, train_set)
    _check_schema(model, val_set)
    weights = config.loss_weights
    content_index = _content_index(model)
    moments: dict = {}
    step = 0
    best: Checkpoint | None = None
    records: list[EpochRecord] = []
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        sums = np.zeros(3)
        for bi, batch in enumerate(batches(train_set, config.batch_size, config.seed, epoch)):
            triples = sample_pairs(batch, content_index, np.random.default_rng([config.seed, epoch, bi, 1]))
            tape = nd.Tape()
            tensors = model.tensors(tape)
            out = forward_batch(model, tensors, batch, triples, weights, config.dropout_p, True,
                                np.random.default_rng([config.seed, epoch, bi, 2]))
            values = np.array([out.total.item(), out.recog.item(), out.rank.item()])
            if not np.all(np.isfinite(values)):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {bi}: {values.tolist()}")
            grads = nd.backward(out.total)
            step += 1
            model.params, moments = adamw_step(
                model.params, {k: grads[t.node_id].data for k, t in tensors.items()}, moments, config, step)
            for name, value in model.params.items():
                if not np.all(np.isfinite(value)):
                    raise NumericalError(f"parameter {name!r} became non-finite at epoch {epoch}, batch {bi}")
            sums += values * len(batch)
        train_total, train_recog, train_rank = sums / len(train_set)
        val_total, val_recog, val_rank = dataset_losses(model, val_set, weights, config.seed)
        rec = EpochRecord(epoch, train_total, train_recog, train_rank, val_total, val_recog, val_rank,
                          time.perf_counter() - started)
        records.append(rec)
        log.info("epoch %d train %.6f val %.6f", epoch, train_total, val_total)
        if best is None or val_total < best.best_val_loss or select == "last":
            best_val = val_total if best is None else min(best.best_val_loss, val_total)
            best = Checkpoint(config, model.copy(), {k: (m.copy(), v.copy()) for k, (m, v) in moments.items()},
                              step, epoch, best_val)
    return best, records


def predict(model: MmeiModel, samples: Sequence[MultimodalSample]):
    """Dropout-off fused vectors and argmax predictions for both heads."""
    tensors = model.tensors()
    F = nd.concat_rows([model.encode(s, tensors).F for s in samples])
    hp = HeadParams.from_mapping(tensors)
    pe, pi = emotion_forward(F, hp), intent_forward(F, hp)
    return F.data, pe.data.argmax(axis=1), pi.data.argmax(axis=1)


def evaluate(checkpoint: Checkpoint | MmeiModel, samples: Sequence[MultimodalSample],
             catalog: Sequence[ContentItem], k: int = 10) -> dict:
    """Metric report: per-head and head-averaged classification scores plus MAP/NDCG@k/HR@k."""
    model = checkpoint.model if isinstance(checkpoint, Checkpoint) else checkpoint
    if not samples:
        raise ParameterError("cannot evaluate on an empty set")
    _check_schema(model, samples)
    items = model.content_catalog(catalog)
    F, emo_pred, int_pred = predict(model, samples)
    emo_true, int_true = _labels(model, samples)
    report: dict = {"k": k, "n_samples": len(samples)}
    for head, pred, true, n in (("emotion", emo_pred, emo_true, len(model.manifest.emotion_space)),
                                ("intent", int_pred, int_true, len(model.manifest.intent_space))):
        cm = classification_metrics(pred.tolist(), true, n)
        for key, value in cm._asdict().items():
            report[f"{head}_{key}"] = value
    for key in ("accuracy", "precision_macro", "recall_macro", "f1_macro"):
        report[key] = (report[f"emotion_{key}"] + report[f"intent_{key}"]) / 2
    known = set(model.content_ids)
    judgments = [
        RankingJudgment(rank_top_k(f, items, len(items)).ids, {p for p in s.positives if p in known})
        for f, s in zip(F, samples) if any(p in known for p in s.positives)
    ]
    report["ranking_users"] = len(judgments)
    report["map"] = mean_average_precision(judgments)
    report[f"ndcg_at_{k}"] = mean_ndcg_at_k(judgments, k)
    report[f"hr_at_{k}"] = hit_ratio_at_k(judgments, k)
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


# --- files -----------------------------------------------------------------

def write_loss_csv(path, records: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOSS_COLUMNS)
        for r in records:
            writer.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in LOSS_COLUMNS[1:]])


def _array_entry(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(x) for x in a.reshape(-1)]}


def checkpoint_json(ckpt: Checkpoint) -> str:
    model = ckpt.model
    arrays = {name: _array_entry(a) for name, a in model.params.items()}
    for name, (m, v) in ckpt.moments.items():
        arrays[f"adamw.m/{name}"] = _array_entry(m)
        arrays[f"adamw.v/{name}"] = _array_entry(v)
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": ckpt.config.to_dict(),
        "manifest": model.manifest.to_dict(),
        "content_ids": model.content_ids,
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "best_val_loss": ckpt.best_val_loss if np.isfinite(ckpt.best_val_loss) else None,
        "arrays": arrays,
    }
    return json.dumps(doc, sort_keys=True) + "\n"


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(checkpoint_json(ckpt))


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: not a valid checkpoint ({exc})") from None
    if not isinstance(doc, dict):
        raise CheckpointError(f"{path}: checkpoint must be a JSON object")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    try:
        config = TrainConfig.from_dict(doc["config"])
        manifest = DatasetManifest.from_dict(doc["manifest"])
        model = MmeiModel(manifest, config.d, config.n_layers, list(doc["content_ids"]))
        arrays = doc["arrays"]
        expected = model.shapes()
        for name, shape in expected.items():
            if name not in arrays:
                raise CheckpointError(f"{path}: missing array {name!r}")
            model.params[name] = _decode_array(arrays[name], name, shape)
        moments = {}
        for name, shape in expected.items():
            key_m, key_v = f"adamw.m/{name}", f"adamw.v/{name}"
            if key_m in arrays and key_v in arrays:
                moments[name] = (_decode_array(arrays[key_m], key_m, shape),
                                 _decode_array(arrays[key_v], key_v, shape))
        best = doc["best_val_loss"]
        return Checkpoint(config, model, moments, int(doc["step"]), int(doc["epoch"]),
                          float("inf") if best is None else float(best))
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc!r})") from None


def _decode_array(entry: dict, name: str, shape: tuple) -> np.ndarray:
    stored = tuple(entry["shape"])
    if stored != tuple(shape):
        raise SchemaError(f"array {name!r} has shape {list(stored)} but config field 'd' / manifest "
                          f"dims imply {list(shape)}")
    data = np.array(entry["data"], dtype=np.float64)
    if data.size != int(np.prod(shape)):
        raise CheckpointError(f"array {name!r} holds {data.size} values for shape {list(shape)}")
    return data.reshape(shape)
