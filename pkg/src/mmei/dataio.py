"""Dataset records, JSON Lines ingestion, stratified splits and a synthetic generator."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import LabelError, ParameterError, ParseError, SchemaError, StratificationError

DEFAULT_EMOTIONS = ("anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise")
DEFAULT_INTENTS = ("relaxing", "learning", "exploring_creativity")
MODALITIES = ("visual", "audio", "text")


@dataclass
class DatasetManifest:
    emotion_space: list[str] = field(default_factory=lambda: list(DEFAULT_EMOTIONS))
    intent_space: list[str] = field(default_factory=lambda: list(DEFAULT_INTENTS))
    d_v: int = 8
    d_a: int = 8
    d_t: int = 8
    sample_count: int = 0

    def __post_init__(self):
        for name in ("emotion_space", "intent_space"):
            labels = list(getattr(self, name))
            if not labels:
                raise SchemaError(f"manifest {name} is empty")
            if len(set(labels)) != len(labels):
                raise SchemaError(f"manifest {name} has duplicate labels")
            setattr(self, name, labels)
        for name in ("d_v", "d_a", "d_t"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise SchemaError(f"manifest {name} must be a positive integer, got {value!r}")

    def dims(self) -> dict[str, int]:
        return {"visual": self.d_v, "audio": self.d_a, "text": self.d_t}

    def to_dict(self) -> dict:
        return {
            "emotion_space": self.emotion_space,
            "intent_space": self.intent_space,
            "d_v": self.d_v,
            "d_a": self.d_a,
            "d_t": self.d_t,
            "sample_count": self.sample_count,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DatasetManifest":
        try:
            return cls(
                emotion_space=obj.get("emotion_space", list(DEFAULT_EMOTIONS)),
                intent_space=obj.get("intent_space", list(DEFAULT_INTENTS)),
                d_v=obj["d_v"],
                d_a=obj["d_a"],
                d_t=obj["d_t"],
                sample_count=obj.get("sample_count", 0),
            )
        except KeyError as exc:
            raise SchemaError(f"manifest is missing key {exc.args[0]!r}") from None


@dataclass
class MultimodalSample:
    id: str
    visual: np.ndarray
    audio: np.ndarray
    text: np.ndarray
    emotion: str
    intent: str
    positives: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "visual": self.visual.tolist(),
            "audio": self.audio.tolist(),
            "text": self.text.tolist(),
            "emotion": self.emotion,
            "intent": self.intent,
            "positives": list(self.positives),
        }


@dataclass
class ContentItem:
    id: str
    embedding: np.ndarray
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"id": self.id, "embedding": self.embedding.tolist(), "metadata": self.metadata}


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    val_frac: float = 0.15
    test_frac: float = 0.15
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if min(fracs) <= 0 or abs(sum(fracs) - 1.0) > 1e-9:
            raise ParameterError(f"split fractions must be positive and sum to 1, got {fracs}")


# --- serialization ---------------------------------------------------------

def _sequence(value, width: int, where: str) -> np.ndarray:
    if not isinstance(value, list) or not value:
        raise SchemaError(f"{where}: expected a non-empty array of vectors")
    rows = []
    for j, row in enumerate(value):
        if not isinstance(row, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in row):
            raise SchemaError(f"{where}[{j}]: expected an array of numbers")
        if len(row) != width:
            raise SchemaError(f"{where}[{j}]: expected width {width}, got {len(row)}")
        rows.append(row)
    arr = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"{where}: non-finite value")
    return arr


def parse_sample(obj: dict, manifest: DatasetManifest, where: str = "record") -> MultimodalSample:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected a JSON object")
    for key in ("id", "visual", "audio", "text", "emotion", "intent"):
        if key not in obj:
            raise SchemaError(f"{where}: missing field {key!r}")
    dims = manifest.dims()
    seqs = {m: _sequence(obj[m], dims[m], f"{where} field {m!r}") for m in MODALITIES}
    if obj["emotion"] not in manifest.emotion_space:
        raise LabelError(f"{where}: unknown emotion label {obj['emotion']!r}")
    if obj["intent"] not in manifest.intent_space:
        raise LabelError(f"{where}: unknown intent label {obj['intent']!r}")
    positives = obj.get("positives", [])
    if not isinstance(positives, list) or not all(isinstance(p, str) for p in positives):
        raise SchemaError(f"{where} field 'positives': expected an array of strings")
    return MultimodalSample(str(obj["id"]), seqs["visual"], seqs["audio"], seqs["text"],
                            obj["emotion"], obj["intent"], list(positives))


def _read_jsonl(path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc.msg}") from None


def load_dataset(path, manifest: DatasetManifest) -> list[MultimodalSample]:
    """Read a JSON Lines sample file, validating every record against ``manifest``."""
    return [parse_sample(obj, manifest, f"line {lineno}") for lineno, obj in _read_jsonl(path)]


def load_catalog(path, d: int | None = None) -> list[ContentItem]:
    items, seen = [], set()
    for lineno, obj in _read_jsonl(path):
        where = f"catalog line {lineno}"
        if not isinstance(obj, dict) or "id" not in obj or "embedding" not in obj:
            raise SchemaError(f"{where}: expected an object with 'id' and 'embedding'")
        emb = obj["embedding"]
        if not isinstance(emb, list) or not emb or not all(isinstance(x, (int, float)) for x in emb):
            raise SchemaError(f"{where} field 'embedding': expected a non-empty array of numbers")
        arr = np.array(emb, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise SchemaError(f"{where} field 'embedding': non-finite value")
        width = d if d is not None else (len(items[0].embedding) if items else len(arr))
        if len(arr) != width:
            raise SchemaError(f"{where} field 'embedding': expected width {width}, got {len(arr)}")
        if obj["id"] in seen:
            raise SchemaError(f"{where}: duplicate content id {obj['id']!r}")
        seen.add(obj["id"])
        items.append(ContentItem(str(obj["id"]), arr, dict(obj.get("metadata") or {})))
    return items


def load_manifest(path) -> DatasetManifest:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}") from None
    return DatasetManifest.from_dict(obj)


def _dump_line(obj) -> str:
    return json.dumps(obj, separators=(", ", ": ")) + "\n"


def serialize_samples(samples: Sequence[MultimodalSample]) -> str:
    return "".join(_dump_line(s.to_dict()) for s in samples)


def serialize_catalog(items: Sequence[ContentItem]) -> str:
    return "".join(_dump_line(c.to_dict()) for c in items)


def write_dataset(path, samples: Sequence[MultimodalSample]) -> None:
    Path(path).write_text(serialize_samples(samples), encoding="utf-8")


def write_catalog(path, items: Sequence[ContentItem]) -> None:
    Path(path).write_text(serialize_catalog(items), encoding="utf-8")


def write_manifest(path, manifest: DatasetManifest) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8")


# --- splitting -------------------------------------------------------------

def _largest_remainder(total: int, fracs: Sequence[float]) -> list[int]:
    exact = [total * f for f in fracs]
    counts = [math.floor(x + 1e-9) for x in exact]
    order = sorted(range(len(fracs)), key=lambda s: (-(exact[s] - counts[s]), s))
    for s in order[: total - sum(counts)]:
        counts[s] += 1
    return counts


def _allocate(class_sizes: list[int], fracs: Sequence[float]) -> list[list[int]]:
    """Integer class x split table with exact row/column totals.

    Each cell is the floor or ceiling of size*frac. Column totals follow the
    largest-remainder rounding of the grand total. Cells are bumped greedily
    by remainder (ties by class order, then split order); an augmenting-path
    pass finishes any allocation the greedy order leaves open.
    """
    n_split = len(fracs)
    col_target = _largest_remainder(sum(class_sizes), fracs)
    exact = [[n * f for f in fracs] for n in class_sizes]
    table = [[math.floor(x + 1e-9) for x in row] for row in exact]
    frac_part = [[exact[c][s] - table[c][s] for s in range(n_split)] for c in range(len(class_sizes))]
    row_need = [class_sizes[c] - sum(table[c]) for c in range(len(class_sizes))]
    col_need = [col_target[s] - sum(table[c][s] for c in range(len(class_sizes))) for s in range(n_split)]
    bumped = [[False] * n_split for _ in class_sizes]
    cells = sorted(
        ((c, s) for c in range(len(class_sizes)) for s in range(n_split) if frac_part[c][s] > 1e-9),
        key=lambda cs: (-frac_part[cs[0]][cs[1]], cs[0], cs[1]),
    )
    for c, s in cells:
        if row_need[c] > 0 and col_need[s] > 0:
            bumped[c][s] = True
            row_need[c] -= 1
            col_need[s] -= 1

    def augment(start: int) -> bool:
        # BFS over rows; edge row->col if cell can be bumped, col->row if cell already bumped
        parent: dict = {("r", start): None}
        queue = [("r", start)]
        while queue:
            kind, i = queue.pop(0)
            if kind == "r":
                for s in range(n_split):
                    if frac_part[i][s] > 1e-9 and not bumped[i][s] and ("c", s) not in parent:
                        parent[("c", s)] = (kind, i)
                        if col_need[s] > 0:
                            node = ("c", s)
                            while parent[node] is not None:
                                prev = parent[node]
                                if node[0] == "c":
                                    bumped[prev[1]][node[1]] = True
                                else:
                                    bumped[node[1]][prev[1]] = False
                                node = prev
                            row_need[start] -= 1
                            col_need[s] -= 1
                            return True
                        queue.append(("c", s))
            else:
                for c in range(len(class_sizes)):
                    if bumped[c][i] and ("r", c) not in parent:
                        parent[("r", c)] = (kind, i)
                        queue.append(("r", c))
        return False

    for c in range(len(class_sizes)):
        while row_need[c] > 0:
            if not augment(c):
                raise StratificationError("no integer allocation satisfies the split fractions")
    return [[table[c][s] + bumped[c][s] for s in range(n_split)] for c in range(len(class_sizes))]


def split(samples: Sequence[MultimodalSample], spec: SplitSpec,
          emotion_space: Sequence[str] | None = None):
    """Stratified (by emotion) shuffled partition into train/val/test.

    Output lists keep the input order of the samples they contain.
    """
    labels = list(emotion_space) if emotion_space is not None else sorted({s.emotion for s in samples})
    by_class: dict[str, list[int]] = {lab: [] for lab in labels}
    for i, s in enumerate(samples):
        if s.emotion not in by_class:
            raise LabelError(f"sample {s.id!r}: emotion {s.emotion!r} not in label space")
        by_class[s.emotion].append(i)
    empty = [lab for lab, idx in by_class.items() if not idx]
    if empty:
        raise StratificationError(f"no samples for emotion class(es) {empty}")
    fracs = (spec.train_frac, spec.val_frac, spec.test_frac)
    table = _allocate([len(by_class[lab]) for lab in labels], fracs)
    rng = np.random.default_rng(spec.seed)
    where = np.empty(len(samples), dtype=int)
    for lab, counts in zip(labels, table):
        idx = np.array(by_class[lab])[rng.permutation(len(by_class[lab]))]
        bounds = np.cumsum(counts)[:-1]
        for part, chunk in enumerate(np.split(idx, bounds)):
            where[chunk] = part
    return tuple([s for i, s in enumerate(samples) if where[i] == part] for part in range(3))


def batches(samples: Sequence, batch_size: int = 32, seed: int = 0, epoch: int = 0) -> Iterator[list]:
    """Shuffle per (seed, epoch) and yield consecutive batches; the short tail is kept."""
    if batch_size < 1:
        raise ParameterError("batch_size must be at least 1")
    order = np.random.default_rng([seed, epoch]).permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        yield [samples[i] for i in order[start:start + batch_size]]


# --- synthetic data --------------------------------------------------------

def _spread_centers(rng: np.random.Generator, count: int, dim: int, separation: float) -> np.ndarray:
    if separation == 0:
        return np.zeros((count, dim))
    raw = rng.standard_normal((count, dim))
    diff = raw[:, None, :] - raw[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    closest = dist[np.triu_indices(count, 1)].min() if count > 1 else 1.0
    return raw * (separation / closest)


def synthesize(manifest: DatasetManifest, n: int, seed: int = 0, separation: float = 10.0,
               d_content: int = 16, items_per_pair: int = 4, positives_per_sample: int = 3,
               max_len: int = 4, content_noise: float = 0.3):
    """Class-conditional Gaussian samples plus a content catalog.

    Every (emotion, intent) pair gets one cluster center per modality, rescaled
    so the closest two centers sit exactly ``separation`` apart. Sequence
    vectors are the center plus unit Gaussian noise. Catalog items cluster
    around a per-pair content center; a sample's positives are drawn from the
    items nearest its own pair's content center.

    Returns ``(samples, catalog, manifest)`` where the returned manifest carries
    ``sample_count``.
    """
    pairs = list(itertools.product(manifest.emotion_space, manifest.intent_space))
    if n < len(pairs):
        raise ParameterError(f"n={n} is smaller than the {len(pairs)} emotion/intent pairs")
    if separation < 0:
        raise ParameterError("separation must be non-negative")
    if positives_per_sample > items_per_pair:
        raise ParameterError("positives_per_sample cannot exceed items_per_pair")
    rng = np.random.default_rng(seed)
    dims = manifest.dims()
    centers = {m: _spread_centers(rng, len(pairs), dims[m], separation) for m in MODALITIES}

    content_centers = rng.standard_normal((len(pairs), d_content))
    catalog: list[ContentItem] = []
    for p, (emo, intent) in enumerate(pairs):
        for _ in range(items_per_pair):
            emb = content_centers[p] + content_noise * rng.standard_normal(d_content)
            catalog.append(ContentItem(f"c{len(catalog):04d}", emb, {"emotion": emo, "intent": intent}))
    all_emb = np.stack([c.embedding for c in catalog])
    nearest = [
        np.argsort(((all_emb - content_centers[p]) ** 2).sum(1), kind="stable")[:items_per_pair]
        for p in range(len(pairs))
    ]

    assignment = np.arange(n) % len(pairs)
    rng.shuffle(assignment)
    samples = []
    for i, p in enumerate(assignment):
        seqs = {}
        for m in MODALITIES:
            length = int(rng.integers(1, max_len + 1))
            seqs[m] = centers[m][p] + rng.standard_normal((length, dims[m]))
        picks = rng.choice(nearest[p], size=positives_per_sample, replace=False)
        emo, intent = pairs[p]
        samples.append(MultimodalSample(f"s{i:05d}", seqs["visual"], seqs["audio"], seqs["text"],
                                        emo, intent, [catalog[j].id for j in sorted(picks)]))
    out_manifest = DatasetManifest(list(manifest.emotion_space), list(manifest.intent_space),
                                   manifest.d_v, manifest.d_a, manifest.d_t, sample_count=n)
    return samples, catalog, out_manifest
