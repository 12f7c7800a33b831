import json

import numpy as np
import pytest

from mmei.dataio import (DatasetManifest, MultimodalSample, SplitSpec, batches, load_catalog, load_dataset,
                         serialize_samples, split, synthesize, write_catalog, write_dataset)
from mmei.errors import LabelError, ParameterError, ParseError, SchemaError, StratificationError


@pytest.fixture
def manifest():
    return DatasetManifest(d_v=3, d_a=2, d_t=4)


def record(manifest, **over):
    rec = {
        "id": "u1",
        "visual": [[0.5] * manifest.d_v, [1.0] * manifest.d_v],
        "audio": [[0.25] * manifest.d_a],
        "text": [[1.5] * manifest.d_t] * 3,
        "emotion": "joy",
        "intent": "learning",
        "positives": ["c1", "c2"],
    }
    rec.update(over)
    return rec


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


class TestManifest:
    def test_defaults(self):
        m = DatasetManifest()
        assert len(m.emotion_space) == 7 and m.emotion_space[3] == "joy"
        assert m.intent_space == ["relaxing", "learning", "exploring_creativity"]

    @pytest.mark.parametrize("kw", [{"emotion_space": []}, {"intent_space": ["a", "a"]}, {"d_v": 0}])
    def test_invalid(self, kw):
        with pytest.raises(SchemaError):
            DatasetManifest(**kw)


class TestLoad:
    def test_empty_file(self, tmp_path, manifest):
        assert load_dataset(write_lines(tmp_path / "d.jsonl", []), manifest) == []

    def test_single_line_roundtrip(self, tmp_path, manifest):
        rec = record(manifest)
        (s,) = load_dataset(write_lines(tmp_path / "d.jsonl", [json.dumps(rec)]), manifest)
        assert s.to_dict() == rec

    def test_short_visual_row_names_line_and_field(self, tmp_path, manifest):
        bad = record(manifest, visual=[[0.0] * (manifest.d_v - 1)])
        path = write_lines(tmp_path / "d.jsonl", [json.dumps(record(manifest)), json.dumps(bad)])
        with pytest.raises(SchemaError, match=r"line 2.*visual"):
            load_dataset(path, manifest)

    def test_malformed_line(self, tmp_path, manifest):
        path = write_lines(tmp_path / "d.jsonl", [json.dumps(record(manifest)), "{not json"])
        with pytest.raises(ParseError, match="line 2"):
            load_dataset(path, manifest)

    def test_unknown_label(self, tmp_path, manifest):
        path = write_lines(tmp_path / "d.jsonl", [json.dumps(record(manifest, emotion="bliss"))])
        with pytest.raises(LabelError):
            load_dataset(path, manifest)

    def test_empty_sequence_rejected(self, tmp_path, manifest):
        path = write_lines(tmp_path / "d.jsonl", [json.dumps(record(manifest, audio=[]))])
        with pytest.raises(SchemaError):
            load_dataset(path, manifest)

    def test_serialize_load_serialize(self, tmp_path):
        samples, catalog, manifest = synthesize(DatasetManifest(d_v=3, d_a=2, d_t=4), 21, seed=2)
        path = tmp_path / "d.jsonl"
        write_dataset(path, samples)
        again = load_dataset(path, manifest)
        assert serialize_samples(again) == path.read_text()
        for a, b in zip(samples, again):
            np.testing.assert_array_equal(a.visual, b.visual)

    def test_catalog_roundtrip(self, tmp_path):
        _, catalog, _ = synthesize(DatasetManifest(), 21, seed=2, d_content=5)
        write_catalog(tmp_path / "c.jsonl", catalog)
        back = load_catalog(tmp_path / "c.jsonl", 5)
        assert [c.id for c in back] == [c.id for c in catalog]
        np.testing.assert_array_equal(back[7].embedding, catalog[7].embedding)
        with pytest.raises(SchemaError, match="width"):
            load_catalog(tmp_path / "c.jsonl", 6)


def labelled(counts):
    out = []
    for label, n in counts.items():
        out += [MultimodalSample(f"{label}{i}", np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)),
                                 label, "learning") for i in range(n)]
    return out


class TestSplit:
    def test_sizes_100(self):
        samples, _, m = synthesize(DatasetManifest(), 100, seed=0)
        tr, va, te = split(samples, SplitSpec(0.7, 0.15, 0.15, seed=1), m.emotion_space)
        assert (len(tr), len(va), len(te)) == (70, 15, 15)

    def test_single_class_of_ten(self):
        # 7 / 1.5 / 1.5: floors 7/1/1, the spare sample goes to the first tied remainder (val)
        tr, va, te = split(labelled({"joy": 10}), SplitSpec(seed=0), ["joy"])
        assert (len(tr), len(va), len(te)) == (7, 2, 1)

    @pytest.mark.parametrize("seed", range(5))
    def test_partition_and_per_class_bounds(self, seed):
        rng = np.random.default_rng(seed)
        counts = {lab: int(rng.integers(1, 30)) for lab in DatasetManifest().emotion_space}
        samples = labelled(counts)
        fracs = (0.7, 0.15, 0.15)
        parts = split(samples, SplitSpec(*fracs, seed=seed), list(counts))
        ids = [s.id for p in parts for s in p]
        assert len(ids) == len(set(ids)) == len(samples)
        for label, n in counts.items():
            for part, f in zip(parts, fracs):
                assert abs(sum(s.emotion == label for s in part) - n * f) < 1.0 + 1e-9

    def test_determinism(self):
        samples, _, m = synthesize(DatasetManifest(), 63, seed=4)
        a = split(samples, SplitSpec(seed=9), m.emotion_space)
        b = split(samples, SplitSpec(seed=9), m.emotion_space)
        assert [[s.id for s in p] for p in a] == [[s.id for s in p] for p in b]

    def test_empty_class(self):
        with pytest.raises(StratificationError):
            split(labelled({"joy": 5}), SplitSpec(), ["joy", "fear"])

    def test_bad_fractions(self):
        with pytest.raises(ParameterError):
            SplitSpec(0.7, 0.2, 0.2)


class TestBatches:
    def test_sizes(self):
        assert [len(b) for b in batches(list(range(70)), 32, seed=0, epoch=0)] == [32, 32, 6]

    def test_same_epoch_same_order(self):
        assert list(batches(list(range(20)), 8, 3, 1)) == list(batches(list(range(20)), 8, 3, 1))

    def test_epochs_differ(self):
        orders = {tuple(x for b in batches(list(range(10)), 4, 3, e) for x in b) for e in range(5)}
        assert len(orders) > 1


class TestSynthesize:
    def test_too_small(self):
        with pytest.raises(ParameterError):
            synthesize(DatasetManifest(), 20)

    def test_deterministic_bytes(self):
        a = synthesize(DatasetManifest(), 42, seed=3)
        b = synthesize(DatasetManifest(), 42, seed=3)
        assert serialize_samples(a[0]) == serialize_samples(b[0])

    def test_balanced_pairs_and_positives(self):
        samples, catalog, m = synthesize(DatasetManifest(), 42, seed=1)
        pairs = {}
        for s in samples:
            pairs[(s.emotion, s.intent)] = pairs.get((s.emotion, s.intent), 0) + 1
            assert len(s.positives) == 3
            by_id = {c.id: c for c in catalog}
            assert all(by_id[p].metadata == {"emotion": s.emotion, "intent": s.intent} for p in s.positives)
        assert set(pairs.values()) == {2}
        assert m.sample_count == 42

    def test_center_separation(self):
        samples, _, _ = synthesize(DatasetManifest(), 21 * 40, seed=0, separation=10, max_len=1)
        means = {}
        for s in samples:
            means.setdefault((s.emotion, s.intent), []).append(s.visual[0])
        centers = np.array([np.mean(v, axis=0) for v in means.values()])
        dist = np.sqrt(((centers[:, None] - centers[None]) ** 2).sum(-1))
        # 40 unit-noise draws per center: estimate error ~ sqrt(8/40) ~ 0.45 each
        assert dist[np.triu_indices(21, 1)].min() > 10 - 2.0

    def test_zero_separation_identical_centers(self):
        samples, _, _ = synthesize(DatasetManifest(), 21 * 30, seed=0, separation=0, max_len=1)
        assert abs(np.mean([s.visual[0] for s in samples])) < 0.1


def test_linear_probe_separates_classes():
    """Least-squares one-vs-rest probe on mean-pooled modalities (oracle for learnability)."""
    samples, _, m = synthesize(DatasetManifest(), 210, seed=0, separation=10)
    X = np.array([np.concatenate([s.visual.mean(0), s.audio.mean(0), s.text.mean(0), [1.0]]) for s in samples])
    y = np.array([m.emotion_space.index(s.emotion) for s in samples])
    W, *_ = np.linalg.lstsq(X, np.eye(7)[y], rcond=None)
    assert ((X @ W).argmax(1) == y).mean() > 0.95
