"""Central finite-difference check of every model parameter's gradient."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndcore as nd
from .dataio import ContentItem, DatasetManifest, MultimodalSample
from .heads import LossWeights
from .model import MmeiModel, forward_batch

# central differences at eps=1e-6 on an O(1) loss carry ~1e-9 roundoff, so
# gradients smaller than this are compared absolutely
DENOM_FLOOR = 1e-3


@dataclass
class ParamCheck:
    name: str
    entries: int
    max_rel_error: float


@dataclass
class GradCheckResult:
    seed: int
    tol: float
    params: list[ParamCheck] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max(p.max_rel_error for p in self.params)

    @property
    def passed(self) -> bool:
        return all(p.max_rel_error < self.tol for p in self.params)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), DENOM_FLOOR)
    return np.abs(analytic - numeric) / denom


def build_problem(seed: int, d: int = 8, lengths=(1, 2, 5), n_items: int = 4, dropout_p: float = 0.2):
    """Small random model plus one sample whose three sequences use ``lengths`` in a seeded order."""
    rng = np.random.default_rng(seed)
    manifest = DatasetManifest(d_v=3, d_a=4, d_t=5)
    catalog = [ContentItem(f"c{i}", rng.standard_normal(d)) for i in range(n_items)]
    model = MmeiModel.initialize(manifest, catalog, d, n_layers=1, seed=seed)
    # break symmetry in the biases and the fusion scorer so no gradient is trivially tiny
    for name in ("heads.b_e", "heads.b_i", "fusion.alpha_scorer"):
        model.params[name] = rng.standard_normal(model.params[name].shape)
    lens = rng.permutation(list(lengths))
    seqs = [rng.standard_normal((int(n), w)) for n, w in zip(lens, (3, 4, 5))]
    sample = MultimodalSample("g0", *seqs, emotion=manifest.emotion_space[int(rng.integers(7))],
                              intent=manifest.intent_space[int(rng.integers(3))], positives=["c0"])
    mask_seed = int(rng.integers(2**31))

    def loss(tape: nd.Tape | None = None):
        tensors = model.tensors(tape)
        out = forward_batch(model, tensors, [sample], [(0, 0, 1)], LossWeights(1.0, 1.0),
                            dropout_p, True, np.random.default_rng(mask_seed))
        return out.total, tensors

    return model, loss


def check_gradients(seed: int, d: int = 8, lengths=(1, 2, 5), eps: float = 1e-6,
                    tol: float = 1e-5) -> GradCheckResult:
    model, loss = build_problem(seed, d, lengths)
    tape = nd.Tape()
    total, tensors = loss(tape)
    grads = nd.backward(total)
    result = GradCheckResult(seed, tol)
    for name, t in tensors.items():
        analytic = grads[t.node_id].data
        theta = model.params[name]
        numeric = np.zeros_like(theta)
        flat = theta.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss()[0].item()
            flat[i] = orig - eps
            down = loss()[0].item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * eps)
        result.params.append(ParamCheck(name, theta.size, float(relative_error(analytic, numeric).max())))
    return result
