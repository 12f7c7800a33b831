"""Dot-product ranking over a content catalog and an online implicit-feedback loop."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataio import ContentItem
from .errors import ParameterError, ShapeError
from .fusion import FusedState
from .metrics import RankingJudgment, hit_ratio_at_k
from .ndcore import Tensor


def _vec(x) -> np.ndarray:
    if isinstance(x, FusedState):
        x = x.F
    if isinstance(x, Tensor):
        x = x.data
    return np.asarray(x, dtype=np.float64)


@dataclass
class RankedList:
    entries: list[tuple[str, float]]

    @property
    def ids(self) -> list[str]:
        return [cid for cid, _ in self.entries]

    def to_dict(self) -> dict:
        return {"entries": [{"id": cid, "score": s} for cid, s in self.entries]}


def score(F_u, item: ContentItem) -> float:
    """Emotional congruence <F_u, E_c>."""
    f, e = _vec(F_u), item.embedding
    if f.shape != e.shape:
        raise ShapeError(f"user vector width {f.shape} differs from item {item.id!r} width {e.shape}")
    return float(f @ e)


def rank_top_k(F_u, catalog: Sequence[ContentItem], k: int) -> RankedList:
    """Highest-scoring k items; ties broken by ascending id."""
    if k < 1:
        raise ParameterError(f"k must be positive, got {k}")
    if not catalog:
        raise ParameterError("catalog is empty")
    f = _vec(F_u)
    E = np.stack([c.embedding for c in catalog])
    if E.shape[1] != f.shape[0]:
        raise ShapeError(f"user vector width {f.shape[0]} differs from catalog width {E.shape[1]}")
    scores = E @ f
    order = sorted(range(len(catalog)), key=lambda i: (-scores[i], catalog[i].id))
    return RankedList([(catalog[i].id, float(scores[i])) for i in order[:k]])


@dataclass(frozen=True)
class RewardConfig:
    w_dwell: float = 0.5
    w_replay: float = 0.2
    w_like: float = 0.3
    dwell_saturation: float = 60.0
    replay_saturation: float = 3.0


@dataclass
class FeedbackEvent:
    user_state: FusedState | np.ndarray
    content_id: str
    dwell_time: float = 0.0
    replays: int = 0
    liked: bool = False

    def __post_init__(self):
        if self.dwell_time < 0 or self.replays < 0:
            raise ParameterError("dwell_time and replays must be non-negative")


def reward(event: FeedbackEvent, config: RewardConfig = RewardConfig()) -> float:
    r = (config.w_dwell * min(event.dwell_time / config.dwell_saturation, 1.0)
         + config.w_replay * min(event.replays / config.replay_saturation, 1.0)
         + config.w_like * float(event.liked))
    return min(max(r, 0.0), 1.0)


def _sigmoid(x: float) -> float:
    return float(np.exp(-np.logaddexp(0.0, -x)))


def feedback_update(event: FeedbackEvent, catalog: Sequence[ContentItem], step: float,
                    config: RewardConfig = RewardConfig()) -> list[ContentItem]:
    """One online logistic step E_c += step * (reward - sigmoid(<F_u,E_c>)) * F_u.

    Returns a new list; every item except the consumed one is the same object.
    """
    for i, item in enumerate(catalog):
        if item.id == event.content_id:
            break
    else:
        raise KeyError(f"content id {event.content_id!r} not in catalog")
    f = _vec(event.user_state)
    delta = reward(event, config) - _sigmoid(score(f, item))
    updated = list(catalog)
    updated[i] = ContentItem(item.id, item.embedding + step * delta * f, item.metadata)
    return updated


# --- simulation ------------------------------------------------------------

@dataclass
class SimulationResult:
    favored: str
    trace: list[dict] = field(default_factory=list)
    mean_rank_history: list[float] = field(default_factory=list)
    hr_before: float = 0.0
    hr_after: float = 0.0
    catalog: list[ContentItem] = field(default_factory=list)

    @property
    def mean_rank_before(self) -> float:
        return self.mean_rank_history[0]

    @property
    def mean_rank_after(self) -> float:
        return self.mean_rank_history[-1]

    def summary(self, k: int) -> dict:
        return {
            "favored": self.favored,
            "rounds": len(self.mean_rank_history) - 1,
            "k": k,
            "hr_before": self.hr_before,
            "hr_after": self.hr_after,
            "mean_rank_before": self.mean_rank_before,
            "mean_rank_after": self.mean_rank_after,
        }


TRACE_COLUMNS = ("round", "user_id", "recommended_id", "reward", "rank_of_best_item")


def _full_ranks(f: np.ndarray, catalog: Sequence[ContentItem]) -> dict[str, int]:
    return {cid: r for r, cid in enumerate(rank_top_k(f, catalog, len(catalog)).ids, start=1)}


def _mean_favored_rank(users, catalog, favored_ids) -> float:
    ranks = [_full_ranks(f, catalog)[cid] for _, f in users for cid in favored_ids]
    return float(np.mean(ranks))


def _hr(users, catalog, favored_ids, k) -> float:
    js = [RankingJudgment(rank_top_k(f, catalog, k).ids, set(favored_ids)) for _, f in users]
    return hit_ratio_at_k(js, k)


def simulate_feedback(users: Sequence[tuple[str, np.ndarray]], catalog: Sequence[ContentItem],
                      rounds: int, seed: int = 0, k: int = 10, step: float = 0.05,
                      favor_key: str = "emotion", favored: str | None = None,
                      reward_config: RewardConfig = RewardConfig()) -> SimulationResult:
    """Simulated users consume their top-k; items of one metadata class earn high reward.

    Each round one user is drawn, every recommended item yields a feedback
    event, and ``feedback_update`` is applied immediately. Favored items get
    saturated signals (long dwell, replays, a like); others get short dwell
    only. Without ``favored`` the class with the worst initial mean rank is
    chosen.
    """
    if rounds < 0:
        raise ParameterError("rounds must be non-negative")
    if not users:
        raise ParameterError("no users to simulate")
    users = [(uid, _vec(f)) for uid, f in users]
    catalog = list(catalog)
    classes = sorted({str(c.metadata[favor_key]) for c in catalog if favor_key in c.metadata})
    if not classes:
        raise KeyError(f"no catalog item carries metadata key {favor_key!r}")
    members = {cls: [c.id for c in catalog if str(c.metadata.get(favor_key)) == cls] for cls in classes}
    if favored is None:
        favored = max(classes, key=lambda cls: (_mean_favored_rank(users, catalog, members[cls]), cls))
    elif favored not in members:
        raise KeyError(f"no catalog item has {favor_key}={favored!r}")
    favored_ids = set(members[favored])

    result = SimulationResult(favored)
    result.hr_before = _hr(users, catalog, favored_ids, k)
    result.mean_rank_history.append(_mean_favored_rank(users, catalog, favored_ids))
    rng = np.random.default_rng(seed)
    tau, rho = reward_config.dwell_saturation, reward_config.replay_saturation
    for rnd in range(1, rounds + 1):
        uid, f = users[int(rng.integers(len(users)))]
        ranks = _full_ranks(f, catalog)
        best = min(ranks[cid] for cid in favored_ids)
        for cid in rank_top_k(f, catalog, k).ids:
            if cid in favored_ids:
                event = FeedbackEvent(f, cid, float(rng.uniform(tau, 2 * tau)),
                                      int(rng.integers(int(rho), int(rho) + 3)), True)
            else:
                event = FeedbackEvent(f, cid, float(rng.uniform(0.0, 0.2 * tau)), 0, False)
            r = reward(event, reward_config)
            catalog = feedback_update(event, catalog, step, reward_config)
            result.trace.append({"round": rnd, "user_id": uid, "recommended_id": cid,
                                 "reward": r, "rank_of_best_item": best})
        result.mean_rank_history.append(_mean_favored_rank(users, catalog, favored_ids))
    result.hr_after = _hr(users, catalog, favored_ids, k)
    result.catalog = catalog
    return result


def write_trace(path, trace: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in trace:
            writer.writerow({**row, "reward": repr(row["reward"])})
