"""Weighted log opinion pooling followed by rank-cascade boosting.

The pipeline turns a panel of expert distributions into one final
distribution in two steps:

1. ``wlop_pool``: weighted sum of log-probabilities per label, then a softmax
   (a weighted geometric mean of the expert distributions).
2. ``cascade_boost``: each label earns ``boost_scale * sum_r f[label, r] *
   theta[r]`` where ``f`` counts how many experts ranked the label at position
   ``r`` and ``theta`` halves at every rank; the boosted scores (pooled
   probability plus boost) are softmaxed again.

Everything here is pure and deterministic.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

from .domain import AnswerDistribution, ExpertResponse, ExpertWeights
from .errors import LengthMismatch, NegativeBoostScale, SchemaViolation, ZeroProbabilityAfterFloor

PROBABILITY_FLOOR = 1e-9
DEFAULT_BOOST_SCALE = 0.25
DEFAULT_MAX_RANK = 6


def cascade_weights(n: int = DEFAULT_MAX_RANK) -> tuple[float, ...]:
    """Rank weights starting at 1.0 and halving at every subsequent rank."""
    theta = [1.0]
    for _ in range(n - 1):
        theta.append(theta[-1] / 2)
    return tuple(theta)


def softmax(scores: Mapping[str, float]) -> dict[str, float]:
    """Max-shifted softmax over a label -> score map, preserving key order."""
    top = max(scores.values())
    exps = {k: math.exp(v - top) for k, v in scores.items()}
    total = math.fsum(exps.values())
    return {k: e / total for k, e in exps.items()}


@dataclass(frozen=True)
class PooledDistribution:
    log_scores: Mapping[str, float]
    normalized: AnswerDistribution

    def to_dict(self) -> dict[str, Any]:
        return {"log_scores": dict(self.log_scores), "normalized": self.normalized.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> PooledDistribution:
        return cls(dict(data["log_scores"]), AnswerDistribution(data["normalized"]))


@dataclass(frozen=True)
class RankFrequencyTable:
    counts: Mapping[tuple[str, int], int]
    max_rank: int

    def boost(self, label: str, theta: Sequence[float]) -> float:
        """Cascade-weighted frequency sum for one label."""
        return math.fsum(
            self.counts.get((label, r), 0) * theta[r - 1]
            for r in range(1, min(self.max_rank, len(theta)) + 1)
        )

    @property
    def labels(self) -> set[str]:
        return {label for label, _ in self.counts}

    def to_dict(self) -> dict[str, Any]:
        rows = sorted(self.counts.items(), key=lambda kv: (kv[0][1], kv[0][0]))
        return {
            "max_rank": self.max_rank,
            "counts": [{"label": k[0], "rank": k[1], "count": v} for k, v in rows],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RankFrequencyTable:
        counts = {(row["label"], int(row["rank"])): int(row["count"]) for row in data["counts"]}
        return cls(counts, int(data["max_rank"]))


@dataclass(frozen=True)
class CascadeConfig:
    theta: tuple[float, ...] = field(default_factory=cascade_weights)
    boost_scale: float = DEFAULT_BOOST_SCALE

    def __post_init__(self) -> None:
        theta = tuple(float(t) for t in self.theta)
        object.__setattr__(self, "theta", theta)
        if not theta or theta[0] != 1.0:
            raise SchemaViolation("cascade weights must start at 1.0")
        if any(b != a / 2 for a, b in zip(theta, theta[1:])):
            raise SchemaViolation("each cascade weight must be half the previous one")
        if not math.isfinite(self.boost_scale) or self.boost_scale < 0:
            raise NegativeBoostScale(f"boost_scale must be >= 0, got {self.boost_scale}")

    @classmethod
    def with_ranks(cls, max_rank: int = DEFAULT_MAX_RANK, boost_scale: float = DEFAULT_BOOST_SCALE) -> CascadeConfig:
        if max_rank < 1:
            raise SchemaViolation("max_rank must be >= 1")
        return cls(cascade_weights(max_rank), boost_scale)

    @property
    def max_rank(self) -> int:
        return len(self.theta)


@dataclass(frozen=True)
class BoostedDistribution:
    boosted_scores: Mapping[str, float]
    final: AnswerDistribution

    def to_dict(self) -> dict[str, Any]:
        return {"boosted_scores": dict(self.boosted_scores), "final": self.final.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> BoostedDistribution:
        return cls(dict(data["boosted_scores"]), AnswerDistribution(data["final"]))


def align_support(
    dists: Sequence[AnswerDistribution], floor: float = PROBABILITY_FLOOR
) -> list[AnswerDistribution]:
    """Put every distribution on the union of labels.

    Missing labels, and present labels below ``floor``, are raised to
    ``floor`` and the distribution is renormalized.  Inputs already covering
    the union with no sub-floor entries are returned unchanged.
    """
    if not dists:
        raise SchemaViolation("align_support needs at least one distribution")
    universe: dict[str, None] = {}
    for d in dists:
        universe.update(dict.fromkeys(d))
    out = []
    for d in dists:
        if len(d) == len(universe) and all(p >= floor for p in d.values()):
            out.append(d)
            continue
        raw = {label: max(d.get(label, 0.0), floor) for label in universe}
        total = math.fsum(raw.values())
        out.append(AnswerDistribution({k: v / total for k, v in raw.items()}))
    return out


def wlop_pool(dists: Sequence[AnswerDistribution], weights: ExpertWeights) -> PooledDistribution:
    if len(dists) != len(weights):
        raise LengthMismatch(f"{len(dists)} distributions but {len(weights)} weights")
    if not dists:
        raise LengthMismatch("no distributions to pool")
    labels = list(dists[0])
    for d in dists[1:]:
        if set(d) != set(labels):
            raise LengthMismatch("distributions must share one support; call align_support first")
    log_scores: dict[str, float] = {}
    for label in labels:
        terms = []
        for d, w in zip(dists, weights):
            p = d[label]
            if p <= 0:
                raise ZeroProbabilityAfterFloor(f"probability of {label!r} is {p}")
            terms.append(w * math.log(p))
        log_scores[label] = math.fsum(terms)
    return PooledDistribution(log_scores, AnswerDistribution(softmax(log_scores)))


def rank_frequencies(responses: Sequence[ExpertResponse], max_rank: int = DEFAULT_MAX_RANK) -> RankFrequencyTable:
    if max_rank < 1:
        raise SchemaViolation("max_rank must be >= 1")
    counts: dict[tuple[str, int], int] = {}
    for resp in responses:
        for rank, label in enumerate(resp.distribution.ranked_labels()[:max_rank], start=1):
            counts[(label, rank)] = counts.get((label, rank), 0) + 1
    return RankFrequencyTable(counts, max_rank)


def cascade_boost(pooled: PooledDistribution, table: RankFrequencyTable, cfg: CascadeConfig) -> BoostedDistribution:
    if cfg.boost_scale < 0:
        raise NegativeBoostScale(f"boost_scale must be >= 0, got {cfg.boost_scale}")
    stray = table.labels - set(pooled.normalized)
    if stray:
        raise SchemaViolation(f"rank table has labels outside the pooled support: {sorted(stray)}")
    scores = {
        label: p + cfg.boost_scale * table.boost(label, cfg.theta)
        for label, p in pooled.normalized.items()
    }
    return BoostedDistribution(scores, AnswerDistribution(softmax(scores)))


def aggregate(
    responses: Sequence[ExpertResponse],
    weights: ExpertWeights,
    cfg: CascadeConfig | None = None,
) -> tuple[PooledDistribution, BoostedDistribution]:
    """Full aggregation: align, pool, count ranks, boost."""
    if not responses:
        raise SchemaViolation("aggregate needs at least one expert response")
    cfg = cfg or CascadeConfig()
    aligned = align_support([r.distribution for r in responses])
    pooled = wlop_pool(aligned, weights)
    table = rank_frequencies(responses, cfg.max_rank)
    return pooled, cascade_boost(pooled, table, cfg)
