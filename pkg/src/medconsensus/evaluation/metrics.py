"""Accuracy metrics over evaluated items."""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

from ..domain import AnswerDistribution

OTHER_NA = "other/NA"


@dataclass(frozen=True)
class EvalRecord:
    item_id: str
    distribution: AnswerDistribution
    final_answer: str
    gold: str
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.final_answer not in self.distribution:
            raise ValueError(f"final answer {self.final_answer!r} not in predicted distribution")

    @property
    def correct(self) -> bool:
        return self.final_answer == self.gold

    @property
    def confidence(self) -> float:
        return self.distribution[self.final_answer]

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "distribution": self.distribution.to_dict(),
            "final_answer": self.final_answer,
            "gold": self.gold,
            "metadata": dict(self.metadata),
        }


def accuracy(records: Sequence[EvalRecord]) -> float:
    """Fraction of records whose final answer is the gold label (0.0 when empty)."""
    if not records:
        return 0.0
    return sum(r.correct for r in records) / len(records)


def top_k_accuracy(records: Sequence[EvalRecord], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not records:
        return 0.0
    hits = sum(r.gold in r.distribution.ranked_labels()[:k] for r in records)
    return hits / len(records)


def top_k_curve(records: Sequence[EvalRecord], k_max: int) -> dict[int, float]:
    return {k: top_k_accuracy(records, k) for k in range(1, k_max + 1)}


def _stratum(value: Any) -> str:
    if value is None or (isinstance(value, str) and not value.strip()):
        return OTHER_NA
    return str(value)


def stratified_accuracy(records: Iterable[EvalRecord], key: str) -> dict[str, tuple[float, int]]:
    """Accuracy per value of ``metadata[key]``; missing values pool under ``other/NA``."""
    groups: dict[str, list[bool]] = {}
    for r in records:
        groups.setdefault(_stratum(r.metadata.get(key)), []).append(r.correct)
    ordered = sorted(groups, key=lambda v: (v == OTHER_NA, v))
    return {v: (sum(groups[v]) / len(groups[v]), len(groups[v])) for v in ordered}
