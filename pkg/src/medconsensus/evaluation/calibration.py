"""Reliability binning and expected calibration error."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

from .metrics import EvalRecord

DEFAULT_BINS = 10


@dataclass(frozen=True)
class CalibrationBin:
    lower: float
    upper: float
    count: int
    mean_confidence: float | None
    accuracy: float | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "count": self.count,
            "mean_confidence": self.mean_confidence,
            "accuracy": self.accuracy,
        }


@dataclass(frozen=True)
class CalibrationReport:
    bins: tuple[CalibrationBin, ...]
    ece: float

    @property
    def total(self) -> int:
        return sum(b.count for b in self.bins)

    def to_dict(self) -> dict[str, Any]:
        return {"ece": self.ece, "bins": [b.to_dict() for b in self.bins]}


def bin_index(confidence: float, n_bins: int) -> int:
    """Equal-width bins ``[i/n, (i+1)/n)``; the last bin also takes 1.0."""
    return min(int(confidence * n_bins), n_bins - 1)


def calibration_from_pairs(
    confidences: Sequence[float], correct: Sequence[bool], n_bins: int = DEFAULT_BINS
) -> CalibrationReport:
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    if len(confidences) != len(correct):
        raise ValueError("confidences and outcomes differ in length")
    conf_by_bin = [[] for _ in range(n_bins)]
    hits_by_bin = [[] for _ in range(n_bins)]
    for c, ok in zip(confidences, correct):
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"confidence {c} outside [0, 1]")
        i = bin_index(c, n_bins)
        conf_by_bin[i].append(c)
        hits_by_bin[i].append(1.0 if ok else 0.0)
    n = len(confidences)
    bins = []
    gaps = []
    for i in range(n_bins):
        count = len(conf_by_bin[i])
        if count:
            mean_c = math.fsum(conf_by_bin[i]) / count
            acc = math.fsum(hits_by_bin[i]) / count
            gaps.append(count / n * abs(acc - mean_c))
        else:
            mean_c = acc = None
        bins.append(CalibrationBin(i / n_bins, (i + 1) / n_bins, count, mean_c, acc))
    return CalibrationReport(tuple(bins), math.fsum(gaps))


def reliability(records: Sequence[EvalRecord], n_bins: int = DEFAULT_BINS) -> CalibrationReport:
    """Calibration of the chosen answer's probability against correctness."""
    return calibration_from_pairs(
        [r.confidence for r in records], [r.correct for r in records], n_bins
    )
