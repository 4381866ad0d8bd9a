"""Differential-diagnosis scoring: judge standardization and set metrics.

The judge model is asked to rename predicted diagnoses to their ground-truth
equivalents.  Its reply is never trusted: :func:`check_rename` accepts it only
if it is a pure key renaming of the prediction (same entry count, untouched
probabilities, new names drawn from the ground truth).  Anything else gets
one retry and then falls back to the unmodified prediction.
"""

from __future__ import annotations

import asyncio
import json
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

from ..backends import BackendPool, ChatRequest
from ..domain import AnswerDistribution
from ..errors import BackendTimeout, ConsensusError
from ..parsing import first_json_object

log = logging.getLogger(__name__)

DEFAULT_METRIC_K = 5
VALUE_TOLERANCE = 1e-9

JUDGE_SYSTEM_PROMPT = (
    "You standardize diagnosis names so that a student's differential can be "
    "compared with a reference differential. You only ever rename entries."
)

JUDGE_INSTRUCTIONS = """\
You receive two dictionaries mapping diagnosis names to probabilities:
1. REFERENCE: the ground-truth differential diagnosis.
2. STUDENT: the differential diagnosis to standardize.

Rules:
- Rename a student diagnosis only when it clearly names the same condition as a reference diagnosis, e.g. "Heart Attack" -> "Myocardial Infarction", "MI" -> "Myocardial Infarction", "Pulmonary Embolus" -> "Pulmonary Embolism".
- Never merge distinct conditions ("Tension Headache" is not "Cluster Headache", "Migraine" is not "Cluster Headache").
- Never rename to a broader or narrower category ("Iron Deficiency Anemia" stays as is unless the reference lists exactly that condition).
- When in doubt, keep the student's name.
- Keep every student entry and keep every probability value exactly as given.

Return only the standardized STUDENT dictionary as a single JSON object, with no other text."""


def build_judge_prompt(gold: AnswerDistribution, predicted: AnswerDistribution) -> str:
    return "\n".join([
        JUDGE_INSTRUCTIONS,
        "",
        "REFERENCE:",
        json.dumps(gold.to_dict(), ensure_ascii=False),
        "",
        "STUDENT:",
        json.dumps(predicted.to_dict(), ensure_ascii=False),
    ])


def check_rename(
    predicted: AnswerDistribution, candidate: Mapping[str, Any], gold: AnswerDistribution
) -> tuple[AnswerDistribution | None, str | None]:
    """Validate a judge reply; return ``(standardized, None)`` or ``(None, reason)``.

    The standardized distribution reuses the prediction's own probability
    values, so an accepted reply never perturbs them even by rounding.
    """
    cand: dict[str, float] = {}
    for k, v in candidate.items():
        if not isinstance(k, str) or isinstance(v, bool) or not isinstance(v, (int, float)):
            return None, f"entry {k!r}: {v!r} is not a name/probability pair"
        cand[k.strip()] = float(v)
    if len(cand) != len(predicted):
        return None, f"entry count changed from {len(predicted)} to {len(cand)}"
    for k in cand.keys() & predicted.keys():
        if abs(cand[k] - predicted[k]) > VALUE_TOLERANCE:
            return None, f"probability of {k!r} changed"
    sources = [k for k in predicted if k not in cand]
    targets = [k for k in cand if k not in predicted]
    stray = [t for t in targets if t not in gold]
    if stray:
        return None, f"new names not in ground truth: {stray}"
    src_sorted = sorted(sources, key=lambda k: predicted[k])
    tgt_sorted = sorted(targets, key=lambda k: cand[k])
    for s, t in zip(src_sorted, tgt_sorted):
        if abs(predicted[s] - cand[t]) > VALUE_TOLERANCE:
            return None, "renamed entries do not carry the original probabilities"
    renames = dict(zip(src_sorted, tgt_sorted))
    return AnswerDistribution([(renames.get(k, k), p) for k, p in predicted.items()]), None


@dataclass
class Judge:
    pool: BackendPool
    backend_id: str
    model_name: str = ""
    temperature: float = 0.0
    retries: int = 1
    timeout_s: float = 120.0
    max_tokens: int = 2048


@dataclass(frozen=True)
class StandardizeResult:
    distribution: AnswerDistribution
    fallback: bool = False
    reason: str | None = None
    attempts: int = 0


async def judge_standardize(
    gold: AnswerDistribution, predicted: AnswerDistribution, judge: Judge
) -> StandardizeResult:
    request = ChatRequest(
        model_name=judge.model_name,
        system_prompt=JUDGE_SYSTEM_PROMPT,
        user_prompt=build_judge_prompt(gold, predicted),
        temperature=judge.temperature,
        max_tokens=judge.max_tokens,
    )
    reason = None
    for attempt in range(1, judge.retries + 2):
        try:
            try:
                reply = await asyncio.wait_for(judge.pool.complete(judge.backend_id, request), judge.timeout_s)
            except asyncio.TimeoutError:
                raise BackendTimeout(f"judge timed out after {judge.timeout_s}s") from None
            standardized, reason = check_rename(predicted, first_json_object(reply), gold)
        except ConsensusError as exc:
            standardized, reason = None, f"{type(exc).__name__}: {exc}"
        if standardized is not None:
            return StandardizeResult(standardized, False, None, attempt)
        log.info("judge reply rejected (attempt %d): %s", attempt, reason)
    return StandardizeResult(predicted, True, reason, judge.retries + 1)


@dataclass(frozen=True)
class CaseScore:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class DdxMetrics:
    k: int
    precision: float
    recall: float
    f1: float
    top_k: Mapping[int, float]
    per_case: tuple[CaseScore, ...] = field(default=())

    def to_dict(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "top_k": {str(k): v for k, v in self.top_k.items()},
        }


def score_case(gold: AnswerDistribution, predicted: AnswerDistribution, k: int) -> CaseScore:
    pred = set(predicted.ranked_labels()[:k])
    truth = set(gold)
    hit = len(pred & truth)
    precision = hit / len(pred)
    recall = hit / len(truth)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return CaseScore(precision, recall, f1)


def ddx_metrics(
    cases: Sequence[tuple[AnswerDistribution, AnswerDistribution]],
    k_max: int = 10,
    k: int = DEFAULT_METRIC_K,
) -> DdxMetrics:
    """Macro-averaged set precision/recall/F1 at ``k`` and the top-k curve to ``k_max``.

    Top-k accuracy counts a case when the ground truth's most probable
    diagnosis is among the ``k`` most probable predictions.
    """
    if not cases:
        raise ValueError("ddx_metrics needs at least one case")
    if k < 1 or k_max < 1:
        raise ValueError("k and k_max must be >= 1")
    scores = tuple(score_case(g, p, k) for g, p in cases)
    n = len(cases)
    curve = {}
    for kk in range(1, k_max + 1):
        curve[kk] = sum(g.argmax() in p.ranked_labels()[:kk] for g, p in cases) / n
    return DdxMetrics(
        k=k,
        precision=math.fsum(s.precision for s in scores) / n,
        recall=math.fsum(s.recall for s in scores) / n,
        f1=math.fsum(s.f1 for s in scores) / n,
        top_k=curve,
        per_case=scores,
    )
