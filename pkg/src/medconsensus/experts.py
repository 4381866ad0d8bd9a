"""Expert panel: per-specialty prompting, concurrent fan-out, reply parsing."""

from __future__ import annotations

import asyncio
import logging
import random
from collections.abc import Collection, Mapping, Sequence
from dataclasses import dataclass, field

from .backends import BackendPool, ChatRequest
from .domain import ExpertResponse, Query, QueryKind, Specialty, TaskType, TriagePlan, validate_distribution
from .errors import (
    BackendTimeout,
    ConsensusError,
    EmptyAfterFiltering,
    PanelTooSmall,
    SchemaViolation,
)
from .parsing import first_json_object
from .triage import RoutedExpert, render_options

log = logging.getLogger(__name__)

MIN_SURVIVORS = 2

DDX_INSTRUCTIONS = """\
Produce a differential diagnosis for this patient, giving a probability for each diagnosis.
In "distribution" the keys are diagnosis names and the values are probabilities, each a float between 0 and 1, and the probabilities must add up to exactly 1.
Name each diagnosis the way the ICD-10 classification names it (the condition name, not the code).
When a diagnosis has a common acronym, append the acronym in parentheses after the name."""


def build_expert_prompt(query: Query, specialty: Specialty, task_type: TaskType) -> str:
    lines = [
        f"You are acting as the panel's {specialty.name}, one member of a panel of medical specialists.",
        f"Task type: {task_type.value}",
        "Analyse the task strictly from the perspective of your specialty.",
        "",
        "TASK:",
        query.text,
    ]
    if query.kind is QueryKind.MULTIPLE_CHOICE:
        keys = ", ".join(query.labels)
        lines += [
            "",
            "ANSWER OPTIONS:",
            render_options(query),
            "",
            "Assign a probability to every answer option. The keys of \"distribution\" "
            f"must be exactly these labels and no others: {keys}.",
            "Each probability is a float between 0 and 1 and together they sum to 1.",
        ]
    else:
        lines += ["", DDX_INSTRUCTIONS]
    lines += [
        "",
        "Reply with a single JSON object and nothing else:",
        '{"rationale": "<your clinical reasoning>", '
        '"distribution": {"<answer>": <probability>, ...}, '
        '"top_answer": "<most likely answer>", '
        '"second_answer": "<second most likely answer>"}',
    ]
    return "\n".join(lines)


def _canonical_label(key: str, legal: Collection[str]) -> str | None:
    k = key.strip()
    if k in legal:
        return k
    bare = k.strip("() ").upper()
    for label in legal:
        if label.upper() == bare:
            return label
    return None


def parse_expert_reply(
    text: str,
    legal_labels: Collection[str] | None = None,
    specialty: Specialty | str = "generalist",
) -> ExpertResponse:
    """Parse one expert reply into an :class:`ExpertResponse`.

    With ``legal_labels`` given, keys outside the set are dropped before the
    distribution is validated.  The top answer is always recomputed from the
    distribution, whatever the model claimed.
    """
    obj = first_json_object(text)
    raw = obj.get("distribution")
    if raw is None and legal_labels is None and obj and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj.values()
    ):
        # bare {"diagnosis": probability} dictionary
        raw, obj = obj, {}
    if not isinstance(raw, Mapping):
        raise SchemaViolation("expert reply needs a 'distribution' object")
    if legal_labels is not None:
        kept: dict[str, float] = {}
        for key, p in raw.items():
            label = _canonical_label(str(key), legal_labels)
            if label is None:
                log.debug("dropping out-of-set label %r", key)
                continue
            kept[label] = kept.get(label, 0.0) + _number(p, label)
        if raw and not kept:
            raise EmptyAfterFiltering("no legal answer labels left in expert distribution")
        raw = kept
    else:
        raw = {str(k).strip(): v for k, v in raw.items()}
    dist = validate_distribution(raw)
    rationale = obj.get("rationale", "")
    second = obj.get("second_answer")
    if isinstance(second, str) and legal_labels is not None:
        second = _canonical_label(second, legal_labels)
    return ExpertResponse.from_distribution(
        specialty,
        rationale if isinstance(rationale, str) else str(rationale),
        dist,
        second if isinstance(second, str) else None,
    )


def _number(value: object, label: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaViolation(f"probability for {label!r} is not a number: {value!r}")
    return float(value)


@dataclass(frozen=True)
class PanelPolicy:
    timeout_s: float = 120.0
    retries: int = 1
    backoff_s: float = 0.5
    max_tokens: int = 4096


@dataclass(frozen=True)
class DroppedExpert:
    position: int
    specialty: Specialty
    error: str


@dataclass(frozen=True)
class PanelResult:
    """Surviving responses in panel order plus a record of dropped experts."""

    responses: list[ExpertResponse]
    positions: list[int]
    dropped: list[DroppedExpert] = field(default_factory=list)


async def consult_expert(
    pool: BackendPool,
    expert: RoutedExpert,
    query: Query,
    task_type: TaskType,
    policy: PanelPolicy = PanelPolicy(),
) -> ExpertResponse:
    """Ask one expert, retrying once (by default) on backend or parse failure."""
    request = ChatRequest(
        model_name=expert.config.model_name,
        system_prompt=expert.system_prompt,
        user_prompt=build_expert_prompt(query, expert.specialty, task_type),
        temperature=expert.config.temperature,
        max_tokens=policy.max_tokens,
    )
    legal = query.labels if query.kind is QueryKind.MULTIPLE_CHOICE else None
    attempt = 0
    while True:
        try:
            try:
                reply = await asyncio.wait_for(
                    pool.complete(expert.config.backend_id, request), policy.timeout_s
                )
            except asyncio.TimeoutError:
                raise BackendTimeout(
                    f"{expert.specialty.name} expert timed out after {policy.timeout_s}s"
                ) from None
            return parse_expert_reply(reply, legal, expert.specialty)
        except ConsensusError as exc:
            if attempt >= policy.retries:
                raise
            attempt += 1
            log.warning("expert %s failed (%s); retrying", expert.specialty.name, exc)
            if policy.backoff_s:
                await asyncio.sleep(policy.backoff_s * (1 + random.random()))


async def run_expert_panel(
    query: Query,
    experts: Sequence[RoutedExpert],
    plan: TriagePlan,
    pool: BackendPool,
    policy: PanelPolicy = PanelPolicy(),
) -> PanelResult:
    if len(experts) != len(plan.specialties):
        raise SchemaViolation(f"{len(experts)} expert configs for {len(plan.specialties)} specialties")
    outcomes = await asyncio.gather(
        *(consult_expert(pool, e, query, plan.task_type, policy) for e in experts),
        return_exceptions=True,
    )
    responses, positions, dropped = [], [], []
    last_error: BaseException | None = None
    for i, (expert, outcome) in enumerate(zip(experts, outcomes)):
        if isinstance(outcome, ExpertResponse):
            responses.append(outcome)
            positions.append(i)
        elif isinstance(outcome, ConsensusError):
            dropped.append(DroppedExpert(i, expert.specialty, f"{type(outcome).__name__}: {outcome}"))
            last_error = outcome
        else:
            raise outcome
    if len(responses) < MIN_SURVIVORS:
        raise PanelTooSmall(
            f"only {len(responses)} of {len(experts)} experts answered; need {MIN_SURVIVORS}"
        ) from last_error
    return PanelResult(responses, positions, dropped)
