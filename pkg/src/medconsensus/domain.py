"""Shared domain types.

All types are immutable once constructed and validate their invariants in
``__post_init__`` (or ``__init__``), so anything that exists is well formed.
Each type round-trips through ``to_dict``/``from_dict`` using plain JSON
values with snake_case keys.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .errors import (
    EmptyDistribution,
    NegativeProbability,
    NonFiniteProbability,
    SchemaViolation,
    SpecialtyCountOutOfBounds,
    SumOutOfBand,
)

SUM_TOLERANCE = 1e-9
REPAIR_BAND = (0.9, 1.1)
MIN_SPECIALTIES = 2
MAX_SPECIALTIES = 6


def rank_key(item: tuple[str, float]) -> tuple[float, str]:
    """Sort key: descending probability, then ascending label."""
    label, p = item
    return (-p, label)


class AnswerDistribution(Mapping[str, float]):
    """Normalized probability map over answer labels.

    Insertion order of labels is preserved for display and serialization;
    every ranking operation (``ranked``, ``argmax``) orders by descending
    probability and breaks ties by ascending label.
    """

    __slots__ = ("_probs",)

    def __init__(self, probs: Mapping[str, float] | Iterable[tuple[str, float]]):
        items = list(probs.items()) if isinstance(probs, Mapping) else list(probs)
        if not items:
            raise EmptyDistribution("distribution has no entries")
        clean: dict[str, float] = {}
        for label, p in items:
            if not isinstance(label, str) or not label:
                raise SchemaViolation(f"invalid answer label {label!r}")
            if label in clean:
                raise SchemaViolation(f"duplicate answer label {label!r}")
            p = float(p)
            if not math.isfinite(p):
                raise NonFiniteProbability(f"{label}: {p}")
            if p < 0:
                raise NegativeProbability(f"{label}: {p}")
            clean[label] = p
        total = math.fsum(clean.values())
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise SumOutOfBand(f"probabilities sum to {total!r}, expected 1")
        self._probs = clean

    def __getitem__(self, label: str) -> float:
        return self._probs[label]

    def __iter__(self) -> Iterator[str]:
        return iter(self._probs)

    def __len__(self) -> int:
        return len(self._probs)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, AnswerDistribution):
            return list(self._probs.items()) == list(other._probs.items())
        return NotImplemented

    def __hash__(self) -> int:
        return hash(tuple(self._probs.items()))

    def __repr__(self) -> str:
        inner = ", ".join(f"{k!r}: {v:.6g}" for k, v in self._probs.items())
        return f"AnswerDistribution({{{inner}}})"

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(self._probs.items(), key=rank_key)

    def ranked_labels(self) -> list[str]:
        return [label for label, _ in self.ranked()]

    def argmax(self) -> str:
        return min(self._probs.items(), key=rank_key)[0]

    def to_dict(self) -> dict[str, float]:
        return dict(self._probs)

    @classmethod
    def from_dict(cls, data: Mapping[str, float]) -> AnswerDistribution:
        return cls(data)


def validate_distribution(raw: Mapping[str, float]) -> AnswerDistribution:
    """Check a model-emitted probability map and repair rounding drift.

    Sums inside ``REPAIR_BAND`` are rescaled to one; anything further off is
    treated as a malformed reply and raises :class:`SumOutOfBand`.
    """
    if not raw:
        raise EmptyDistribution("distribution has no entries")
    values: dict[str, float] = {}
    for label, p in raw.items():
        try:
            p = float(p)
        except (TypeError, ValueError) as exc:
            raise SchemaViolation(f"probability for {label!r} is not a number: {p!r}") from exc
        if not math.isfinite(p):
            raise NonFiniteProbability(f"{label}: {p}")
        if p < 0:
            raise NegativeProbability(f"{label}: {p}")
        values[str(label)] = p
    total = math.fsum(values.values())
    lo, hi = REPAIR_BAND
    if not lo <= total <= hi:
        raise SumOutOfBand(f"probabilities sum to {total!r}, outside repair band [{lo}, {hi}]")
    # leave already-normalized input untouched so repair is idempotent
    if abs(total - 1.0) > 1e-12:
        values = {k: v / total for k, v in values.items()}
    return AnswerDistribution(values)


class QueryKind(str, Enum):
    MULTIPLE_CHOICE = "multiple-choice"
    OPEN_DIFFERENTIAL = "open-differential"


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    options: tuple[tuple[str, str], ...] = ()
    kind: QueryKind = QueryKind.MULTIPLE_CHOICE

    def __post_init__(self) -> None:
        opts = self.options
        if isinstance(opts, Mapping):
            opts = tuple(opts.items())
        opts = tuple((str(k), str(v)) for k, v in opts)
        object.__setattr__(self, "options", opts)
        object.__setattr__(self, "kind", QueryKind(self.kind))
        labels = [k for k, _ in opts]
        if any(not k.strip() for k in labels):
            raise SchemaViolation("option labels must be non-empty")
        if len(set(labels)) != len(labels):
            raise SchemaViolation("option labels must be unique")
        if self.kind is QueryKind.MULTIPLE_CHOICE and len(opts) < 2:
            raise SchemaViolation("multiple-choice queries need at least 2 options")
        if self.kind is QueryKind.OPEN_DIFFERENTIAL and opts:
            raise SchemaViolation("open-differential queries take no options")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.options)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "options": dict(self.options),
            "kind": self.kind.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Query:
        options = data.get("options") or {}
        kind = data.get("kind") or (
            QueryKind.MULTIPLE_CHOICE if options else QueryKind.OPEN_DIFFERENTIAL
        )
        return cls(id=str(data["id"]), text=data["text"], options=tuple(options.items()), kind=kind)


_KNOWN_TASK_TYPES = ("diagnosis", "treatment", "basic-science")


@dataclass(frozen=True)
class TaskType:
    """Medical task category; anything outside the known set is kept verbatim."""

    value: str

    DIAGNOSIS = "diagnosis"
    TREATMENT = "treatment"
    BASIC_SCIENCE = "basic-science"

    def __post_init__(self) -> None:
        if not isinstance(self.value, str) or not self.value.strip():
            raise SchemaViolation("task type must be a non-empty string")
        canon = "-".join(self.value.strip().lower().replace("_", " ").split())
        object.__setattr__(self, "value", canon if canon in _KNOWN_TASK_TYPES else self.value.strip())

    @property
    def is_other(self) -> bool:
        return self.value not in _KNOWN_TASK_TYPES

    def __str__(self) -> str:
        return self.value

    def to_dict(self) -> str:
        return self.value

    @classmethod
    def from_dict(cls, value: str) -> TaskType:
        return cls(value)


@dataclass(frozen=True, order=True)
class Specialty:
    name: str

    def __post_init__(self) -> None:
        if not isinstance(self.name, str):
            raise SchemaViolation(f"specialty must be a string, got {self.name!r}")
        canon = " ".join(self.name.split()).lower()
        if not canon:
            raise SchemaViolation("specialty must be non-empty")
        object.__setattr__(self, "name", canon)

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class ExpertResponse:
    specialty: Specialty
    rationale: str
    distribution: AnswerDistribution
    top_answer: str
    second_answer: str | None = None

    def __post_init__(self) -> None:
        if self.top_answer != self.distribution.argmax():
            raise SchemaViolation(
                f"top_answer {self.top_answer!r} is not the argmax {self.distribution.argmax()!r}"
            )
        if self.second_answer is not None:
            if self.second_answer == self.top_answer:
                raise SchemaViolation("second_answer must differ from top_answer")
            if self.second_answer not in self.distribution:
                raise SchemaViolation(f"second_answer {self.second_answer!r} not in distribution")

    @classmethod
    def from_distribution(
        cls,
        specialty: Specialty | str,
        rationale: str,
        distribution: AnswerDistribution,
        second_claim: str | None = None,
    ) -> ExpertResponse:
        """Build a response whose top answer is recomputed from ``distribution``.

        A claimed runner-up is kept when it is legal; otherwise the
        second-ranked label is used.
        """
        if isinstance(specialty, str):
            specialty = Specialty(specialty)
        ranked = distribution.ranked_labels()
        top = ranked[0]
        if second_claim is not None and second_claim in distribution and second_claim != top:
            second = second_claim
        else:
            second = ranked[1] if len(ranked) > 1 else None
        return cls(specialty, rationale, distribution, top, second)

    def to_dict(self) -> dict[str, Any]:
        return {
            "specialty": self.specialty.name,
            "rationale": self.rationale,
            "distribution": self.distribution.to_dict(),
            "top_answer": self.top_answer,
            "second_answer": self.second_answer,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ExpertResponse:
        return cls(
            specialty=Specialty(data["specialty"]),
            rationale=data["rationale"],
            distribution=AnswerDistribution(data["distribution"]),
            top_answer=data["top_answer"],
            second_answer=data.get("second_answer"),
        )


@dataclass(frozen=True)
class TriagePlan:
    task_type: TaskType
    specialties: tuple[Specialty, ...]

    def __post_init__(self) -> None:
        specs = tuple(s if isinstance(s, Specialty) else Specialty(s) for s in self.specialties)
        object.__setattr__(self, "specialties", specs)
        if not isinstance(self.task_type, TaskType):
            object.__setattr__(self, "task_type", TaskType(self.task_type))
        if not MIN_SPECIALTIES <= len(specs) <= MAX_SPECIALTIES:
            raise SpecialtyCountOutOfBounds(
                f"triage chose {len(specs)} specialties; "
                f"expected {MIN_SPECIALTIES}-{MAX_SPECIALTIES}"
            )
        if len(set(specs)) != len(specs):
            raise SchemaViolation("triage plan lists a specialty more than once")

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_type": self.task_type.to_dict(),
            "specialties": [s.name for s in self.specialties],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TriagePlan:
        return cls(TaskType(data["task_type"]), tuple(Specialty(s) for s in data["specialties"]))


@dataclass(frozen=True)
class ExpertWeights:
    weights: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        ws = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "weights", ws)
        if not ws:
            raise SchemaViolation("expert weights must be non-empty")
        if any(not math.isfinite(w) or w <= 0 for w in ws):
            raise SchemaViolation(f"expert weights must be positive: {ws}")
        if abs(math.fsum(ws) - 1.0) > SUM_TOLERANCE:
            raise SchemaViolation(f"expert weights must sum to 1, got {math.fsum(ws)!r}")

    def __len__(self) -> int:
        return len(self.weights)

    def __iter__(self) -> Iterator[float]:
        return iter(self.weights)

    @classmethod
    def uniform(cls, n: int) -> ExpertWeights:
        return cls(tuple([1.0 / n] * n))

    @classmethod
    def normalized(cls, raw: Iterable[float]) -> ExpertWeights:
        raw = [float(w) for w in raw]
        total = math.fsum(raw)
        return cls(tuple(w / total for w in raw))

    def to_dict(self) -> list[float]:
        return list(self.weights)
