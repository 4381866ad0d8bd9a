"""JSONL dataset loaders and seeded subsetting.

MCQ line::

    {"id": "q1", "question": "...", "options": {"A": "...", "B": "..."},
     "answer": "B", "metadata": {"task_type": "treatment", "body_system": "..."}}

DDx line::

    {"id": "p1", "age": 55, "sex": "F", "chief_complaint": "Anemia",
     "initial_evidence": ["question", "answer"],            # optional
     "evidence": [["question", "answer"], ...],
     "differential": {"Anemia": 0.4, "...": 0.6}}
"""

from __future__ import annotations

import json
import random
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, TypeVar

from ..domain import AnswerDistribution, Query, QueryKind, validate_distribution
from ..errors import ConsensusError, DatasetIoError, ParseAtLine, SubsetTooLarge

T = TypeVar("T")


@dataclass(frozen=True)
class McqItem:
    id: str
    question: str
    options: tuple[tuple[str, str], ...]
    gold_label: str
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.gold_label not in dict(self.options):
            raise ValueError(f"gold label {self.gold_label!r} is not one of the options")

    def to_query(self) -> Query:
        return Query(self.id, self.question, self.options, QueryKind.MULTIPLE_CHOICE)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> McqItem:
        options = data["options"]
        if not isinstance(options, Mapping) or len(options) < 2:
            raise ValueError("'options' must map at least two labels to text")
        return cls(
            id=str(data["id"]),
            question=str(data["question"]),
            options=tuple((str(k), str(v)) for k, v in options.items()),
            gold_label=str(data["answer"]),
            metadata=dict(data.get("metadata") or {}),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "question": self.question,
            "options": dict(self.options),
            "answer": self.gold_label,
            "metadata": dict(self.metadata),
        }


@dataclass(frozen=True)
class DdxCase:
    id: str
    age: int | None
    sex: str | None
    chief_complaint: str
    evidence: tuple[tuple[str, str], ...]
    gold_differential: AnswerDistribution
    initial_evidence: tuple[str, str] | None = None

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> DdxCase:
        evidence = tuple((str(q), str(a)) for q, a in data.get("evidence", []))
        initial = data.get("initial_evidence")
        return cls(
            id=str(data["id"]),
            age=data.get("age"),
            sex=data.get("sex"),
            chief_complaint=str(data.get("chief_complaint", "")),
            evidence=evidence,
            gold_differential=validate_distribution(data["differential"]),
            initial_evidence=(str(initial[0]), str(initial[1])) if initial else None,
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "age": self.age,
            "sex": self.sex,
            "chief_complaint": self.chief_complaint,
        }
        if self.initial_evidence:
            out["initial_evidence"] = list(self.initial_evidence)
        out["evidence"] = [list(e) for e in self.evidence]
        out["differential"] = self.gold_differential.to_dict()
        return out

    def render(self) -> str:
        """Patient case in the standard presentation layout."""
        lines = [
            "GENERAL CHARACTERISTICS",
            f"Patient ID: {self.id}",
            f"Age: {self.age if self.age is not None else 'unknown'}",
            f"Sex: {self.sex or 'unknown'}",
            f"Initial Presentation (chief complaint): {self.chief_complaint}",
        ]
        if self.initial_evidence:
            q, a = self.initial_evidence
            lines += ["", "INITIAL EVIDENCE", f"Question: {q} => Answer: {a}"]
        lines += ["", "ALL EVIDENCES"]
        lines += [f"Question: {q} => Answer: {a}" for q, a in self.evidence]
        return "\n".join(lines)

    def to_query(self) -> Query:
        return Query(
            self.id, "Patient Information:\n" + self.render(), (), QueryKind.OPEN_DIFFERENTIAL
        )


def _load_jsonl(path: str | Path, build: Callable[[Mapping[str, Any]], T]) -> list[T]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetIoError(f"cannot read dataset {path}: {exc}") from exc
    items = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
            if not isinstance(data, dict):
                raise ValueError("line is not a JSON object")
            items.append(build(data))
        except json.JSONDecodeError as exc:
            raise ParseAtLine(lineno, f"invalid JSON: {exc.msg}") from exc
        except KeyError as exc:
            raise ParseAtLine(lineno, f"missing field {exc.args[0]!r}") from exc
        except (ValueError, TypeError, ConsensusError) as exc:
            raise ParseAtLine(lineno, str(exc)) from exc
    return items


def load_mcq_dataset(path: str | Path) -> list[McqItem]:
    return _load_jsonl(path, McqItem.from_dict)


def load_ddx_dataset(path: str | Path) -> list[DdxCase]:
    return _load_jsonl(path, DdxCase.from_dict)


def sample_subset(items: Sequence[T], n: int, seed: int) -> list[T]:
    """First ``n`` items of a seeded shuffle.

    The shuffle is CPython's ``random.Random(seed).shuffle`` (Mersenne Twister
    with the version-2 integer seeding that has been stable since Python 3.2),
    so the same seed always yields the same order, and a smaller ``n`` is a
    prefix of a larger one.
    """
    if n < 0 or n > len(items):
        raise SubsetTooLarge(f"cannot take {n} items from {len(items)}")
    order = list(items)
    random.Random(seed).shuffle(order)
    return order[:n]
