"""Provenance trace and the final consensus result."""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

from .aggregation import BoostedDistribution, CascadeConfig, PooledDistribution, RankFrequencyTable, aggregate
from .domain import AnswerDistribution, ExpertResponse, ExpertWeights, Specialty, TriagePlan
from .errors import SchemaViolation


@dataclass(frozen=True)
class DropRecord:
    specialty: str
    error: str

    def to_dict(self) -> dict[str, str]:
        return {"specialty": self.specialty, "error": self.error}


@dataclass(frozen=True)
class ProvenanceTrace:
    """Everything needed to audit or replay one pipeline run.

    ``expert_responses`` plus ``dropped`` account for every planned specialty.
    ``timings`` are wall-clock milliseconds per stage and are left out of
    serialized output unless requested, so traces of scripted runs are
    byte-stable.
    """

    triage_plan: TriagePlan
    expert_responses: tuple[ExpertResponse, ...]
    weights: ExpertWeights
    cascade: CascadeConfig
    rank_table: RankFrequencyTable
    pooled: PooledDistribution
    boosted: BoostedDistribution
    argmax_answer: str
    consensus_answer: str | None
    fallback: bool = False
    fallback_reason: str | None = None
    dropped: tuple[DropRecord, ...] = ()
    elicitation: str = "prompted"
    timings: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        planned = len(self.triage_plan.specialties)
        if len(self.expert_responses) + len(self.dropped) != planned:
            raise SchemaViolation(
                f"trace accounts for {len(self.expert_responses) + len(self.dropped)} "
                f"experts but triage planned {planned}"
            )

    def replay(self) -> BoostedDistribution:
        """Re-run aggregation from the recorded expert responses."""
        _, boosted = aggregate(self.expert_responses, self.weights, self.cascade)
        return boosted

    def to_dict(self, include_timings: bool = False) -> dict[str, Any]:
        out: dict[str, Any] = {
            "triage_plan": self.triage_plan.to_dict(),
            "expert_responses": [r.to_dict() for r in self.expert_responses],
            "dropped": [d.to_dict() for d in self.dropped],
            "elicitation": self.elicitation,
            "aggregation": {
                "weights": self.weights.to_dict(),
                "boost_scale": self.cascade.boost_scale,
                "theta": list(self.cascade.theta),
            },
            "rank_frequencies": self.rank_table.to_dict(),
            "pooled": self.pooled.to_dict(),
            "boosted": self.boosted.to_dict(),
            "argmax_answer": self.argmax_answer,
            "consensus_answer": self.consensus_answer,
            "fallback": self.fallback,
            "fallback_reason": self.fallback_reason,
        }
        if include_timings:
            out["timings"] = dict(self.timings)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ProvenanceTrace:
        agg = data["aggregation"]
        return cls(
            triage_plan=TriagePlan.from_dict(data["triage_plan"]),
            expert_responses=tuple(ExpertResponse.from_dict(r) for r in data["expert_responses"]),
            weights=ExpertWeights(tuple(agg["weights"])),
            cascade=CascadeConfig(tuple(agg["theta"]), agg["boost_scale"]),
            rank_table=RankFrequencyTable.from_dict(data["rank_frequencies"]),
            pooled=PooledDistribution.from_dict(data["pooled"]),
            boosted=BoostedDistribution.from_dict(data["boosted"]),
            argmax_answer=data["argmax_answer"],
            consensus_answer=data.get("consensus_answer"),
            fallback=bool(data.get("fallback", False)),
            fallback_reason=data.get("fallback_reason"),
            dropped=tuple(DropRecord(d["specialty"], d["error"]) for d in data.get("dropped", [])),
            elicitation=data.get("elicitation", "prompted"),
            timings=dict(data.get("timings", {})),
        )


@dataclass(frozen=True)
class ConsensusResult:
    final_answer: str
    narrative: str
    final_distribution: AnswerDistribution
    trace: ProvenanceTrace

    def __post_init__(self) -> None:
        if self.final_answer not in self.final_distribution:
            raise SchemaViolation(f"final answer {self.final_answer!r} not in final distribution")

    @property
    def specialties(self) -> list[Specialty]:
        return [r.specialty for r in self.trace.expert_responses]

    def to_dict(self, include_trace: bool = True, include_timings: bool = False) -> dict[str, Any]:
        out: dict[str, Any] = {
            "final_answer": self.final_answer,
            "narrative": self.narrative,
            "final_distribution": self.final_distribution.to_dict(),
        }
        if include_trace:
            out["trace"] = self.trace.to_dict(include_timings=include_timings)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ConsensusResult:
        return cls(
            final_answer=data["final_answer"],
            narrative=data["narrative"],
            final_distribution=AnswerDistribution(data["final_distribution"]),
            trace=ProvenanceTrace.from_dict(data["trace"]),
        )


def dumps(obj: Any) -> str:
    """Canonical JSON rendering used for traces, fixtures and reports."""
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"
