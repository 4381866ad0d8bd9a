"""Consensus stage and the end-to-end pipeline.

``run_pipeline`` chains triage, routing, the expert panel, aggregation and
the consensus agent.  Errors escaping a stage are tagged with that stage's
name.  If the consensus agent cannot produce a legal answer after one retry,
the pipeline falls back to the argmax of the final distribution and marks the
fallback in the trace.
"""

from __future__ import annotations

import asyncio
import json
import logging
import os
import random
import time
from collections.abc import Collection, Iterator, Mapping, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Awaitable, Callable, TypeVar

from .aggregation import DEFAULT_BOOST_SCALE, DEFAULT_MAX_RANK, CascadeConfig, aggregate, rank_frequencies
from .backends import BackendPool, ChatRequest
from .domain import AnswerDistribution, ExpertResponse, ExpertWeights, Query, QueryKind, Specialty
from .errors import BackendTimeout, ConfigError, ConsensusError, IllegalAnswerLabel, SchemaViolation
from .experts import PanelPolicy, run_expert_panel
from .parsing import first_json_object
from .trace import ConsensusResult, DropRecord, ProvenanceTrace
from .triage import TRIAGE_SYSTEM_PROMPT, ExpertRegistry, build_triage_prompt, parse_triage_reply, render_options, route

log = logging.getLogger(__name__)

T = TypeVar("T")

CONFIG_ENV_VAR = "MEDCONSENSUS_CONFIG"

CONSENSUS_SYSTEM_PROMPT = (
    "You are the attending physician who makes the final determination after "
    "hearing from a panel of specialists. Weigh the strength of each expert's "
    "reasoning as well as the pooled probabilities."
)


def build_consensus_prompt(
    query: Query, responses: Sequence[ExpertResponse], final_dist: AnswerDistribution
) -> str:
    if not responses:
        raise SchemaViolation("consensus prompt needs at least one expert response")
    lines = ["TASK:", query.text]
    if query.kind is QueryKind.MULTIPLE_CHOICE:
        lines += ["", "ANSWER OPTIONS:", render_options(query)]
    lines += ["", "EXPERT PANEL REPORTS:"]
    for i, r in enumerate(responses, start=1):
        lines += [
            "",
            f"--- Expert {i}: {r.specialty.name} ---",
            f"Top answer: {r.top_answer}",
            f"Second answer: {r.second_answer if r.second_answer is not None else 'none'}",
            "Rationale:",
            r.rationale or "(no rationale given)",
        ]
    lines += ["", "AGGREGATED PANEL PROBABILITIES:"]
    lines += [f"{label}: {p:.4f}" for label, p in final_dist.ranked()]
    legal = ", ".join(final_dist.ranked_labels())
    lines += [
        "",
        "Review the experts' reasoning and the aggregated probabilities, resolve any "
        "disagreement, and make the final determination.",
        f"final_answer must be one of: {legal}.",
        "Reply with a single JSON object and nothing else:",
        '{"final_answer": "<answer>", "narrative": "<summary of the decisive reasoning>"}',
    ]
    return "\n".join(lines)


def parse_consensus_reply(text: str, legal_labels: Collection[str]) -> tuple[str, str]:
    obj = first_json_object(text)
    answer = obj.get("final_answer")
    if not isinstance(answer, str):
        raise SchemaViolation("consensus reply needs a string 'final_answer'")
    answer = answer.strip()
    if answer not in legal_labels:
        bare = answer.strip("() ").upper()
        matches = [label for label in legal_labels if label.upper() == bare]
        if not matches:
            raise IllegalAnswerLabel(f"consensus chose {answer!r}, not a legal label")
        answer = matches[0]
    narrative = obj.get("narrative", "")
    return answer, narrative if isinstance(narrative, str) else str(narrative)


@dataclass(frozen=True)
class StageConfig:
    backend_id: str
    model_name: str = ""
    temperature: float = 0.0
    system_prompt: str | None = None

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], what: str) -> StageConfig:
        if not isinstance(data, Mapping) or "backend_id" not in data:
            raise ConfigError(f"{what} stage needs a backend_id")
        return cls(
            backend_id=data["backend_id"],
            model_name=data.get("model_name", ""),
            temperature=float(data.get("temperature", 0.0)),
            system_prompt=data.get("system_prompt"),
        )


@dataclass(frozen=True)
class EngineConfig:
    triage: StageConfig
    consensus: StageConfig
    registry: ExpertRegistry
    backends: Mapping[str, Any] = field(default_factory=dict)
    weights: str | Mapping[str, float] = "uniform"
    boost_scale: float = DEFAULT_BOOST_SCALE
    max_rank: int = DEFAULT_MAX_RANK
    panel: PanelPolicy = PanelPolicy()
    triage_timeout_s: float = 120.0
    consensus_timeout_s: float = 120.0
    base_dir: Path | None = None

    def __post_init__(self) -> None:
        if isinstance(self.weights, str) and self.weights != "uniform":
            raise ConfigError(f"unknown weights mode {self.weights!r}")
        if isinstance(self.weights, Mapping):
            if any(float(w) <= 0 for w in self.weights.values()):
                raise ConfigError("expert weights must be positive")
        # fail early on bad boost settings
        self.cascade

    @property
    def cascade(self) -> CascadeConfig:
        return CascadeConfig.with_ranks(self.max_rank, self.boost_scale)

    def weights_for(self, specialties: Sequence[Specialty]) -> ExpertWeights:
        """Weights for the surviving panel, renormalized to sum to one.

        Explicit per-specialty weights default to 1.0 for specialties the
        config does not mention.
        """
        if self.weights == "uniform":
            return ExpertWeights.uniform(len(specialties))
        table = {Specialty(k): float(v) for k, v in self.weights.items()}
        return ExpertWeights.normalized(table.get(s, 1.0) for s in specialties)

    def build_pool(self) -> BackendPool:
        pool = BackendPool.from_config(self.backends, self.base_dir)
        self.check(pool)
        return pool

    def check(self, pool: BackendPool) -> None:
        self.registry.check_backends(pool)
        for stage in (self.triage, self.consensus):
            pool.get(stage.backend_id)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: Path | None = None) -> EngineConfig:
        try:
            reg = data["registry"]
            if isinstance(reg, str):
                path = Path(reg)
                if base_dir is not None and not path.is_absolute():
                    path = base_dir / path
                registry = ExpertRegistry.load(path)
            else:
                registry = ExpertRegistry.from_dict(reg)
            timeouts = data.get("timeouts", {})
            panel = PanelPolicy(
                timeout_s=float(timeouts.get("expert_s", 120.0)),
                retries=int(data.get("retries", 1)),
                backoff_s=float(data.get("backoff_s", 0.5)),
                max_tokens=int(data.get("max_tokens", 4096)),
            )
            return cls(
                triage=StageConfig.from_dict(data.get("triage"), "triage"),
                consensus=StageConfig.from_dict(data.get("consensus"), "consensus"),
                registry=registry,
                backends=data.get("backends", {}),
                weights=data.get("weights", "uniform"),
                boost_scale=float(data.get("boost_scale", DEFAULT_BOOST_SCALE)),
                max_rank=int(data.get("max_rank", DEFAULT_MAX_RANK)),
                panel=panel,
                triage_timeout_s=float(timeouts.get("triage_s", 120.0)),
                consensus_timeout_s=float(timeouts.get("consensus_s", 120.0)),
                base_dir=base_dir,
            )
        except KeyError as exc:
            raise ConfigError(f"engine config missing {exc.args[0]!r}") from None
        except ConsensusError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid engine config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path | None = None) -> EngineConfig:
        path = path or os.environ.get(CONFIG_ENV_VAR)
        if not path:
            raise ConfigError(f"no config path given and ${CONFIG_ENV_VAR} is unset")
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data, base_dir=path.parent)


@contextmanager
def _stage(name: str, timings: dict[str, float]) -> Iterator[None]:
    start = time.perf_counter()
    try:
        yield
    except ConsensusError as exc:
        if exc.stage is None:
            exc.stage = name
        raise
    finally:
        timings[name] = round((time.perf_counter() - start) * 1000.0, 3)


async def _call_with_retry(
    what: str,
    call: Callable[[], Awaitable[str]],
    parse: Callable[[str], T],
    timeout_s: float,
    retries: int,
    backoff_s: float,
) -> T:
    attempt = 0
    while True:
        try:
            try:
                reply = await asyncio.wait_for(call(), timeout_s)
            except asyncio.TimeoutError:
                raise BackendTimeout(f"{what} timed out after {timeout_s}s") from None
            return parse(reply)
        except ConsensusError as exc:
            if attempt >= retries:
                raise
            attempt += 1
            log.warning("%s failed (%s); retrying", what, exc)
            if backoff_s:
                await asyncio.sleep(backoff_s * (1 + random.random()))


async def run_pipeline(query: Query, config: EngineConfig, pool: BackendPool) -> ConsensusResult:
    timings: dict[str, float] = {}
    policy = config.panel

    with _stage("triage", timings):
        triage_request = ChatRequest(
            model_name=config.triage.model_name,
            system_prompt=config.triage.system_prompt or TRIAGE_SYSTEM_PROMPT,
            user_prompt=build_triage_prompt(query),
            temperature=config.triage.temperature,
            max_tokens=policy.max_tokens,
        )
        plan = await _call_with_retry(
            "triage",
            lambda: pool.complete(config.triage.backend_id, triage_request),
            parse_triage_reply,
            config.triage_timeout_s,
            policy.retries,
            policy.backoff_s,
        )

    with _stage("experts", timings):
        experts = route(plan, config.registry)
        panel = await run_expert_panel(query, experts, plan, pool, policy)

    with _stage("aggregation", timings):
        weights = config.weights_for([r.specialty for r in panel.responses])
        cascade = config.cascade
        pooled, boosted = aggregate(panel.responses, weights, cascade)
        table = rank_frequencies(panel.responses, cascade.max_rank)
        final = boosted.final
        argmax = final.argmax()

    with _stage("consensus", timings):
        consensus_request = ChatRequest(
            model_name=config.consensus.model_name,
            system_prompt=config.consensus.system_prompt or CONSENSUS_SYSTEM_PROMPT,
            user_prompt=build_consensus_prompt(query, panel.responses, final),
            temperature=config.consensus.temperature,
            max_tokens=policy.max_tokens,
        )
        fallback_reason = None
        try:
            answer, narrative = await _call_with_retry(
                "consensus",
                lambda: pool.complete(config.consensus.backend_id, consensus_request),
                lambda text: parse_consensus_reply(text, final),
                config.consensus_timeout_s,
                policy.retries,
                policy.backoff_s,
            )
            consensus_answer: str | None = answer
        except ConsensusError as exc:
            fallback_reason = f"{type(exc).__name__}: {exc}"
            log.warning("consensus agent unavailable (%s); using argmax %s", fallback_reason, argmax)
            answer, consensus_answer = argmax, None
            narrative = (
                f"Consensus agent unavailable; answer {argmax} is the highest-probability "
                f"label in the aggregated panel distribution (p = {final[argmax]:.4f})."
            )

    trace = ProvenanceTrace(
        triage_plan=plan,
        expert_responses=tuple(panel.responses),
        weights=weights,
        cascade=cascade,
        rank_table=table,
        pooled=pooled,
        boosted=boosted,
        argmax_answer=argmax,
        consensus_answer=consensus_answer,
        fallback=fallback_reason is not None,
        fallback_reason=fallback_reason,
        dropped=tuple(DropRecord(d.specialty.name, d.error) for d in panel.dropped),
        timings=timings,
    )
    return ConsensusResult(answer, narrative, final, trace)
