"""Multi-specialist LLM consensus engine with opinion pooling and cascade boosting."""

from .aggregation import (
    BoostedDistribution,
    CascadeConfig,
    PooledDistribution,
    RankFrequencyTable,
    aggregate,
    align_support,
    cascade_boost,
    cascade_weights,
    rank_frequencies,
    wlop_pool,
)
from .backends import BackendPool, ChatRequest, HttpBackend, MockBackend
from .consensus import EngineConfig, build_consensus_prompt, parse_consensus_reply, run_pipeline
from .domain import (
    AnswerDistribution,
    ExpertResponse,
    ExpertWeights,
    Query,
    QueryKind,
    Specialty,
    TaskType,
    TriagePlan,
    validate_distribution,
)
from .experts import PanelPolicy, build_expert_prompt, parse_expert_reply, run_expert_panel
from .trace import ConsensusResult, ProvenanceTrace
from .triage import ExpertConfig, ExpertRegistry, build_triage_prompt, parse_triage_reply, route

__version__ = "0.1.0"

__all__ = [
    "AnswerDistribution",
    "BackendPool",
    "BoostedDistribution",
    "CascadeConfig",
    "ChatRequest",
    "ConsensusResult",
    "EngineConfig",
    "ExpertConfig",
    "ExpertRegistry",
    "ExpertResponse",
    "ExpertWeights",
    "HttpBackend",
    "MockBackend",
    "PanelPolicy",
    "PooledDistribution",
    "ProvenanceTrace",
    "Query",
    "QueryKind",
    "RankFrequencyTable",
    "Specialty",
    "TaskType",
    "TriagePlan",
    "aggregate",
    "align_support",
    "build_consensus_prompt",
    "build_expert_prompt",
    "build_triage_prompt",
    "cascade_boost",
    "cascade_weights",
    "parse_consensus_reply",
    "parse_expert_reply",
    "parse_triage_reply",
    "rank_frequencies",
    "route",
    "run_expert_panel",
    "run_pipeline",
    "validate_distribution",
    "wlop_pool",
]
