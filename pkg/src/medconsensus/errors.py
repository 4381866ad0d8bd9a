"""Exception hierarchy.

Every error raised by the engine derives from :class:`ConsensusError`.  Errors
raised while a pipeline is running carry a ``stage`` tag ("triage",
"experts", "aggregation", "consensus") so operators can tell where a run
broke without parsing messages.
"""

from __future__ import annotations


class ConsensusError(Exception):
    """Base class; ``stage`` is filled in by the pipeline when known."""

    stage: str | None = None

    def __str__(self) -> str:
        msg = super().__str__()
        if self.stage:
            return f"[{self.stage}] {msg}"
        return msg


# --- distributions -----------------------------------------------------------


class DistributionError(ConsensusError, ValueError):
    pass


class EmptyDistribution(DistributionError):
    pass


class NonFiniteProbability(DistributionError):
    pass


class NegativeProbability(DistributionError):
    pass


class SumOutOfBand(DistributionError):
    pass


# --- aggregation -------------------------------------------------------------


class AggregationError(ConsensusError, ValueError):
    pass


class LengthMismatch(AggregationError):
    pass


class ZeroProbabilityAfterFloor(AggregationError):
    pass


class NegativeBoostScale(AggregationError):
    pass


# --- reply parsing -----------------------------------------------------------


class ReplyParseError(ConsensusError, ValueError):
    pass


class NoJsonFound(ReplyParseError):
    pass


class SchemaViolation(ReplyParseError):
    pass


class SpecialtyCountOutOfBounds(SchemaViolation):
    pass


class EmptyAfterFiltering(ReplyParseError):
    pass


class IllegalAnswerLabel(ReplyParseError):
    pass


# --- panel / pipeline --------------------------------------------------------


class PanelTooSmall(ConsensusError):
    pass


class ConfigError(ConsensusError):
    pass


# --- backends ----------------------------------------------------------------


class BackendError(ConsensusError):
    pass


class UnknownBackend(BackendError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return ConsensusError.__str__(self)


class BackendTimeout(BackendError):
    pass


class HttpStatus(BackendError):
    def __init__(self, code: int, body: str = "") -> None:
        super().__init__(f"upstream returned HTTP {code}")
        self.code = code
        self.body = body


class MalformedUpstreamReply(BackendError):
    pass


class MockUnmatched(BackendError):
    pass


# --- evaluation --------------------------------------------------------------


class DatasetError(ConsensusError):
    pass


class DatasetIoError(DatasetError, OSError):
    pass


class ParseAtLine(DatasetError):
    def __init__(self, line: int, reason: str) -> None:
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class SubsetTooLarge(DatasetError, ValueError):
    pass
