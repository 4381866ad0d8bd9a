from __future__ import annotations

import random
from pathlib import Path

import pytest

from medconsensus.domain import AnswerDistribution, ExpertResponse

FIXTURES = Path(__file__).parent / "fixtures"
DVT_PANEL = FIXTURES / "dvt_panel"


def dist(**probs: float) -> AnswerDistribution:
    return AnswerDistribution(probs)


def response(specialty: str, **probs: float) -> ExpertResponse:
    return ExpertResponse.from_distribution(specialty, "", AnswerDistribution(probs))


def random_distribution(rng: random.Random, labels: list[str]) -> AnswerDistribution:
    raw = [rng.uniform(0.01, 1.0) for _ in labels]
    total = sum(raw)
    values = [x / total for x in raw]
    # push rounding residue into the first entry so the sum is 1 within 1e-15
    values[0] += 1.0 - sum(values)
    return AnswerDistribution(dict(zip(labels, values)))


@pytest.fixture
def rng() -> random.Random:
    return random.Random(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
