import asyncio
import json
import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from medconsensus.backends import BackendPool, MockBackend
from medconsensus.domain import AnswerDistribution
from medconsensus.errors import DatasetIoError, ParseAtLine, SubsetTooLarge
from medconsensus.evaluation.calibration import bin_index, calibration_from_pairs, reliability
from medconsensus.evaluation.datasets import DdxCase, McqItem, load_ddx_dataset, load_mcq_dataset, sample_subset
from medconsensus.evaluation.ddx import (
    Judge,
    build_judge_prompt,
    check_rename,
    ddx_metrics,
    judge_standardize,
    score_case,
)
from medconsensus.evaluation.metrics import (
    OTHER_NA,
    EvalRecord,
    accuracy,
    stratified_accuracy,
    top_k_accuracy,
    top_k_curve,
)

from conftest import dist
from handbuilt import BODY_SYSTEM_COUNTS, DDX_CASES, DDX_EXPECTED, DDX_PER_CASE, TOPK_EXPECTED, TOPK_RECORDS

MCQ_LINE = {
    "id": "m1",
    "question": "Best next step?",
    "options": {"A": "x", "B": "y", "C": "z"},
    "answer": "B",
    "metadata": {"body_system": "Nervous"},
}
DDX_LINE = {
    "id": "p1",
    "age": 34,
    "sex": "F",
    "chief_complaint": "headache",
    "initial_evidence": ["Do you have a headache?", "yes"],
    "evidence": [["Is it one-sided?", "yes"], ["Nausea?", "no"]],
    "differential": {"Migraine": 0.6, "Tension Headache": 0.3, "Cluster Headache": 0.1},
}


def write_jsonl(path, rows):
    path.write_text("\n".join(r if isinstance(r, str) else json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    return path


def test_mcq_dataset_round_trip(tmp_path):
    items = load_mcq_dataset(write_jsonl(tmp_path / "d.jsonl", [MCQ_LINE, "", MCQ_LINE | {"id": "m2"}]))
    assert [i.id for i in items] == ["m1", "m2"]
    assert items[0].to_dict() == MCQ_LINE
    assert items[0].to_query().labels == ("A", "B", "C")


@pytest.mark.parametrize(
    "bad, lineno",
    [
        ("{not json", 2),
        (json.dumps({k: v for k, v in MCQ_LINE.items() if k != "answer"}), 2),
        (json.dumps(MCQ_LINE | {"answer": "Q"}), 2),
        (json.dumps(MCQ_LINE | {"options": {"A": "only"}}), 2),
        ("[1, 2]", 2),
    ],
)
def test_mcq_dataset_reports_bad_line(tmp_path, bad, lineno):
    path = write_jsonl(tmp_path / "d.jsonl", [MCQ_LINE, bad])
    with pytest.raises(ParseAtLine) as info:
        load_mcq_dataset(path)
    assert info.value.line == lineno


def test_missing_dataset(tmp_path):
    with pytest.raises(DatasetIoError):
        load_mcq_dataset(tmp_path / "nope.jsonl")


def test_ddx_case_rendering(tmp_path):
    (case,) = load_ddx_dataset(write_jsonl(tmp_path / "c.jsonl", [DDX_LINE]))
    assert case.to_dict() == DDX_LINE
    query = case.to_query()
    assert query.text.startswith("Patient Information:\n")
    assert "Age: 34" in query.text and "Question: Nausea? => Answer: no" in query.text
    assert case.gold_differential.argmax() == "Migraine"
    with pytest.raises(ParseAtLine):
        load_ddx_dataset(write_jsonl(tmp_path / "bad.jsonl", [DDX_LINE | {"differential": {"X": 0.3}}]))


def test_subset_is_seeded_and_prefix_stable():
    items = list(range(100))
    a = sample_subset(items, 20, seed=5)
    assert a == sample_subset(items, 20, seed=5)
    assert a != sample_subset(items, 20, seed=6)
    assert sample_subset(items, 50, seed=5)[:20] == a
    assert sorted(sample_subset(items, 100, seed=5)) == items
    with pytest.raises(SubsetTooLarge):
        sample_subset(items, 101, seed=5)


def test_accuracy_and_empty_inputs():
    assert accuracy([]) == 0.0
    assert top_k_accuracy([], 3) == 0.0
    assert accuracy(TOPK_RECORDS) == 0.4
    with pytest.raises(ValueError):
        top_k_accuracy(TOPK_RECORDS, 0)


def test_top_k_hand_fixture():
    assert top_k_curve(TOPK_RECORDS, 4) == TOPK_EXPECTED


@st.composite
def record_sets(draw):
    labels = draw(st.lists(st.sampled_from("ABCDEFGH"), min_size=2, max_size=8, unique=True))
    records = []
    for i in range(draw(st.integers(1, 15))):
        raw = [draw(st.integers(1, 20)) for _ in labels]
        total = sum(raw)
        probs = [r / total for r in raw]
        probs[0] += 1.0 - math.fsum(probs)
        d = AnswerDistribution(dict(zip(labels, probs)))
        records.append(EvalRecord(str(i), d, d.argmax(), draw(st.sampled_from(labels))))
    return labels, records


@settings(max_examples=200, deadline=None)
@given(record_sets())
def test_top_k_is_monotone_and_saturates(data):
    labels, records = data
    curve = top_k_curve(records, len(labels))
    values = list(curve.values())
    assert all(a <= b for a, b in zip(values, values[1:]))
    assert values[-1] == 1.0
    assert values[0] == accuracy(records)


def test_strata_mirror_category_counts():
    rng = random.Random(3)
    records = []
    for system, count in BODY_SYSTEM_COUNTS.items():
        for i in range(count):
            meta = {} if system is None else {"body_system": system}
            gold = "A" if rng.random() < 0.5 else "B"
            records.append(EvalRecord(f"{system}-{i}", dist(A=0.6, B=0.4), "A", gold, meta))
    strata = stratified_accuracy(records, "body_system")
    assert {k: n for k, (_, n) in strata.items()} == {
        (OTHER_NA if k is None else k): v for k, v in BODY_SYSTEM_COUNTS.items()
    }
    assert list(strata)[-1] == OTHER_NA
    assert sum(n for _, n in strata.values()) == 500


def test_strata_accuracy_values():
    recs = [
        EvalRecord("1", dist(A=0.6, B=0.4), "A", "A", {"task_type": "diagnosis"}),
        EvalRecord("2", dist(A=0.6, B=0.4), "A", "B", {"task_type": "diagnosis"}),
        EvalRecord("3", dist(A=0.6, B=0.4), "A", "A", {"task_type": ""}),
    ]
    assert stratified_accuracy(recs, "task_type") == {"diagnosis": (0.5, 2), OTHER_NA: (1.0, 1)}


def test_calibration_trivial_cases():
    rep = calibration_from_pairs([1.0] * 5, [True] * 5)
    assert rep.ece == 0 and [b.count for b in rep.bins if b.count] == [5]
    assert rep.bins[-1].count == 5
    rep = calibration_from_pairs([0.5] * 4, [True, False, True, False])
    assert rep.ece == 0


def test_calibration_bin_edges():
    assert bin_index(0.0, 10) == 0
    assert bin_index(0.1, 10) == 1
    assert bin_index(0.99, 10) == 9
    assert bin_index(1.0, 10) == 9


def test_calibration_hand_example():
    # bin 9: confidences 0.9, 0.95 with one hit -> |0.5 - 0.925|, weight 2/4
    # bin 3: confidences 0.3, 0.3 with no hits -> |0 - 0.3|, weight 2/4
    rep = calibration_from_pairs([0.9, 0.95, 0.3, 0.3], [True, False, False, False])
    assert rep.ece == pytest.approx(0.5 * 0.425 + 0.5 * 0.3, abs=1e-15)
    assert rep.total == 4


def test_calibration_from_records():
    recs = [EvalRecord("1", dist(A=0.8, B=0.2), "A", "A"), EvalRecord("2", dist(A=0.3, B=0.7), "B", "A")]
    rep = reliability(recs, 10)
    assert rep.ece == pytest.approx(0.5 * 0.2 + 0.5 * 0.7)
    with pytest.raises(ValueError):
        calibration_from_pairs([1.2], [True])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=50))
def test_ece_in_unit_interval(pairs):
    rep = calibration_from_pairs([c for c, _ in pairs], [ok for _, ok in pairs])
    assert 0.0 <= rep.ece <= 1.0
    assert rep.total == len(pairs)


def test_ddx_hand_fixture():
    m = ddx_metrics(DDX_CASES, k_max=10, k=5)
    for score, (p, r, f) in zip(m.per_case, DDX_PER_CASE):
        assert (score.precision, score.recall, score.f1) == pytest.approx((p, r, f), abs=1e-15)
    assert m.precision == pytest.approx(DDX_EXPECTED["precision"], abs=1e-15)
    assert m.recall == pytest.approx(DDX_EXPECTED["recall"], abs=1e-15)
    assert m.f1 == pytest.approx(DDX_EXPECTED["f1"], abs=1e-15)
    assert m.top_k == DDX_EXPECTED["top_k"]


def test_ddx_identity_is_perfect():
    gold = dist(A=0.5, B=0.3, C=0.2)
    assert score_case(gold, gold, 5) == score_case(gold, gold, 3)
    assert score_case(gold, gold, 3).f1 == 1.0
    with pytest.raises(ValueError):
        ddx_metrics([])


GOLD = dist(**{"Myocardial Infarction": 0.5, "Pulmonary Embolism": 0.3, "Aortic Dissection": 0.2})
PRED = dist(**{"Heart Attack": 0.6, "PE": 0.3, "Pericarditis": 0.1})


def test_judge_prompt_carries_both_dictionaries():
    text = build_judge_prompt(GOLD, PRED)
    assert '"Heart Attack": 0.6' in text and '"Aortic Dissection": 0.2' in text


def test_check_rename_accepts_pure_renames():
    reply = {"Myocardial Infarction": 0.6, "Pulmonary Embolism": 0.3, "Pericarditis": 0.1}
    out, reason = check_rename(PRED, reply, GOLD)
    assert reason is None
    assert out.to_dict() == reply
    assert sorted(out.values()) == sorted(PRED.values())


@pytest.mark.parametrize(
    "reply",
    [
        {"Myocardial Infarction": 0.7, "PE": 0.2, "Pericarditis": 0.1},
        {"Heart Attack": 0.6, "PE": 0.3, "Pericarditis": 0.1, "Aortic Dissection": 0.0},
        {"Heart Attack": 0.6, "PE": 0.4},
        {"Heart Attack": 0.6, "PE": 0.3, "Costochondritis": 0.1},
        {"Heart Attack": 0.6, "PE": 0.3, "Pericarditis": "low"},
        {"Myocardial Infarction": 0.59, "Pulmonary Embolism": 0.31, "Pericarditis": 0.1},
    ],
)
def test_check_rename_rejects_anything_else(reply):
    out, reason = check_rename(PRED, reply, GOLD)
    assert out is None and reason


def judge_with(*replies):
    mock = MockBackend()
    for i, r in enumerate(replies):
        mock.script(i, r)
    return Judge(BackendPool({"judge": mock}), "judge"), mock


def test_judge_accepts_first_valid_reply():
    judge, mock = judge_with('{"Myocardial Infarction": 0.6, "PE": 0.3, "Pericarditis": 0.1}')
    res = asyncio.run(judge_standardize(GOLD, PRED, judge))
    assert not res.fallback and res.attempts == 1
    assert res.distribution.argmax() == "Myocardial Infarction"


def test_judge_retries_then_succeeds():
    judge, mock = judge_with("no idea", '{"Myocardial Infarction": 0.6, "PE": 0.3, "Pericarditis": 0.1}')
    res = asyncio.run(judge_standardize(GOLD, PRED, judge))
    assert not res.fallback and res.attempts == 2


def test_judge_falls_back_to_prediction():
    judge, mock = judge_with('{"Heart Attack": 0.9}', '{"Heart Attack": 0.9}')
    res = asyncio.run(judge_standardize(GOLD, PRED, judge))
    assert res.fallback and res.distribution is PRED
    assert "entry count" in res.reason
    assert len(mock.requests) == 2


def test_mcq_item_from_dataset_line_validates_gold():
    with pytest.raises(ValueError):
        McqItem("x", "q", (("A", "a"), ("B", "b")), "C")


def test_ddx_case_without_optional_fields():
    case = DdxCase.from_dict({"id": "x", "differential": {"Flu": 1.0}})
    assert "Age: unknown" in case.render()
