import math

import pytest
from hypothesis import given, settings, strategies as st

from medconsensus.aggregation import (
    PROBABILITY_FLOOR,
    CascadeConfig,
    PooledDistribution,
    RankFrequencyTable,
    aggregate,
    align_support,
    cascade_boost,
    cascade_weights,
    rank_frequencies,
    softmax,
    wlop_pool,
)
from medconsensus.domain import AnswerDistribution, ExpertWeights
from medconsensus.errors import LengthMismatch, NegativeBoostScale, SchemaViolation, ZeroProbabilityAfterFloor

from conftest import dist, random_distribution, response
from oracles import boosted_final, geometric_pool


def test_cascade_weights_halve():
    assert cascade_weights() == (1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125)
    assert cascade_weights(1) == (1.0,)
    assert CascadeConfig.with_ranks(3).theta == (1.0, 0.5, 0.25)


def test_cascade_config_validation():
    with pytest.raises(SchemaViolation):
        CascadeConfig(theta=(1.0, 0.4))
    with pytest.raises(NegativeBoostScale):
        CascadeConfig(boost_scale=-0.1)


def test_softmax_is_shift_stable():
    out = softmax({"A": 1000.0, "B": 999.0})
    assert out["A"] == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-15)


def test_two_expert_pool_matches_hand_computation():
    pooled = wlop_pool([dist(A=0.8, B=0.2), dist(A=0.2, B=0.8)], ExpertWeights.uniform(2))
    assert pooled.normalized["A"] == pytest.approx(0.5, abs=1e-15)
    assert pooled.log_scores["A"] == pytest.approx(0.5 * math.log(0.8) + 0.5 * math.log(0.2), abs=1e-15)


def test_pool_against_oracle(rng):
    for _ in range(50):
        labels = list("ABCDEF")[: rng.randint(2, 6)]
        dists = [random_distribution(rng, labels) for _ in range(rng.randint(2, 5))]
        weights = ExpertWeights.normalized(rng.uniform(0.1, 1) for _ in dists)
        got = wlop_pool(dists, weights).normalized
        want = geometric_pool([d.to_dict() for d in dists], list(weights))
        for label in labels:
            assert got[label] == pytest.approx(want[label], abs=1e-9)


def test_pool_errors():
    with pytest.raises(LengthMismatch):
        wlop_pool([dist(A=1.0)], ExpertWeights.uniform(2))
    with pytest.raises(LengthMismatch):
        wlop_pool([dist(A=0.5, B=0.5), dist(A=0.5, C=0.5)], ExpertWeights.uniform(2))
    with pytest.raises(ZeroProbabilityAfterFloor):
        wlop_pool([dist(A=1.0, B=0.0), dist(A=0.5, B=0.5)], ExpertWeights.uniform(2))


def test_align_support_floors_missing_labels():
    a, b = align_support([dist(A=0.6, B=0.4), dist(B=0.5, C=0.5)])
    assert list(a) == ["A", "B", "C"]
    assert a["C"] == pytest.approx(PROBABILITY_FLOOR, rel=1e-6)
    assert b["A"] == pytest.approx(PROBABILITY_FLOOR, rel=1e-6)
    assert math.fsum(a.values()) == pytest.approx(1.0, abs=1e-12)
    # zero entries are floored too, so pooling never sees log(0)
    (z,) = align_support([dist(A=1.0, B=0.0)])
    assert z["B"] > 0


def test_align_support_leaves_aligned_input_alone():
    d = dist(A=0.3, B=0.7)
    assert align_support([d, d])[0] is d


def test_rank_frequencies_counts_positions():
    table = rank_frequencies([
        response("a", A=0.6, B=0.3, C=0.1),
        response("b", B=0.5, A=0.4, C=0.1),
        response("c", A=0.5, C=0.3, B=0.2),
    ])
    assert table.counts == {("A", 1): 2, ("B", 2): 1, ("C", 3): 2, ("B", 1): 1, ("A", 2): 1, ("C", 2): 1, ("B", 3): 1}
    assert table.boost("A", cascade_weights()) == 2.5
    short = rank_frequencies([response("a", A=0.6, B=0.3, C=0.1)], max_rank=1)
    assert short.counts == {("A", 1): 1}
    assert RankFrequencyTable.from_dict(table.to_dict()) == table


def test_cascade_worked_example():
    pooled = PooledDistribution({"A": math.log(0.6), "B": math.log(0.4)}, dist(A=0.6, B=0.4))
    table = RankFrequencyTable({("A", 1): 2, ("B", 1): 1, ("B", 2): 1}, 6)
    out = cascade_boost(pooled, table, CascadeConfig(boost_scale=0.5))
    assert out.boosted_scores == {"A": 1.6, "B": 1.15}
    expected_a = 1 / (1 + math.exp(1.15 - 1.6))
    assert out.final["A"] == pytest.approx(expected_a, abs=1e-12)


def test_cascade_rejects_unknown_labels():
    pooled = PooledDistribution({"A": 0.0, "B": 0.0}, dist(A=0.5, B=0.5))
    with pytest.raises(SchemaViolation):
        cascade_boost(pooled, RankFrequencyTable({("Z", 1): 1}, 6), CascadeConfig())


def test_zero_boost_ignores_rank_table():
    pooled = PooledDistribution({"A": 0.0, "B": 0.0}, dist(A=0.7, B=0.3))
    cfg = CascadeConfig(boost_scale=0.0)
    one = cascade_boost(pooled, RankFrequencyTable({("B", 1): 5}, 6), cfg)
    two = cascade_boost(pooled, RankFrequencyTable({}, 6), cfg)
    assert one == two


def test_aggregate_matches_oracle(rng):
    for _ in range(30):
        labels = list("ABCDEFGH")[: rng.randint(2, 8)]
        responses = [
            response(f"s{i}", **random_distribution(rng, labels)) for i in range(rng.randint(2, 6))
        ]
        weights = ExpertWeights.uniform(len(responses))
        scale = rng.choice([0.0, 0.25, 1.0])
        pooled, boosted = aggregate(responses, weights, CascadeConfig(boost_scale=scale))
        want_pooled = geometric_pool([r.distribution.to_dict() for r in responses], list(weights))
        want_scores, want_final = boosted_final(
            want_pooled, [r.distribution.ranked_labels() for r in responses], scale
        )
        for label in labels:
            assert boosted.boosted_scores[label] == pytest.approx(want_scores[label], abs=1e-9)
            assert boosted.final[label] == pytest.approx(want_final[label], abs=1e-9)


labels_st = st.lists(st.sampled_from("ABCDEFGHIJ"), min_size=2, max_size=10, unique=True)


@st.composite
def panels(draw):
    labels = draw(labels_st)
    n = draw(st.integers(1, 6))
    out = []
    for _ in range(n):
        raw = [draw(st.floats(0.01, 1.0)) for _ in labels]
        total = math.fsum(raw)
        values = [x / total for x in raw]
        values[0] += 1.0 - math.fsum(values)
        out.append(AnswerDistribution(dict(zip(labels, values))))
    return out


@settings(max_examples=200, deadline=None)
@given(panels())
def test_pool_output_is_a_distribution(dists):
    pooled = wlop_pool(dists, ExpertWeights.uniform(len(dists)))
    assert math.fsum(pooled.normalized.values()) == pytest.approx(1.0, abs=1e-12)
    assert all(p > 0 for p in pooled.normalized.values())


@settings(max_examples=200, deadline=None)
@given(panels())
def test_pool_of_identical_inputs_is_identity(dists):
    d = dists[0]
    pooled = wlop_pool([d] * len(dists), ExpertWeights.uniform(len(dists))).normalized
    for label in d:
        assert pooled[label] == pytest.approx(d[label], abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(panels(), st.data())
def test_pool_is_permutation_invariant(dists, data):
    weights = ExpertWeights.normalized(data.draw(st.floats(0.1, 1.0)) for _ in dists)
    order = data.draw(st.permutations(range(len(dists))))
    a = wlop_pool(dists, weights).normalized
    b = wlop_pool([dists[i] for i in order], ExpertWeights([weights.weights[i] for i in order])).normalized
    for label in a:
        assert a[label] == pytest.approx(b[label], abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(panels(), st.sampled_from([0.0, 0.25, 1.0]))
def test_boosting_preserves_a_shared_argmax(dists, scale):
    # make every expert agree on the first label
    top = next(iter(dists[0]))
    agreed = []
    for d in dists:
        raw = d.to_dict()
        best = max(raw.values())
        raw[top] = best + 0.5
        total = math.fsum(raw.values())
        agreed.append(response("x", **{k: v / total for k, v in raw.items()}))
    pooled, boosted = aggregate(agreed, ExpertWeights.uniform(len(agreed)), CascadeConfig(boost_scale=scale))
    assert pooled.normalized.argmax() == top
    assert max(boosted.boosted_scores, key=boosted.boosted_scores.get) == top
    assert boosted.final.argmax() == top
