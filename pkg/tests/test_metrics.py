import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import binned_ece, pairwise_auroc, summed_ap
from stepconf import metrics
from stepconf.errors import EmptyInputError, SingleClassError, TraceError
from stepconf.metrics import LabeledScores, acc_at, aucpr, auroc, ece, keep_count
from stepconf.trace import Trajectory, graph_from_steps


def _instances(count, seed=0, max_n=60):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n = int(rng.integers(2, max_n))
        # coarse grid forces ties
        s = rng.integers(0, 20, n) / 19 if rng.random() < 0.5 else rng.random(n)
        y = rng.integers(0, 2, n)
        if 0 < y.sum() < n:
            out.append((s.tolist(), y.tolist()))
    return out


def test_auroc_examples():
    assert auroc(([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0])) == 1.0
    assert auroc(([0.5, 0.5], [1, 0])) == 0.5
    with pytest.raises(SingleClassError):
        auroc(([0.1, 0.2], [1, 1]))


def test_aucpr_examples():
    assert aucpr(([0.9, 0.8, 0.1], [1, 1, 0])) == 1.0
    assert aucpr(([0.9, 0.8, 0.7, 0.1], [0, 0, 0, 1])) == pytest.approx(0.25, abs=1e-15)
    with pytest.raises(SingleClassError):
        aucpr(([0.1], [0]))


def test_aucpr_ties_follow_index_order():
    assert aucpr(([0.5, 0.5], [0, 1])) == 0.5
    assert aucpr(([0.5, 0.5], [1, 0])) == 1.0


def test_acc_at_examples():
    assert acc_at(([0.1, 0.9, 0.5, 0.4], [1, 0, 1, 1]), 100) == 0.75
    assert keep_count(10, 80) == 8
    assert keep_count(11, 80) == 9
    assert keep_count(5, 100) == 5
    data = ([1.0] * 8 + [0.0] * 2, [1] * 8 + [0] * 2)
    assert acc_at(data, 80) == 1.0
    with pytest.raises(ValueError):
        keep_count(10, 0)


@settings(max_examples=200)
@given(st.integers(1, 10_000), st.integers(1, 100))
def test_keep_count_is_exact_ceiling(n, c):
    k = keep_count(n, c)
    assert k * 100 >= n * c > (k - 1) * 100


def test_keep_count_fractional_coverage_avoids_float_error():
    # 0.07 * 100 = 7.000000000000001 in floats; the exact ceiling is 7
    assert keep_count(100, 7) == 7
    assert keep_count(1000, 0.7) == 7


def test_ece_examples():
    assert ece(([0.7] * 10, [1] * 7 + [0] * 3)) == pytest.approx(0.0, abs=1e-15)
    assert ece(([1.0] * 4, [0] * 4)) == 1.0
    with pytest.raises(ValueError):
        ece(([0.5], [1]), bins=0)


def test_ece_bin_edges():
    # 0.1 falls in the second bin, 1.0 in the last
    data = ([0.1, 1.0], [1, 1])
    assert ece(data, bins=10) == pytest.approx(binned_ece(*data), abs=1e-15)
    assert ece(([0.0, 0.1], [0, 1]), bins=10) == pytest.approx(0.45, abs=1e-15)


def test_empty_and_mismatched_input():
    with pytest.raises(EmptyInputError):
        LabeledScores((), ())
    with pytest.raises(EmptyInputError):
        acc_at(([0.1, 0.2], [1]), 80)


@pytest.mark.parametrize("seed", range(3))
def test_metric_oracles(seed):
    for s, y in _instances(100, seed):
        assert auroc((s, y)) == pytest.approx(pairwise_auroc(s, y), abs=1e-12)
        assert aucpr((s, y)) == pytest.approx(summed_ap(s, y), abs=1e-12)
        assert ece((s, y)) == pytest.approx(binned_ece(s, y), abs=1e-12)
        assert ece((s, y), bins=7) == pytest.approx(binned_ece(s, y, 7), abs=1e-12)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=2, max_size=40))
def test_auroc_monotone_invariance_and_complement(pairs):
    s = [a for a, _ in pairs]
    y = [int(b) for _, b in pairs]
    if not 0 < sum(y) < len(y):
        return
    base = auroc((s, y))
    transformed = [math.exp(3 * v) - 7 for v in s]
    if len(set(transformed)) == len(set(s)):
        assert auroc((transformed, y)) == pytest.approx(base, abs=1e-12)
    if len(set(s)) == len(s):
        assert base + auroc((s, [1 - v for v in y])) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50)
@given(st.integers(2, 60))
def test_acc_at_non_increasing_for_perfect_ranking(n):
    rng = np.random.default_rng(n)
    y = rng.integers(0, 2, n)
    s = y + rng.random(n) * 0.5
    values = [acc_at((s, y), c) for c in range(1, 101)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_ece_small_for_calibrated_draws():
    rng = np.random.default_rng(0)
    s = rng.random(10_000)
    y = (rng.random(10_000) < s).astype(int)
    assert ece((s, y)) < 0.03


# ------------------------------------------------------------- first error

@pytest.mark.parametrize("labels,kept", [
    ([1, 1, 0, 1, 0], [0, 1, 2]),
    ([1, 1, 1], [0, 1, 2]),
    ([0, 1], [0]),
])
def test_first_error_prefix(labels, kept):
    assert metrics.first_error_prefix(labels) == kept


@given(st.lists(st.booleans(), min_size=1, max_size=30))
def test_first_error_never_keeps_later_steps(labels):
    kept = metrics.first_error_prefix(labels)
    if False in labels:
        first = labels.index(False)
        assert kept == list(range(first + 1))
    else:
        assert kept == list(range(len(labels)))


def _traj(tid, labels):
    steps = [(f"step {j}", f"x{j} = {j}", [j - 1] if j else []) for j in range(len(labels))]
    return Trajectory(graph_from_steps("q", tid, steps), answer_correct=all(labels),
                      step_labels=tuple(bool(v) for v in labels))


def test_first_error_filter_pools_trajectories():
    trajs = [_traj("a", [1, 1, 0, 1, 0]), _traj("b", [1, 1]), _traj("c", [1])]
    conf = {"a": [0.9, 0.8, 0.1, 0.7, 0.2], "b": [0.6, 0.5]}
    data = metrics.first_error_filter(trajs, conf)
    assert data.scores == (0.9, 0.8, 0.1, 0.6, 0.5)
    assert data.labels == (1, 1, 0, 1, 1)
    full = metrics.labeled_scores(trajs, conf)
    assert full.n == 7


def test_labeled_scores_errors():
    t = _traj("a", [1, 0])
    with pytest.raises(TraceError):
        metrics.labeled_scores([t], {"a": [0.5]})
    unlabeled = Trajectory(t.graph, answer_correct=False, step_labels=None)
    with pytest.raises(TraceError):
        metrics.first_error_filter([unlabeled], {"a": [0.5, 0.5]})


# ------------------------------------------------------------------ report

def test_report_matches_individual_metrics_and_is_deterministic():
    s, y = _instances(1, seed=7)[0]
    rep = metrics.report((s, y), c_percent=80, bins=10)
    assert rep.auroc == auroc((s, y)) and rep.aucpr == aucpr((s, y))
    assert rep.acc_at_c == acc_at((s, y), 80) and rep.ece == ece((s, y), 10)
    assert rep.n == len(s) and rep.positives == sum(y)
    assert rep.to_json() == metrics.report((s, y)).to_json()
    doc = json.loads(rep.to_json())
    assert set(doc) == {"auroc", "aucpr", "acc_at", "ece", "n", "positives"}
    assert doc["acc_at"] == {"c": 80, "value": rep.acc_at_c}
    assert doc["ece"] == {"bins": 10, "value": rep.ece}
    for v in (rep.auroc, rep.aucpr, rep.acc_at_c, rep.ece):
        assert 0.0 <= v <= 1.0


def test_report_csv_round_trips_floats():
    rep = metrics.report(([0.1, 0.7, 0.35], [0, 1, 1]))
    header, row = rep.to_csv().strip().split("\n")
    fields = dict(zip(header.split(","), row.split(",")))
    assert float(fields["auroc"]) == rep.auroc and float(fields["ece"]) == rep.ece
    assert fields["n"] == "3" and fields["positives"] == "2"
