import random
import pytest
from hypothesis import given, settings, strategies as st

from stepconf.errors import NoAnchorsError
from stepconf.nibs import NibsConfig, nibs_score, partition, score_set
from stepconf.similarity import JaccardSimilarity
from stepconf.trace import Trajectory, TrajectorySet, graph_from_steps


def _t(tid, texts, ok=True):
    return Trajectory(graph_from_steps("q", tid, [(e, n, [j - 1] if j else []) for j, (e, n) in enumerate(texts)]), ok)


def reference_score(target, refs, provider, agg):
    """Direct evaluation: average over references of the aggregated similarity."""
    out = []
    for s in target.graph.steps:
        vals = []
        for r in refs:
            sims = [provider.score(f"{s.edge_text} {s.node_text}", f"{x.edge_text} {x.node_text}")
                    for x in r.graph.steps]
            vals.append(max(sims) if agg == "max" else sum(sims) / len(sims))
        out.append(sum(vals) / len(vals))
    return out


def test_partition():
    ts = [_t("a", [("x", "1")], True), _t("b", [("x", "1")], False), _t("c", [("x", "1")], True)]
    correct, wrong = partition(ts)
    assert [t.trajectory_id for t in correct] == ["a", "c"]
    assert [t.trajectory_id for t in wrong] == ["b"]
    assert partition(ts[1:2])[0] == []
    assert partition([ts[0], ts[2]])[1] == []


def test_verbatim_step_scores_one():
    refs = [_t(f"r{i}", [("add", "2"), ("mul", "4")]) for i in range(3)]
    assert nibs_score(_t("x", [("add", "2")]), refs).scores == (1.0,)


def test_disjoint_step_scores_zero():
    refs = [_t("r", [("add", "2")])]
    cfg = NibsConfig(JaccardSimilarity())
    assert nibs_score(_t("x", [("zzz", "qqq")]), refs, cfg).scores == (0.0,)


def test_two_references_average():
    # jaccard inner maxima are 1.0 and 0.5
    target = Trajectory(graph_from_steps("q", "x", [("a", "", [])]), True)
    refs = [Trajectory(graph_from_steps("q", "r1", [("a", "", [])]), True),
            Trajectory(graph_from_steps("q", "r2", [("a b", "", [])]), True)]
    assert nibs_score(target, refs, NibsConfig(JaccardSimilarity())).scores == (0.75,)


def test_leave_one_out():
    t = _t("x", [("a", "1")])
    with pytest.raises(NoAnchorsError, match="no consensus anchors"):
        nibs_score(t, [t])
    other = _t("y", [("b", "2")])
    assert nibs_score(t, [t, other]).scores == (0.0,)


def test_matches_direct_evaluation_on_synth():
    from stepconf.synth import SynthConfig, synth_corpus
    sets = synth_corpus(SynthConfig(num_questions=3, distractor_rate=0.3))
    rng = random.Random(0)
    for agg in ("max", "mean"):
        provider = JaccardSimilarity()
        for ts in sets:
            correct = [t for t in ts.trajectories if t.answer_correct]
            for t in rng.sample(ts.trajectories, 4):
                refs = [r for r in correct if r is not t]
                got = nibs_score(t, correct, NibsConfig(provider, agg)).scores
                want = reference_score(t, refs, provider, agg)
                assert got == pytest.approx(want, abs=1e-12)


_steps = st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=1, max_size=4)


@settings(max_examples=60)
@given(_steps, st.lists(_steps, min_size=1, max_size=5), st.randoms(use_true_random=False))
def test_permutation_invariance_and_rational_values(target, refs, rnd):
    t = _t("x", [(w, "") for w in target])
    rs = [_t(f"r{i}", [(w, "") for w in r]) for i, r in enumerate(refs)]
    base = nibs_score(t, rs).scores
    shuffled = [_t(r.trajectory_id, [(s.edge_text, "") for s in rnd.sample(r.graph.steps, len(r.graph.steps))])
                for r in rnd.sample(rs, len(rs))]
    assert nibs_score(t, shuffled).scores == pytest.approx(base, abs=1e-15)
    for c in base:
        assert abs(c * len(rs) - round(c * len(rs))) < 1e-12


@settings(max_examples=60)
@given(_steps, st.lists(_steps, min_size=1, max_size=4), st.integers(0, 100))
def test_copying_step_into_reference_never_decreases(target, refs, pick):
    t = _t("x", [(w, "") for w in target])
    rs = [_t(f"r{i}", [(w, "") for w in r]) for i, r in enumerate(refs)]
    j = pick % len(target)
    r_idx = pick % len(rs)
    before = nibs_score(t, rs, NibsConfig(JaccardSimilarity())).scores[j]
    words = list(refs[r_idx])
    words[0] = target[j]
    rs[r_idx] = _t(rs[r_idx].trajectory_id, [(w, "") for w in words])
    after = nibs_score(t, rs, NibsConfig(JaccardSimilarity())).scores[j]
    assert after >= before


def test_score_set_uses_strategy():
    ts = TrajectorySet("q", "?", "2", (_t("a", [("x", "1")]), _t("b", [("x", "1")]), _t("c", [("y", "1")], False)))
    scores = {cv.trajectory_id: cv.scores for cv in score_set(ts)}
    assert scores == {"a": (1.0,), "b": (1.0,), "c": (0.0,)}
    all_scores = {cv.trajectory_id: cv.scores for cv in score_set(ts, strategy="all-trajectories")}
    assert all_scores["a"] == (0.5,)
