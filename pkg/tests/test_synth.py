import pytest

from stepconf.corpus import dumps_corpus
from stepconf.errors import ConfigError
from stepconf.synth import SynthConfig, synth_corpus
from stepconf.trace import induced_edges, validate


def test_deterministic():
    cfg = SynthConfig(num_questions=4, distractor_rate=0.4, rng_seed=11)
    assert dumps_corpus(synth_corpus(cfg)) == dumps_corpus(synth_corpus(cfg))
    assert dumps_corpus(synth_corpus(cfg)) != dumps_corpus(synth_corpus(SynthConfig(num_questions=4, rng_seed=12)))


def test_counts_and_validity():
    sets = synth_corpus(SynthConfig(num_questions=5, correct_per_question=3, wrong_per_question=2))
    for ts in sets:
        assert sum(t.answer_correct for t in ts.trajectories) == 3
        assert len(ts.trajectories) == 5
        for t in ts.trajectories:
            assert validate(t.graph) == []
            induced_edges(t.graph)
            assert (t.graph.final_answer == ts.gold_answer) == t.answer_correct


@pytest.mark.parametrize("mode", ["replace-anchor", "wrong-result", "extra-step"])
def test_wrong_trajectories_have_one_false_label(mode):
    sets = synth_corpus(SynthConfig(num_questions=5, corruption_mode=mode))
    for ts in sets:
        for t in ts.trajectories:
            bad = t.step_labels.count(False)
            assert bad == (0 if t.answer_correct else 1)
            if mode == "extra-step" and not t.answer_correct:
                assert len(t.graph.steps) == 5


def test_no_distractors_means_exactly_anchor_steps():
    sets = synth_corpus(SynthConfig(num_questions=5, anchors_per_question=4, distractor_rate=0.0))
    for ts in sets:
        for t in ts.trajectories:
            if t.answer_correct:
                assert len(t.graph.steps) == 4


def test_correct_trajectories_share_anchor_texts():
    ts = synth_corpus(SynthConfig(num_questions=1))[0]
    correct = [t for t in ts.trajectories if t.answer_correct]
    texts = [sorted((s.edge_text, s.node_text) for s in t.graph.steps) for t in correct]
    assert all(x == texts[0] for x in texts)


def test_trap_questions_make_wrong_answer_modal():
    sets = synth_corpus(SynthConfig(num_questions=10, trap_questions=0.3))
    trapped = 0
    for ts in sets:
        wrong = [t for t in ts.trajectories if not t.answer_correct]
        if len(wrong) > len(ts.trajectories) / 2:
            trapped += 1
            assert len({t.graph.final_answer for t in wrong}) == 1
    assert trapped == 3


@pytest.mark.parametrize("bad", [{"num_questions": 0}, {"distractor_rate": 1.5},
                                 {"corruption_mode": "nope"}, {"unknown": 1}])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        SynthConfig.from_dict(bad)
