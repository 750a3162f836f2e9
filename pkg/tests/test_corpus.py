import json

import pytest
from hypothesis import given, settings, strategies as st

from stepconf.corpus import (atomic_write, dumps_corpus, load_corpus, load_graph, loads_corpus,
                             save_corpus)
from stepconf.errors import SchemaError
from stepconf.synth import SynthConfig, synth_corpus


def _doc(**overrides):
    doc = {"version": 1, "questions": [{
        "question_id": "q1", "question_text": "1+1?", "gold_answer": "2",
        "trajectories": [{"trajectory_id": "t1", "answer_correct": True, "step_labels": [True],
                          "final_answer": "2",
                          "steps": [{"edge_text": "add", "node_text": "2", "depends_on": []}]}]}]}
    doc.update(overrides)
    return doc


def test_round_trip_is_byte_stable(tmp_path):
    sets = synth_corpus(SynthConfig(num_questions=3, distractor_rate=0.3))
    text = dumps_corpus(sets)
    assert loads_corpus(text) == sets
    path = tmp_path / "c.json"
    save_corpus(sets, path)
    assert path.read_text(encoding="utf-8") == text
    assert dumps_corpus(load_corpus(path)) == text


def test_missing_version_pointer():
    doc = _doc()
    del doc["version"]
    with pytest.raises(SchemaError) as info:
        loads_corpus(json.dumps(doc))
    assert info.value.pointer == "/version"


def test_wrong_type_pointer():
    doc = _doc()
    doc["questions"][0]["trajectories"][0]["answer_correct"] = "yes"
    with pytest.raises(SchemaError) as info:
        loads_corpus(json.dumps(doc))
    assert info.value.pointer == "/questions/0/trajectories/0/answer_correct"


def test_step_labels_length_names_trajectory():
    doc = _doc()
    doc["questions"][0]["trajectories"][0]["step_labels"] = [True, False]
    with pytest.raises(SchemaError) as info:
        loads_corpus(json.dumps(doc))
    assert "t1" in info.value.message
    assert info.value.pointer.endswith("/step_labels")


def test_duplicate_trajectory_ids():
    doc = _doc()
    traj = doc["questions"][0]["trajectories"][0]
    doc["questions"][0]["trajectories"].append(dict(traj))
    with pytest.raises(SchemaError, match="duplicate"):
        loads_corpus(json.dumps(doc))


def test_invalid_json():
    with pytest.raises(SchemaError):
        loads_corpus("{not json")


def test_null_labels_and_gold_round_trip():
    doc = _doc()
    doc["questions"][0]["gold_answer"] = None
    doc["questions"][0]["trajectories"][0]["step_labels"] = None
    sets = loads_corpus(json.dumps(doc))
    assert sets[0].gold_answer is None and sets[0].trajectories[0].step_labels is None
    assert loads_corpus(dumps_corpus(sets)) == sets


def test_load_graph(tmp_path):
    p = tmp_path / "g.json"
    p.write_text(json.dumps({"steps": [{"edge_text": "a", "node_text": "1", "depends_on": []}]}))
    g = load_graph(p, trajectory_id="g")
    assert g.trajectory_id == "g" and len(g.steps) == 1


def test_atomic_write_replaces_and_leaves_no_temp(tmp_path):
    p = tmp_path / "out.txt"
    atomic_write(p, "one")
    atomic_write(p, b"two")
    assert p.read_text() == "two"
    assert [x.name for x in tmp_path.iterdir()] == ["out.txt"]


_texts = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=12)


@settings(max_examples=50)
@given(st.lists(st.tuples(_texts, _texts, st.booleans()), min_size=1, max_size=5))
def test_save_load_save_identity(rows):
    steps = [{"edge_text": e, "node_text": n, "depends_on": [j - 1] if j else []}
             for j, (e, n, _b) in enumerate(rows)]
    doc = _doc()
    doc["questions"][0]["trajectories"][0].update(steps=steps, step_labels=[b for *_x, b in rows])
    first = dumps_corpus(loads_corpus(json.dumps(doc)))
    assert dumps_corpus(loads_corpus(first)) == first
