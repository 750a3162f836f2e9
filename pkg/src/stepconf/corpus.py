"""Corpus file format (JSON, version 1) and atomic file helpers."""

from __future__ import annotations

import json
import os
import tempfile
from typing import Iterable, Sequence

import jsonschema

from .errors import SchemaError, TraceError
from .trace import ReasoningGraph, Step, Trajectory, TrajectorySet

VERSION = 1

_STEP = {
    "type": "object",
    "required": ["edge_text", "node_text", "depends_on"],
    "properties": {
        "edge_text": {"type": "string"},
        "node_text": {"type": "string"},
        "depends_on": {"type": "array", "items": {"type": "integer"}},
    },
}

_TRAJECTORY = {
    "type": "object",
    "required": ["trajectory_id", "answer_correct", "final_answer", "steps"],
    "properties": {
        "trajectory_id": {"type": "string"},
        "answer_correct": {"type": "boolean"},
        "step_labels": {"type": ["array", "null"], "items": {"type": "boolean"}},
        "final_answer": {"type": "string"},
        "steps": {"type": "array", "items": _STEP},
    },
}

CORPUS_SCHEMA = {
    "type": "object",
    "required": ["version", "questions"],
    "properties": {
        "version": {"const": VERSION},
        "questions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["question_id", "question_text", "trajectories"],
                "properties": {
                    "question_id": {"type": "string"},
                    "question_text": {"type": "string"},
                    "gold_answer": {"type": ["string", "null"]},
                    "trajectories": {"type": "array", "minItems": 1, "items": _TRAJECTORY},
                },
            },
        },
    },
}

GRAPH_SCHEMA = {
    "type": "object",
    "required": ["steps"],
    "properties": {
        "final_answer": {"type": "string"},
        "steps": {"type": "array", "items": _STEP},
    },
}


def _pointer(parts) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


def check_schema(data, schema):
    """Validate ``data``; raise :class:`SchemaError` at the first violation's JSON pointer."""
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(data), key=lambda e: (list(map(str, e.absolute_path)), e.validator))
    if not errors:
        return
    err = errors[0]
    path = list(err.absolute_path)
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        if missing:
            path.append(missing[0])
    raise SchemaError(err.message, pointer=_pointer(path))


def canonical_dumps(data) -> str:
    """Deterministic JSON: sorted keys, UTF-8, shortest round-trip floats, trailing newline."""
    return json.dumps(data, sort_keys=True, ensure_ascii=False, indent=1, allow_nan=False) + "\n"


def atomic_write(path, data):
    """Write text or bytes via a temp file in the same directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    if isinstance(data, str):
        data = data.encode("utf-8")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def graph_to_dict(graph: ReasoningGraph) -> dict:
    return {
        "final_answer": graph.final_answer,
        "steps": [
            {"edge_text": s.edge_text, "node_text": s.node_text, "depends_on": list(s.depends_on)}
            for s in graph.steps
        ],
    }


def graph_from_dict(data, question_id="", trajectory_id="") -> ReasoningGraph:
    steps = tuple(
        Step(j, s["edge_text"], s["node_text"], tuple(s["depends_on"]))
        for j, s in enumerate(data["steps"])
    )
    return ReasoningGraph(question_id, trajectory_id, steps, data.get("final_answer", ""))


def to_dict(sets: Sequence[TrajectorySet]) -> dict:
    questions = []
    for ts in sets:
        trajs = []
        for t in ts.trajectories:
            rec = graph_to_dict(t.graph)
            rec["trajectory_id"] = t.trajectory_id
            rec["answer_correct"] = bool(t.answer_correct)
            rec["step_labels"] = None if t.step_labels is None else list(t.step_labels)
            trajs.append(rec)
        questions.append({
            "question_id": ts.question_id,
            "question_text": ts.question_text,
            "gold_answer": ts.gold_answer,
            "trajectories": trajs,
        })
    return {"version": VERSION, "questions": questions}


def from_dict(data) -> list[TrajectorySet]:
    check_schema(data, CORPUS_SCHEMA)
    sets = []
    for qi, q in enumerate(data["questions"]):
        seen = set()
        trajs = []
        for ti, rec in enumerate(q["trajectories"]):
            ptr = f"/questions/{qi}/trajectories/{ti}"
            tid = rec["trajectory_id"]
            if tid in seen:
                raise SchemaError(f"duplicate trajectory_id {tid!r}", pointer=ptr + "/trajectory_id")
            seen.add(tid)
            labels = rec.get("step_labels")
            if labels is not None and len(labels) != len(rec["steps"]):
                raise SchemaError(
                    f"trajectory {tid!r}: step_labels has {len(labels)} entries "
                    f"for {len(rec['steps'])} steps", pointer=ptr + "/step_labels")
            graph = graph_from_dict(rec, q["question_id"], tid)
            trajs.append(Trajectory(graph, rec["answer_correct"],
                                    None if labels is None else tuple(labels)))
        try:
            sets.append(TrajectorySet(q["question_id"], q["question_text"],
                                      q.get("gold_answer"), tuple(trajs)))
        except TraceError as exc:
            raise SchemaError(exc.message, pointer=f"/questions/{qi}") from None
    return sets


def dumps_corpus(sets: Sequence[TrajectorySet]) -> str:
    return canonical_dumps(to_dict(sets))


def loads_corpus(text: str) -> list[TrajectorySet]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg} at line {exc.lineno}", pointer="") from None
    return from_dict(data)


def load_corpus(path) -> list[TrajectorySet]:
    with open(path, encoding="utf-8") as fh:
        return loads_corpus(fh.read())


def save_corpus(sets: Iterable[TrajectorySet], path):
    atomic_write(path, dumps_corpus(list(sets)))


def load_graph(path, question_id="", trajectory_id=None) -> ReasoningGraph:
    """Load a single graph file (a corpus trajectory record without labels)."""
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc.msg}", pointer="") from None
    check_schema(data, GRAPH_SCHEMA)
    tid = trajectory_id if trajectory_id is not None else data.get("trajectory_id", os.fspath(path))
    return graph_from_dict(data, question_id, tid)
