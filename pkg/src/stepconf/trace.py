"""Core trace types: steps, reasoning graphs, trajectories and confidence vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Tuple

from .errors import InvalidGraphError, TraceError

ROOT = -1


@dataclass(frozen=True)
class Step:
    index: int
    edge_text: str
    node_text: str
    depends_on: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "depends_on", tuple(self.depends_on))


@dataclass(frozen=True)
class ReasoningGraph:
    """A reasoning trace as a step DAG.

    Steps with no parents hang off a virtual root (index ``ROOT``) that stands
    for the question itself.
    """

    question_id: str
    trajectory_id: str
    steps: Tuple[Step, ...]
    final_answer: str = ""

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self):
        return len(self.steps)

    @property
    def is_linear(self) -> bool:
        """True when every node text is the empty sentinel (linear chain-of-thought)."""
        return all(s.node_text == "" for s in self.steps)


class DirectedEdge(NamedTuple):
    source: int
    target: int
    label: str


@dataclass(frozen=True)
class Trajectory:
    graph: ReasoningGraph
    answer_correct: bool
    step_labels: Optional[Tuple[bool, ...]] = None

    def __post_init__(self):
        if self.step_labels is not None:
            labels = tuple(bool(x) for x in self.step_labels)
            if len(labels) != len(self.graph.steps):
                raise TraceError(
                    f"trajectory {self.graph.trajectory_id}: step_labels has "
                    f"{len(labels)} entries for {len(self.graph.steps)} steps",
                    trajectory_id=self.graph.trajectory_id,
                )
            object.__setattr__(self, "step_labels", labels)

    @property
    def trajectory_id(self) -> str:
        return self.graph.trajectory_id


@dataclass(frozen=True)
class TrajectorySet:
    question_id: str
    question_text: str
    gold_answer: Optional[str]
    trajectories: Tuple[Trajectory, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        if not self.trajectories:
            raise TraceError(f"question {self.question_id}: no trajectories",
                             question_id=self.question_id)
        for t in self.trajectories:
            if t.graph.question_id != self.question_id:
                raise TraceError(
                    f"trajectory {t.trajectory_id} belongs to question "
                    f"{t.graph.question_id!r}, not {self.question_id!r}",
                    question_id=self.question_id,
                )


@dataclass(frozen=True)
class ConfidenceVector:
    trajectory_id: str
    scores: Tuple[float, ...]

    def __post_init__(self):
        scores = tuple(float(s) for s in self.scores)
        for j, s in enumerate(scores):
            if not math.isfinite(s) or s < 0.0 or s > 1.0:
                raise TraceError(f"score {j} of {self.trajectory_id} outside [0,1]: {s}",
                                 trajectory_id=self.trajectory_id)
        object.__setattr__(self, "scores", scores)

    def __len__(self):
        return len(self.scores)


def validate(graph: ReasoningGraph) -> list[str]:
    """Return a list of invariant violations; empty when the graph is well formed."""
    out = []
    linear = graph.is_linear
    for pos, step in enumerate(graph.steps):
        j = step.index
        if j != pos:
            out.append(f"step {pos}: index {j} out of sequence")
        if not step.edge_text.strip():
            out.append(f"step {j}: empty edge_text")
        if not linear and not step.node_text.strip():
            out.append(f"step {j}: empty node_text")
        seen = set()
        for d in step.depends_on:
            if d >= j:
                out.append(f"step {j}: forward dependency")
            elif d < 0:
                out.append(f"step {j}: negative dependency {d}")
            elif d in seen:
                out.append(f"step {j}: duplicate dependency {d}")
            seen.add(d)
    return out


def induced_edges(graph: ReasoningGraph) -> list[DirectedEdge]:
    """Expand steps into labelled edges, ordered by (target, source).

    A step with k parents yields k edges sharing its edge_text; a
    parentless step yields one edge from ``ROOT``.
    """
    problems = validate(graph)
    if problems:
        raise InvalidGraphError(problems)
    edges = []
    for step in graph.steps:
        parents = sorted(step.depends_on) or [ROOT]
        for src in parents:
            edges.append(DirectedEdge(src, step.index, step.edge_text))
    return edges


def graph_from_steps(question_id: str, trajectory_id: str,
                     steps: Sequence[tuple], final_answer: str = "") -> ReasoningGraph:
    """Build a graph from ``(edge_text, node_text, depends_on)`` tuples."""
    return ReasoningGraph(
        question_id,
        trajectory_id,
        tuple(Step(i, e, n, tuple(d)) for i, (e, n, d) in enumerate(steps)),
        final_answer,
    )
