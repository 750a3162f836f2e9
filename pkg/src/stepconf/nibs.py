"""Closed-form stepwise confidence from consensus with correct trajectories.

A step's confidence is the mean, over reference trajectories, of the
aggregated (max or mean) similarity between the step and that trajectory's
steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import ConfigError, NoAnchorsError
from .mcs import select_anchors
from .similarity import AGGREGATORS, ExactSimilarity, aggregate, step_text
from .trace import ConfidenceVector, ReasoningGraph, Trajectory, TrajectorySet


@dataclass
class NibsConfig:
    similarity: object = field(default_factory=ExactSimilarity)
    aggregator: str = "max"
    text_mode: str = "both"

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"aggregator must be one of {AGGREGATORS}")
        if self.text_mode not in ("both", "edge"):
            raise ConfigError("text_mode must be 'both' or 'edge'")


def partition(tset):
    """Split trajectories into (correct, wrong) lists, preserving order."""
    trajs = tset.trajectories if isinstance(tset, TrajectorySet) else tset
    correct = [t for t in trajs if t.answer_correct]
    wrong = [t for t in trajs if not t.answer_correct]
    return correct, wrong


def _graph(t) -> ReasoningGraph:
    return t.graph if isinstance(t, Trajectory) else t


def nibs_score(target, references: Sequence, config: Optional[NibsConfig] = None) -> ConfidenceVector:
    """Score every step of ``target`` against ``references`` (target itself excluded)."""
    config = config or NibsConfig()
    g = _graph(target)
    refs = [_graph(r) for r in references]
    refs = [r for r in refs if not (r.question_id == g.question_id and r.trajectory_id == g.trajectory_id)]
    if not refs:
        raise NoAnchorsError(trajectory_id=g.trajectory_id)
    provider, mode = config.similarity, config.text_mode
    ref_texts = [[step_text(s, mode) for s in r.steps] for r in refs]
    cache = {}
    scores = []
    for step in g.steps:
        text = step_text(step, mode)
        per_ref = []
        for texts in ref_texts:
            sims = []
            for other in texts:
                key = (text, other)
                val = cache.get(key)
                if val is None:
                    val = cache[key] = provider.score(text, other)
                sims.append(val)
            # an empty reference trajectory contributes zero support
            per_ref.append(aggregate(config.aggregator, sims) if sims else 0.0)
        c = math.fsum(per_ref) / len(per_ref)
        scores.append(min(1.0, max(0.0, c)))
    return ConfidenceVector(g.trajectory_id, tuple(scores))


def score_set(tset: TrajectorySet, config: Optional[NibsConfig] = None,
              strategy: str = "correct-only") -> list[ConfidenceVector]:
    """NIBS scores for every trajectory of a question, anchors chosen by ``strategy``."""
    anchors = select_anchors(tset, strategy)
    return [nibs_score(t, anchors, config) for t in tset.trajectories]
