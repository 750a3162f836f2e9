"""Semantic maximum common subgraph between reasoning graphs, and consensus masks.

Two graphs are aligned edge-to-edge: an edge pair qualifies when its labels
entail each other at ``tau_e`` and the target node texts at ``tau_v``. The
heuristic grows matchings by BFS from the top-K seed pairs; the exact engine
is a branch-and-bound oracle for small inputs.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from . import kernels
from .errors import ConfigError, EmptyInputError, NoAnchorsError, SizeGuardError
from .similarity import ExactSimilarity, canonical_text, entail
from .trace import ROOT, DirectedEdge, ReasoningGraph, TrajectorySet, induced_edges

EXACT_GUARD = 36
ANCHOR_STRATEGIES = ("correct-only", "all-trajectories", "self-consistency")
ENGINES = ("heuristic", "exact")


@dataclass
class McsParams:
    tau_e: float = 0.7
    tau_v: float = 0.7
    k: int = 10
    entailment: object = field(default_factory=ExactSimilarity)

    def __post_init__(self):
        if not (0.0 < self.tau_e <= 1.0 and 0.0 < self.tau_v <= 1.0):
            raise ConfigError("tau_e and tau_v must be in (0, 1]")
        if int(self.k) < 1:
            raise ConfigError("K must be >= 1")


@dataclass(frozen=True)
class Candidate:
    e1: int
    e2: int
    edge_score: float
    node_score: float  # equals edge_score when both node texts are empty
    score: float


@dataclass
class McsResult:
    matched_edge_pairs: List[Tuple[int, int]]
    node_mapping: Dict[int, int]
    annotations: List[Tuple[float, float]]
    sim_call_count: int
    node_call_count: int = 0

    @property
    def size(self) -> int:
        return len(self.matched_edge_pairs)

    def to_dict(self, edges1=None, edges2=None):
        out = {
            "size": self.size,
            "matched_edge_pairs": [list(p) for p in self.matched_edge_pairs],
            "node_mapping": {str(k): v for k, v in sorted(self.node_mapping.items())},
            "annotations": [{"edge": e, "node": n} for e, n in self.annotations],
            "sim_call_count": self.sim_call_count,
            "node_call_count": self.node_call_count,
        }
        if edges1 is not None and edges2 is not None:
            out["matched_edges"] = [
                {"g1": [edges1[a].source, edges1[a].target], "g2": [edges2[b].source, edges2[b].target],
                 "label1": edges1[a].label, "label2": edges2[b].label}
                for a, b in self.matched_edge_pairs
            ]
        return out


class _Scored:
    """Candidate list plus the counters spent producing it."""

    def __init__(self, candidates, edge_calls, node_calls, edges1, edges2):
        self.candidates = candidates
        self.edge_calls = edge_calls
        self.node_calls = node_calls
        self.edges1 = edges1
        self.edges2 = edges2


def _score_pairs(g1: ReasoningGraph, g2: ReasoningGraph, params: McsParams) -> _Scored:
    edges1, edges2 = induced_edges(g1), induced_edges(g2)
    nodes1 = {s.index: s.node_text for s in g1.steps}
    nodes2 = {s.index: s.node_text for s in g2.steps}
    provider = params.entailment
    edge_calls = node_calls = 0
    node_cache = {}
    out = []
    for a, e1 in enumerate(edges1):
        for b, e2 in enumerate(edges2):
            edge_calls += 1
            s_edge = entail(provider, e1.label, e2.label)
            if s_edge < params.tau_e:
                continue
            v1, v2 = nodes1[e1.target], nodes2[e2.target]
            if v1 == "" and v2 == "":
                s_node = None
            else:
                key = (e1.target, e2.target)
                if key not in node_cache:
                    node_calls += 1
                    node_cache[key] = entail(provider, v1, v2)
                s_node = node_cache[key]
                if s_node < params.tau_v:
                    continue
            combined = s_edge if s_node is None else (s_edge + s_node) / 2.0
            out.append(Candidate(a, b, s_edge, s_edge if s_node is None else s_node, combined))
    out.sort(key=lambda c: (-c.score, c.e1, c.e2))
    return _Scored(out, edge_calls, node_calls, edges1, edges2)


def candidate_pairs(g1: ReasoningGraph, g2: ReasoningGraph, params: McsParams):
    """Qualifying edge pairs ranked by combined score (ties by edge order).

    Returns ``(candidates, edge_call_count)``; exactly ``|E1|*|E2|`` edge
    entailment evaluations are made.
    """
    scored = _score_pairs(g1, g2, params)
    return scored.candidates, scored.edge_calls


def _encode(edges: Sequence[DirectedEdge]):
    # root -> node 0, step j -> node j + 1
    return [e.source + 1 for e in edges], [e.target + 1 for e in edges]


def _rank_matrix(scored: _Scored):
    m2 = len(scored.edges2)
    rank = [-1] * (len(scored.edges1) * m2)
    for r, c in enumerate(scored.candidates):
        rank[c.e1 * m2 + c.e2] = r
    return rank


def _result(pairs, scored: _Scored) -> McsResult:
    lookup = {(c.e1, c.e2): c for c in scored.candidates}
    mapping = {}
    notes = []
    for a, b in pairs:
        e1, e2 = scored.edges1[a], scored.edges2[b]
        mapping[e1.source] = e2.source
        mapping[e1.target] = e2.target
        c = lookup[(a, b)]
        notes.append((c.edge_score, c.node_score))
    return McsResult(list(pairs), mapping, notes, scored.edge_calls, scored.node_calls)


def _num_nodes(g: ReasoningGraph) -> int:
    return len(g.steps) + 1


def mcs_heuristic(g1: ReasoningGraph, g2: ReasoningGraph, params: McsParams, backend=None) -> McsResult:
    """Seeded BFS expansion from the top-K candidate pairs; keeps the largest matching."""
    scored = _score_pairs(g1, g2, params)
    impl = kernels if backend is None else kernels.load_backend(backend)
    src1, tgt1 = _encode(scored.edges1)
    src2, tgt2 = _encode(scored.edges2)
    seeds = [(c.e1, c.e2) for c in scored.candidates[: params.k]]
    pairs = impl.mcs_expand(src1, tgt1, src2, tgt2, _num_nodes(g1), _num_nodes(g2),
                            _rank_matrix(scored), seeds)
    return _result(pairs, scored)


def mcs_exact(g1: ReasoningGraph, g2: ReasoningGraph, params: McsParams, backend=None) -> McsResult:
    """Maximum consistent matching by branch and bound (|E1|*|E2| <= 36)."""
    m = len(induced_edges(g1)) * len(induced_edges(g2))
    if m > EXACT_GUARD:
        raise SizeGuardError(f"exact MCS limited to |E1|*|E2| <= {EXACT_GUARD}, got {m}", pairs=m)
    scored = _score_pairs(g1, g2, params)
    impl = kernels if backend is None else kernels.load_backend(backend)
    src1, tgt1 = _encode(scored.edges1)
    src2, tgt2 = _encode(scored.edges2)
    pairs = impl.mcs_exact(src1, tgt1, src2, tgt2, _num_nodes(g1), _num_nodes(g2),
                           _rank_matrix(scored))
    return _result(pairs, scored)


def run_mcs(g1, g2, params, engine="heuristic"):
    if engine == "heuristic":
        return mcs_heuristic(g1, g2, params)
    if engine == "exact":
        return mcs_exact(g1, g2, params)
    raise ConfigError(f"unknown MCS engine {engine!r}")


def check_result(g1, g2, result: McsResult, params: McsParams) -> list[str]:
    """Re-verify a matching from scratch; returns a list of problems (empty if sound)."""
    problems = []
    edges1, edges2 = induced_edges(g1), induced_edges(g2)
    nodes1 = {s.index: s.node_text for s in g1.steps}
    nodes2 = {s.index: s.node_text for s in g2.steps}
    fwd, back = {}, {}
    used1, used2 = set(), set()
    for a, b in result.matched_edge_pairs:
        if a in used1 or b in used2:
            problems.append(f"edge reused in pair {(a, b)}")
        used1.add(a)
        used2.add(b)
        e1, e2 = edges1[a], edges2[b]
        if entail(params.entailment, e1.label, e2.label) < params.tau_e:
            problems.append(f"pair {(a, b)} below tau_e")
        v1, v2 = nodes1[e1.target], nodes2[e2.target]
        if not (v1 == "" and v2 == "") and entail(params.entailment, v1, v2) < params.tau_v:
            problems.append(f"pair {(a, b)} below tau_v")
        for x, y in ((e1.source, e2.source), (e1.target, e2.target)):
            if (x == ROOT) != (y == ROOT):
                problems.append(f"pair {(a, b)} maps root to a step")
            if fwd.setdefault(x, y) != y:
                problems.append(f"node {x} mapped twice")
            if back.setdefault(y, x) != x:
                problems.append(f"node {y} is the image of two nodes")
    if fwd != dict(result.node_mapping):
        problems.append("node_mapping disagrees with matched pairs")
    return problems


# ------------------------------------------------------------ consensus masks


def _same(g: ReasoningGraph, h: ReasoningGraph) -> bool:
    return g.question_id == h.question_id and g.trajectory_id == h.trajectory_id


def consensus_mask(graph: ReasoningGraph, anchors: Sequence[ReasoningGraph], params: McsParams,
                   engine: str = "heuristic") -> list[float]:
    """Fraction of anchors whose MCS with ``graph`` covers each step.

    A step counts as covered when at least one of its induced edges is matched.
    ``graph`` itself is dropped from ``anchors`` if present.
    """
    refs = [a for a in anchors if not _same(a, graph)]
    if not refs:
        raise NoAnchorsError(trajectory_id=graph.trajectory_id)
    edges = induced_edges(graph)
    hits = [0] * len(graph.steps)
    for ref in refs:
        res = run_mcs(graph, ref, params, engine)
        covered = {edges[a].target for a, _ in res.matched_edge_pairs}
        for j in covered:
            hits[j] += 1
    return [h / len(refs) for h in hits]


def select_anchors(tset: TrajectorySet, strategy: str) -> list[ReasoningGraph]:
    if strategy == "correct-only":
        return [t.graph for t in tset.trajectories if t.answer_correct]
    if strategy in ("all-trajectories", "all"):
        return [t.graph for t in tset.trajectories]
    if strategy == "self-consistency":
        answers = [canonical_text(t.graph.final_answer) for t in tset.trajectories]
        counts = Counter(answers)
        top = max(counts.values())
        modal = next(a for a in answers if counts[a] == top)
        return [t.graph for t, a in zip(tset.trajectories, answers) if a == modal]
    raise ConfigError(f"unknown anchor strategy {strategy!r}")


def mcs_proportion(tset: TrajectorySet, params: McsParams, engine: str = "heuristic"):
    """Per trajectory: mean over the others of MCS size / own edge count.

    Returns ``(trajectory_id, answer_correct, proportion)`` triples.
    """
    trajs = tset.trajectories
    if len(trajs) < 2:
        raise EmptyInputError(f"question {tset.question_id}: need at least 2 trajectories")
    out = []
    for i, t in enumerate(trajs):
        n_edges = len(induced_edges(t.graph))
        total = 0.0
        for k, other in enumerate(trajs):
            if k != i:
                total += run_mcs(t.graph, other.graph, params, engine).size / n_edges
        out.append((t.trajectory_id, t.answer_correct, total / (len(trajs) - 1)))
    return out
