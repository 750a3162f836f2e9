import pytest
from hypothesis import given, strategies as st

from stepconf.errors import InvalidGraphError, TraceError
from stepconf.trace import (ROOT, ConfidenceVector, ReasoningGraph, Step, Trajectory, TrajectorySet,
                            graph_from_steps, induced_edges, validate)


def test_valid_chain_has_no_violations(chain3):
    assert validate(chain3) == []


def test_forward_dependency_reported():
    g = graph_from_steps("q", "t", [("a", "1", []), ("b", "2", [2]), ("c", "3", [1])])
    assert validate(g) == ["step 1: forward dependency"]


def test_empty_edge_text_names_step():
    g = graph_from_steps("q", "t", [("", "1", []), ("b", "2", [0])])
    problems = validate(g)
    assert len(problems) == 1 and problems[0].startswith("step 0")


def test_empty_node_text_allowed_only_in_linear_graphs():
    linear = graph_from_steps("q", "t", [("a", "", []), ("b", "", [0])])
    assert validate(linear) == []
    mixed = graph_from_steps("q", "t", [("a", "", []), ("b", "2", [0])])
    assert validate(mixed) == ["step 0: empty node_text"]


def test_gap_in_indices_reported():
    g = ReasoningGraph("q", "t", (Step(0, "a", "1"), Step(2, "b", "2", (0,))))
    assert any("out of sequence" in p for p in validate(g))


def test_root_attachment():
    g = graph_from_steps("q", "t", [("a", "1", [])])
    assert induced_edges(g) == [(ROOT, 0, "a")]


def test_fan_in_replicates_label():
    g = graph_from_steps("q", "t", [("a", "1", []), ("b", "2", []), ("sum", "3", [1, 0])])
    edges = [e for e in induced_edges(g) if e.target == 2]
    assert [(e.source, e.target) for e in edges] == [(0, 2), (1, 2)]
    assert {e.label for e in edges} == {"sum"}


def test_two_products_sum_difference_topology():
    # two independent products feed a sum, which feeds a difference
    g = graph_from_steps("q", "t", [
        ("multiply 3 by 4", "12", []), ("multiply 2 by 5", "10", []),
        ("add the products", "22", [0, 1]), ("subtract 7", "15", [2]),
    ])
    edges = induced_edges(g)
    assert len(edges) == 5
    assert sum(e.source == ROOT for e in edges) == 2
    assert edges == sorted(edges, key=lambda e: (e.target, e.source))


def test_invalid_graph_raises_structured_error():
    g = graph_from_steps("q", "t", [("a", "1", [0])])
    with pytest.raises(InvalidGraphError) as info:
        induced_edges(g)
    assert info.value.violations == ["step 0: forward dependency"]


@st.composite
def dags(draw):
    n = draw(st.integers(1, 8))
    steps = []
    for j in range(n):
        deps = draw(st.lists(st.integers(0, j - 1), unique=True, max_size=3)) if j else []
        steps.append((f"op{j}", f"v{j}", deps))
    return graph_from_steps("q", "t", steps)


@given(dags())
def test_edge_count_and_topological_order(g):
    edges = induced_edges(g)
    assert len(edges) == sum(max(1, len(s.depends_on)) for s in g.steps)
    # Kahn's algorithm over the edge list succeeds from the root
    indeg = {s.index: 0 for s in g.steps}
    for e in edges:
        indeg[e.target] += 1
    ready = [ROOT]
    seen = 0
    while ready:
        node = ready.pop()
        for e in edges:
            if e.source == node:
                indeg[e.target] -= 1
                if indeg[e.target] == 0:
                    ready.append(e.target)
                    seen += 1
    assert seen == len(g.steps)
    assert induced_edges(g) == edges


def test_step_labels_length_checked(chain3):
    with pytest.raises(TraceError):
        Trajectory(chain3, True, (True, False))


def test_trajectory_set_invariants(chain3):
    with pytest.raises(TraceError):
        TrajectorySet("q", "text", None, ())
    other = graph_from_steps("other", "t", [("a", "1", [])])
    with pytest.raises(TraceError):
        TrajectorySet("q", "text", None, (Trajectory(chain3, True), Trajectory(other, False)))


@pytest.mark.parametrize("bad", [-0.1, 1.5, float("nan"), float("inf")])
def test_confidence_vector_rejects_out_of_range(bad):
    with pytest.raises(TraceError):
        ConfidenceVector("t", (0.5, bad))


def test_types_are_immutable(chain3):
    with pytest.raises(AttributeError):
        chain3.final_answer = "x"
