import pytest

from stepconf.trace import graph_from_steps


@pytest.fixture
def chain3():
    return graph_from_steps("q", "t", [("a", "x = 1", []), ("b", "y = 2", [0]), ("c", "z = 3", [1])], "3")
