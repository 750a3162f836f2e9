import numpy as np
import pytest

from stepconf import _pykernels, kernels
from stepconf.gibs import random_graph
from stepconf.mcs import McsParams, _encode, _num_nodes, _rank_matrix, _score_pairs
from stepconf.similarity import JaccardSimilarity

BACKENDS = kernels.available_backends()


def test_backend_selected_at_import():
    assert kernels.BACKEND in ("cython", "python")
    assert kernels.BACKEND == BACKENDS[0]


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.load_backend("fortran")


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("data", [b"", b"a", b"b", "héllo".encode(), bytes(range(256))])
def test_fnv_agrees_with_reference(backend, data):
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) % (1 << 64)
    assert kernels.load_backend(backend).fnv1a64(data) == h


def _tables(seed, n, max_steps, tau=0.3):
    rng = np.random.default_rng(seed)
    params = McsParams(tau_e=tau, tau_v=tau, k=10, entailment=JaccardSimilarity())
    out = []
    for _ in range(n):
        g1, g2 = random_graph(rng, max_steps), random_graph(rng, max_steps)
        s = _score_pairs(g1, g2, params)
        src1, tgt1 = _encode(s.edges1)
        src2, tgt2 = _encode(s.edges2)
        seeds = [(c.e1, c.e2) for c in s.candidates[:10]]
        out.append((src1, tgt1, src2, tgt2, _num_nodes(g1), _num_nodes(g2), _rank_matrix(s), seeds))
    return out


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(seed):
    cy = kernels.load_backend("cython")
    for t in _tables(seed, 60, 6):
        assert cy.mcs_expand(*t) == _pykernels.mcs_expand(*t)
        assert cy.mcs_exact(*t[:7]) == _pykernels.mcs_exact(*t[:7])


@pytest.mark.parametrize("backend", BACKENDS)
def test_empty_inputs(backend):
    impl = kernels.load_backend(backend)
    assert impl.mcs_expand([], [], [1], [2], 2, 3, [], []) == []
    assert impl.mcs_exact([0], [1], [], [], 2, 1, []) == []


def test_pure_python_forced_by_environment():
    import os
    import subprocess
    import sys
    env = dict(os.environ, STEPCONF_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from stepconf import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
