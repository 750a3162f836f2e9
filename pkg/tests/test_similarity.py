import json
import math
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stepconf.errors import ConfigError, EmbeddingMissError, EmptyInputError, ProviderError
from stepconf.similarity import (CosineSimilarity, ExactSimilarity, HashedBowEmbedder,
                                 JaccardSimilarity, RemoteEntailment, TableEmbedder, aggregate,
                                 embed, entail, make_embedder, make_similarity, sim, step_text)
from stepconf.trace import Step

FNV_A = 0xAF63DC4C8601EC8C
FNV_B = 0xAF63DF4C8601F1A5


def fnv_reference(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def test_fnv_known_values():
    assert fnv_reference(b"a") == FNV_A
    assert fnv_reference(b"b") == FNV_B
    assert (FNV_A % 8, FNV_B % 8) == (4, 5)


def test_hashed_bow_hand_computed():
    v = embed(HashedBowEmbedder(8), "a b a")
    expected = np.zeros(8)
    expected[4], expected[5] = 2.0, 1.0
    np.testing.assert_allclose(v, expected / math.sqrt(5), rtol=0, atol=1e-15)


def test_empty_text_embeds_to_zero():
    assert not embed(HashedBowEmbedder(8), "").any()
    assert not embed(HashedBowEmbedder(8), " ,;_ ").any()


def test_tokenization_lowercases_and_splits():
    e = HashedBowEmbedder(32)
    np.testing.assert_array_equal(embed(e, "Apples, and PEARS_now"), embed(e, "apples and pears now"))


def test_exact_and_jaccard_examples():
    assert sim(ExactSimilarity(), "x=5", "x=5") == 1.0
    assert sim(ExactSimilarity(), "x=5", "x=6") == 0.0
    assert sim(ExactSimilarity(), "  X=5 ", "x=5") == 1.0
    assert sim(JaccardSimilarity(), "a b", "b c") == pytest.approx(1 / 3, abs=1e-15)
    assert entail(JaccardSimilarity(), "p q", "r s") == 0.0


def test_cosine_orthogonal_maps_to_half():
    e = HashedBowEmbedder(8)
    assert CosineSimilarity(e).score("a", "b") == 0.5  # buckets 4 and 5
    assert CosineSimilarity(e).score("a b", "a b") == pytest.approx(1.0)


def test_cosine_scale_invariant():
    base = {"x": [1.0, 2.0, 0.0], "y": [0.5, -1.0, 3.0]}
    scaled = {"x": [3.0, 6.0, 0.0], "y": [0.05, -0.1, 0.3]}
    a = CosineSimilarity(TableEmbedder(base)).score("x", "y")
    b = CosineSimilarity(TableEmbedder(scaled)).score("x", "y")
    assert a == pytest.approx(b, abs=1e-12)


def test_step_text_modes():
    s = Step(0, "add", "x = 2")
    assert step_text(s) == "add x = 2"
    assert step_text(s, "edge") == "add"
    assert step_text(Step(0, "add", "")) == "add"


def test_table_embedder(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text(json.dumps({"text": "hi", "vector": [1, 0, 0]}) + "\n")
    strict = make_embedder({"kind": "table", "path": str(p)})
    assert strict.embed("hi").tolist() == [1.0, 0.0, 0.0]
    with pytest.raises(EmbeddingMissError) as info:
        strict.embed("bye")
    assert info.value.details["text"] == "bye"
    lenient = TableEmbedder.from_file(p, fallback="hash")
    assert lenient.embed("bye").shape == (3,)


def test_table_dimension_mismatch():
    with pytest.raises(ConfigError):
        TableEmbedder({"a": [1, 2], "b": [1, 2, 3]})


@pytest.mark.parametrize("mode,scores,expected", [("max", [0.2, 0.9, 0.4], 0.9), ("mean", [0.0, 1.0], 0.5),
                                                  ("mean", [0.3], 0.3)])
def test_aggregate(mode, scores, expected):
    assert aggregate(mode, scores) == expected


def test_aggregate_empty():
    with pytest.raises(EmptyInputError):
        aggregate("max", [])


_text = st.text(max_size=30)
_providers = [ExactSimilarity(), JaccardSimilarity(), CosineSimilarity(HashedBowEmbedder(16))]


@given(_text, _text)
def test_scores_in_unit_interval_and_symmetric(a, b):
    for p in _providers:
        s = p.score(a, b)
        assert 0.0 <= s <= 1.0
        assert s == p.score(b, a)


@given(st.text(alphabet="abcdef xyz", min_size=1).filter(lambda t: t.strip()))
def test_self_similarity_is_one(a):
    for p in _providers:
        assert p.score(a, a) == pytest.approx(1.0)


def test_make_similarity_unknown():
    with pytest.raises(ConfigError):
        make_similarity({"kind": "nope"})


class _Handler(BaseHTTPRequestHandler):
    replies = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        self.server.seen.append(body)
        status, payload = self.replies.pop(0) if self.replies else (200, {"entail": 0.8})
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    srv.seen = []
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv
    srv.shutdown()
    _Handler.replies = []


def test_remote_entailment_pass_through(server):
    url = f"http://127.0.0.1:{server.server_port}/"
    assert RemoteEntailment(url).score("p", "h") == 0.8
    assert server.seen == [{"premise": "p", "hypothesis": "h"}]


def test_remote_entailment_retries_once_then_fails(server):
    url = f"http://127.0.0.1:{server.server_port}/"
    _Handler.replies = [(500, {}), (200, {"entail": 0.3})]
    assert RemoteEntailment(url).score("p", "h") == 0.3
    _Handler.replies = [(200, {"oops": 1}), (500, {})]
    with pytest.raises(ProviderError) as info:
        RemoteEntailment(url).score("p", "h")
    assert info.value.retryable and info.value.exit_code == 3
