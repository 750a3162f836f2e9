"""Similarity, embedding and entailment providers.

All scores live in [0, 1]. Proxy entailment reuses any similarity provider
(and is therefore symmetric); :class:`RemoteEntailment` talks to an external
NLI service over a one-endpoint JSON protocol.
"""

from __future__ import annotations

import json
import math
import re
import threading
import urllib.error
import urllib.request
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import kernels
from .errors import ConfigError, EmbeddingMissError, EmptyInputError, ProviderError
from .trace import Step

_SPLIT = re.compile(r"[\W_]+")
_WS = re.compile(r"\s+")

TextLike = Union[str, Step]


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return [t for t in _SPLIT.split(text.lower()) if t]


def canonical_text(text: str) -> str:
    return _WS.sub(" ", text.strip()).lower()


def step_text(item: TextLike, mode: str = "both") -> str:
    """Text compared for a step: ``edge node`` (default) or the edge text alone."""
    if isinstance(item, Step):
        if mode == "edge" or not item.node_text:
            return item.edge_text
        return f"{item.edge_text} {item.node_text}"
    return item


# ---------------------------------------------------------------- embeddings


class HashedBowEmbedder:
    """Bag of words hashed with 64-bit FNV-1a into ``dim`` buckets, L2-normalised."""

    kind = "hashed-bow"

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ConfigError("embedding dim must be >= 1")
        self.dim = int(dim)

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for tok in tokenize(text):
            vec[kernels.fnv1a64(tok.encode("utf-8")) % self.dim] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec

    def to_config(self):
        return {"kind": self.kind, "dim": self.dim}


class TableEmbedder:
    """Exact-lookup embeddings loaded from a JSON-lines table.

    ``fallback="hash"`` embeds missing texts with a hashed bag of words of the
    same dimension; ``fallback="error"`` raises.
    """

    kind = "table"

    def __init__(self, table: Mapping[str, Sequence[float]], dim: Optional[int] = None,
                 fallback: str = "error", path: Optional[str] = None):
        if fallback not in ("error", "hash"):
            raise ConfigError("table fallback must be 'error' or 'hash'")
        self.table = {k: np.asarray(v, dtype=float) for k, v in table.items()}
        if dim is None:
            if not self.table:
                raise ConfigError("empty embedding table needs an explicit dim")
            dim = len(next(iter(self.table.values())))
        self.dim = int(dim)
        for text, vec in self.table.items():
            if vec.shape != (self.dim,):
                raise ConfigError(f"table vector for {text!r} has length {vec.size}, expected {self.dim}")
        self.fallback = fallback
        self.path = path
        self._hash = HashedBowEmbedder(self.dim)

    @classmethod
    def from_file(cls, path, fallback="error"):
        table = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    table[rec["text"]] = rec["vector"]
                except (ValueError, KeyError, TypeError):
                    raise ConfigError(f"{path}:{lineno}: expected {{\"text\":str,\"vector\":[float]}}") from None
        return cls(table, fallback=fallback, path=str(path))

    def embed(self, text: str) -> np.ndarray:
        vec = self.table.get(text)
        if vec is not None:
            return vec.copy()
        if self.fallback == "hash":
            return self._hash.embed(text)
        raise EmbeddingMissError(f"text not in embedding table: {text!r}", text=text)

    def to_config(self):
        return {"kind": self.kind, "dim": self.dim, "path": self.path, "fallback": self.fallback}


def embed(provider, text: str) -> np.ndarray:
    return provider.embed(text)


def make_embedder(cfg: Optional[Mapping]) -> Union[HashedBowEmbedder, TableEmbedder]:
    cfg = dict(cfg or {})
    kind = cfg.get("kind", "hashed-bow")
    if kind == "hashed-bow":
        return HashedBowEmbedder(int(cfg.get("dim", 64)))
    if kind == "table":
        if not cfg.get("path"):
            raise ConfigError("table embedding needs a 'path'")
        emb = TableEmbedder.from_file(cfg["path"], fallback=cfg.get("fallback", "error"))
        if "dim" in cfg and int(cfg["dim"]) != emb.dim:
            raise ConfigError(f"table dim {emb.dim} != configured dim {cfg['dim']}")
        return emb
    raise ConfigError(f"unknown embedding kind {kind!r}")


# -------------------------------------------------------------- similarities


class ExactSimilarity:
    kind = "exact"
    symmetric = True

    def score(self, a: str, b: str) -> float:
        return 1.0 if canonical_text(a) == canonical_text(b) else 0.0


class JaccardSimilarity:
    kind = "jaccard"
    symmetric = True

    def score(self, a: str, b: str) -> float:
        sa, sb = set(tokenize(a)), set(tokenize(b))
        if not sa and not sb:
            return 1.0
        return len(sa & sb) / len(sa | sb)


class CosineSimilarity:
    """Embedding cosine mapped affinely to [0, 1]: (1 + cos) / 2."""

    kind = "cosine-embedding"
    symmetric = True

    def __init__(self, embedder=None):
        self.embedder = embedder if embedder is not None else HashedBowEmbedder()

    def score(self, a: str, b: str) -> float:
        u, v = self.embedder.embed(a), self.embedder.embed(b)
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        cos = 0.0 if nu == 0 or nv == 0 else float(u @ v) / (nu * nv)
        return min(1.0, max(0.0, (1.0 + cos) / 2.0))


class RemoteEntailment:
    """Client for ``POST {"premise", "hypothesis"} -> {"entail": float}``.

    One retry, then :class:`ProviderError`. In-flight requests are bounded by
    ``max_in_flight``.
    """

    kind = "remote-entailment"
    symmetric = False

    def __init__(self, url: str, timeout: float = 10.0, max_in_flight: int = 4, retries: int = 1):
        self.url = url
        self.timeout = timeout
        self.retries = retries
        self._slots = threading.BoundedSemaphore(max(1, int(max_in_flight)))

    def _post(self, payload):
        body = json.dumps(payload).encode("utf-8")
        req = urllib.request.Request(self.url, data=body, method="POST",
                                     headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))

    def score(self, premise: str, hypothesis: str) -> float:
        last = None
        with self._slots:
            for _ in range(self.retries + 1):
                try:
                    data = self._post({"premise": premise, "hypothesis": hypothesis})
                except (urllib.error.URLError, OSError, ValueError) as exc:
                    last = exc
                    continue
                value = data.get("entail") if isinstance(data, dict) else None
                if not isinstance(value, (int, float)) or isinstance(value, bool) \
                        or not math.isfinite(value):
                    last = ValueError(f"bad response body: {data!r}")
                    continue
                return min(1.0, max(0.0, float(value)))
        raise ProviderError(f"entailment request to {self.url} failed: {last}", url=self.url)


def sim(provider, a: TextLike, b: TextLike, text_mode: str = "both") -> float:
    """Similarity of two steps (or texts) under ``provider``."""
    return provider.score(step_text(a, text_mode), step_text(b, text_mode))


def entail(provider, premise: str, hypothesis: str) -> float:
    """Entailment score; any similarity provider serves as a symmetric proxy."""
    return provider.score(premise, hypothesis)


def make_similarity(cfg: Optional[Mapping], embedder=None):
    cfg = dict(cfg or {})
    kind = cfg.get("kind", "exact")
    if kind == "exact":
        return ExactSimilarity()
    if kind == "jaccard":
        return JaccardSimilarity()
    if kind == "cosine-embedding":
        return CosineSimilarity(embedder if embedder is not None else make_embedder(cfg.get("embedding")))
    if kind == "remote-entailment":
        if not cfg.get("url"):
            raise ConfigError("remote-entailment needs a 'url'")
        return RemoteEntailment(cfg["url"], timeout=float(cfg.get("timeout", 10.0)),
                                max_in_flight=int(cfg.get("max_in_flight", 4)))
    raise ConfigError(f"unknown similarity kind {kind!r}")


# ---------------------------------------------------------------- aggregation


AGGREGATORS = ("max", "mean")


def aggregate(mode: str, scores: Sequence[float]) -> float:
    if mode not in AGGREGATORS:
        raise ConfigError(f"unknown aggregator {mode!r}")
    if len(scores) == 0:
        raise EmptyInputError("cannot aggregate an empty score list")
    if mode == "max":
        return float(max(scores))
    return float(math.fsum(scores) / len(scores))
