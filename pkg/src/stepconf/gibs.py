"""Trainable graph mask predictor.

Architecture: node text embeddings pass through an input layer and a stack of
mean-aggregation GCN layers (symmetric neighbourhoods, self included); edge
text embeddings pass through one dense layer; the two are concatenated and a
linear head with a sigmoid gives the per-step keep probability, which is the
step's confidence.

Gradients are derived by hand and checked against central finite
differences (:func:`gradcheck`).
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .corpus import atomic_write
from .errors import ConfigError, DimensionError, EmptyInputError, ModelFormatError
from .similarity import HashedBowEmbedder, make_embedder
from .trace import ConfidenceVector, ReasoningGraph, graph_from_steps

PROB_CLAMP = 1e-7
MAGIC = b"GIBSMDL1"
LOSS_VARIANTS = ("entropy-ce", "kl-ce")


@dataclass(frozen=True)
class GibsConfig:
    embed_dim: int = 64
    hidden_dim: int = 128
    dropout: float = 0.1
    layers: int = 2
    lam: float = 1.0
    eps: float = 0.1
    loss_variant: str = "entropy-ce"
    lr: float = 1e-3
    epochs: int = 20
    patience: int = 3
    val_split: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if self.embed_dim < 1 or self.hidden_dim < 1 or self.layers < 1:
            raise ConfigError("embed_dim, hidden_dim and layers must be positive")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if not 0.0 < self.eps < 0.5:
            raise ConfigError("eps must be in (0, 0.5)")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ConfigError(f"loss_variant must be one of {LOSS_VARIANTS}")
        if self.epochs < 1 or self.patience < 1:
            raise ConfigError("epochs and patience must be >= 1")
        if not 0.0 <= self.val_split < 1.0:
            raise ConfigError("val_split must be in [0, 1)")

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown gibs keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return asdict(self)

    def replace(self, **changes):
        data = self.to_dict()
        data.update(changes)
        return GibsConfig(**data)


class GibsModel:
    """Parameters in declaration order plus a config snapshot."""

    def __init__(self, config: GibsConfig, params: Dict[str, np.ndarray], embedding=None):
        self.config = config
        self.params = params
        self.embedding = embedding or {"kind": "hashed-bow", "dim": config.embed_dim}

    @staticmethod
    def param_shapes(config: GibsConfig) -> List[Tuple[str, tuple]]:
        d, h = config.embed_dim, config.hidden_dim
        shapes = [("W_n", (h, d)), ("b_n", (h,)), ("W_e", (h, d)), ("b_e", (h,))]
        for layer in range(1, config.layers + 1):
            shapes += [(f"W_{layer}", (h, h)), (f"b_{layer}", (h,))]
        shapes += [("w_m", (2 * h,)), ("b_m", (1,))]
        return shapes

    def copy(self):
        return GibsModel(self.config, {k: v.copy() for k, v in self.params.items()}, dict(self.embedding))

    def num_parameters(self):
        return sum(v.size for v in self.params.values())


def init_model(config: GibsConfig, embedding=None) -> GibsModel:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    rng = np.random.default_rng(np.random.SeedSequence([config.rng_seed, 1]))
    params = {}
    for name, shape in GibsModel.param_shapes(config):
        if name.startswith(("W", "w")):
            fan_in = shape[-1]
            bound = 1.0 / math.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            params[name] = np.zeros(shape)
    return GibsModel(config, params, embedding)


# ------------------------------------------------------------------ features


class GraphFeatures:
    """Embedded node/edge texts and the normalised propagation matrix."""

    __slots__ = ("x_node", "x_edge", "prop")

    def __init__(self, graph: ReasoningGraph, embedder):
        n = len(graph.steps)
        self.x_node = np.array([embedder.embed(s.node_text) for s in graph.steps]).reshape(n, -1)
        self.x_edge = np.array([embedder.embed(s.edge_text) for s in graph.steps]).reshape(n, -1)
        adj = np.eye(n)
        for s in graph.steps:
            for d in s.depends_on:
                adj[s.index, d] = adj[d, s.index] = 1.0
        self.prop = adj / adj.sum(axis=1, keepdims=True)


def features(graph, embedder, config: GibsConfig) -> GraphFeatures:
    if embedder.dim != config.embed_dim:
        raise DimensionError(f"embedder dim {embedder.dim} != model embed_dim {config.embed_dim}",
                             embedder_dim=embedder.dim, model_dim=config.embed_dim)
    return graph if isinstance(graph, GraphFeatures) else GraphFeatures(graph, embedder)


def _relu(x):
    return np.maximum(x, 0.0)


def _dropout_masks(config, n_steps, rng):
    if rng is None or config.dropout == 0.0:
        return None
    keep = 1.0 - config.dropout
    return [(rng.random((n_steps, config.hidden_dim)) < keep) / keep for _ in range(config.layers)]


def _forward(model: GibsModel, feats: GraphFeatures, masks=None):
    P, cfg = model.params, model.config
    cache = {"feats": feats, "masks": masks}
    pre0 = feats.x_node @ P["W_n"].T + P["b_n"]
    h = _relu(pre0)
    cache["pre"] = [pre0]
    cache["agg"] = []
    for layer in range(1, cfg.layers + 1):
        if masks is not None:
            h = h * masks[layer - 1]
        agg = feats.prop @ h
        pre = agg @ P[f"W_{layer}"].T + P[f"b_{layer}"]
        cache["agg"].append(agg)
        cache["pre"].append(pre)
        h = _relu(pre)
    pre_e = feats.x_edge @ P["W_e"].T + P["b_e"]
    g = _relu(pre_e)
    z = np.concatenate([h, g], axis=1)
    logits = z @ P["w_m"] + P["b_m"][0]
    cache.update(pre_e=pre_e, z=z, logits=logits)
    p = np.clip(expit(logits), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return p, cache


def forward(model: GibsModel, graph, embedder, train_mode: bool = False, rng=None) -> np.ndarray:
    """Per-step keep probabilities. Dropout only when ``train_mode`` (needs ``rng``)."""
    feats = features(graph, embedder, model.config)
    masks = None
    if train_mode:
        if rng is None:
            rng = np.random.default_rng(model.config.rng_seed)
        masks = _dropout_masks(model.config, len(feats.x_node), rng)
    return _forward(model, feats, masks)[0]


# ---------------------------------------------------------------------- loss


def _clamp(p):
    return np.clip(np.asarray(p, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)


def entropy_term(p) -> float:
    p = _clamp(p)
    return float(np.sum(-p * np.log(p) - (1 - p) * np.log(1 - p)))


def ce_term(p, m) -> float:
    p = _clamp(p)
    m = np.asarray(m, dtype=float)
    return float(np.sum(-m * np.log(p) - (1 - m) * np.log(1 - p)))


def kl_term(p, eps) -> float:
    p = _clamp(p)
    return float(np.sum(p * np.log(p / eps) + (1 - p) * np.log((1 - p) / (1 - eps))))


def loss(p, mask, config: GibsConfig) -> float:
    """``H(p) + lam*CE(p, m)`` (entropy-ce) or ``KL(p || Bern(eps)) + lam*CE`` (kl-ce)."""
    p = np.asarray(p, dtype=float)
    m = np.asarray(mask, dtype=float)
    if p.shape != m.shape:
        raise DimensionError(f"probabilities ({p.size}) and mask ({m.size}) differ in length")
    reg = entropy_term(p) if config.loss_variant == "entropy-ce" else kl_term(p, config.eps)
    return reg + config.lam * ce_term(p, m)


def _loss_grad_p(p, m, config):
    """dL/dp for the clamped loss (zero where the clamp is active)."""
    pc = _clamp(p)
    if config.loss_variant == "entropy-ce":
        d_reg = np.log((1 - pc) / pc)
    else:
        d_reg = np.log(pc / config.eps) - np.log((1 - pc) / (1 - config.eps))
    d_ce = -m / pc + (1 - m) / (1 - pc)
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    return (d_reg + config.lam * d_ce) * inside


def _backward(model: GibsModel, cache, p, m) -> Dict[str, np.ndarray]:
    P, cfg = model.params, model.config
    feats, masks = cache["feats"], cache["masks"]
    h_dim = cfg.hidden_dim
    sig = expit(cache["logits"])
    g_logit = _loss_grad_p(p, m, cfg) * sig * (1 - sig)
    grads = {}
    z = cache["z"]
    grads["w_m"] = z.T @ g_logit
    grads["b_m"] = np.array([g_logit.sum()])
    dz = np.outer(g_logit, P["w_m"])
    dh, dg = dz[:, :h_dim], dz[:, h_dim:]
    dpre_e = dg * (cache["pre_e"] > 0)
    grads["W_e"] = dpre_e.T @ feats.x_edge
    grads["b_e"] = dpre_e.sum(axis=0)
    for layer in range(cfg.layers, 0, -1):
        dpre = dh * (cache["pre"][layer] > 0)
        grads[f"W_{layer}"] = dpre.T @ cache["agg"][layer - 1]
        grads[f"b_{layer}"] = dpre.sum(axis=0)
        dh = feats.prop.T @ (dpre @ P[f"W_{layer}"])
        if masks is not None:
            dh = dh * masks[layer - 1]
    dpre0 = dh * (cache["pre"][0] > 0)
    grads["W_n"] = dpre0.T @ feats.x_node
    grads["b_n"] = dpre0.sum(axis=0)
    return {name: grads[name] for name in P}


def grad(model: GibsModel, graph, mask, embedder, masks=None):
    """Analytic gradient of loss(forward(graph), mask) for every parameter.

    ``masks`` optionally fixes the dropout masks (one per GCN layer input).
    Returns ``(loss_value, grads)``.
    """
    feats = features(graph, embedder, model.config)
    m = np.asarray(mask, dtype=float)
    if m.shape != (len(feats.x_node),):
        raise DimensionError("mask length differs from step count")
    p, cache = _forward(model, feats, masks)
    return loss(p, m, model.config), _backward(model, cache, p, m)


# ----------------------------------------------------------------- gradcheck


def numeric_grad(model: GibsModel, feats: GraphFeatures, m, step: float = 1e-5):
    out = {}
    for name, value in model.params.items():
        g = np.zeros_like(value)
        flat, gflat = value.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss(_forward(model, feats)[0], m, model.config)
            flat[i] = orig - step
            down = loss(_forward(model, feats)[0], m, model.config)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        out[name] = g
    return out


_WORDS = ["add", "total", "price", "pencils", "cost", "sum", "each", "three", "box", "per",
          "minus", "half", "left", "apples", "times", "rate", "hours", "miles", "share", "find"]


def random_graph(rng, max_steps=6, qid="q", tid="t") -> ReasoningGraph:
    n = int(rng.integers(1, max_steps + 1))
    steps = []
    for j in range(n):
        k = int(rng.integers(0, min(j, 2) + 1))
        deps = sorted(rng.choice(j, size=k, replace=False).tolist()) if j and k else []
        edge = " ".join(rng.choice(_WORDS, size=int(rng.integers(1, 5))))
        node = f"{rng.choice(_WORDS)} = {int(rng.integers(0, 99))}"
        steps.append((edge, node, deps))
    return graph_from_steps(qid, tid, steps, steps[-1][1])


def max_relative_error(analytic, numeric, floor=1e-5) -> float:
    worst = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
    return worst


def gradcheck(config: Optional[GibsConfig] = None, n_graphs: int = 20, max_steps: int = 6,
              seed: int = 0, step: float = 1e-5, kink_margin: float = 1e-3) -> dict:
    """Compare analytic and central-difference gradients on random graphs."""
    config = config or GibsConfig(embed_dim=8, hidden_dim=16, dropout=0.0)
    rng = np.random.default_rng(seed)
    embedder = HashedBowEmbedder(config.embed_dim)
    worst = 0.0
    per_graph = []
    for g_idx in range(n_graphs):
        variant = LOSS_VARIANTS[g_idx % 2]
        cfg = config.replace(rng_seed=int(rng.integers(1 << 31)), loss_variant=variant,
                             lam=float(rng.uniform(0.1, 2.0)))
        model = init_model(cfg)
        graph = random_graph(rng, max_steps)
        feats = features(graph, embedder, cfg)
        # random biases; redraw while a pre-activation sits within finite-difference
        # reach of the ReLU kink, where central differences are meaningless
        for _ in range(100):
            for name, value in model.params.items():
                if name.startswith("b"):
                    value[...] = rng.uniform(-0.5, 0.5, size=value.shape)
            cache = _forward(model, feats)[1]
            nearest = min(float(np.abs(x).min()) for x in cache["pre"] + [cache["pre_e"]])
            if nearest > kink_margin:
                break
        mask = rng.uniform(0, 1, size=len(graph.steps))
        _, analytic = grad(model, feats, mask, embedder)
        numeric = numeric_grad(model, feats, mask, step)
        err = max_relative_error(analytic, numeric)
        per_graph.append(err)
        worst = max(worst, err)
    return {"graphs": n_graphs, "max_rel_error": worst, "per_graph": per_graph,
            "parameters": init_model(config).num_parameters()}


# ------------------------------------------------------------------ training


@dataclass
class TrainingHistory:
    train_loss: List[float]
    val_loss: List[float]
    wall_time: List[float]
    stopped_early: bool = False
    best_epoch: int = 0

    def to_dict(self):
        return asdict(self)


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _eval_loss(model, items):
    if not items:
        return float("nan")
    return float(np.mean([loss(_forward(model, f)[0], m, model.config) for f, m in items]))


def train(model: GibsModel, corpus: Sequence[Tuple[ReasoningGraph, Sequence[float]]], embedder=None,
          config: Optional[GibsConfig] = None, val_split: Optional[float] = None,
          log=None) -> Tuple[GibsModel, TrainingHistory]:
    """Per-graph Adam updates with early stopping on validation loss.

    The returned model carries the parameters from the best validation epoch.
    ``model`` is not modified.
    """
    config = config or model.config
    if not corpus:
        raise EmptyInputError("training corpus is empty")
    model = model.copy()
    model.config = config
    embedder = embedder or make_embedder(model.embedding)
    items = []
    for graph, mask in corpus:
        m = np.asarray(mask, dtype=float)
        if m.shape != (len(graph.steps),):
            raise DimensionError(f"mask for {graph.trajectory_id} has {m.size} values for "
                                 f"{len(graph.steps)} steps")
        items.append((features(graph, embedder, config), m))

    seeds = np.random.SeedSequence([config.rng_seed, 2]).spawn(2)
    order_rng, drop_rng = np.random.default_rng(seeds[0]), np.random.default_rng(seeds[1])
    split = config.val_split if val_split is None else val_split
    idx = order_rng.permutation(len(items))
    n_val = int(round(split * len(items)))
    if split > 0 and len(items) > 1:
        n_val = min(max(n_val, 1), len(items) - 1)
    else:
        n_val = 0
    val_items = [items[i] for i in idx[:n_val]]
    train_items = [items[i] for i in idx[n_val:]]
    monitor = val_items or train_items

    adam = _Adam(model.params, config.lr)
    history = TrainingHistory([], [], [])
    best_val, best_params, bad = math.inf, None, 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        losses = []
        for i in order_rng.permutation(len(train_items)):
            feats, m = train_items[i]
            masks = _dropout_masks(config, len(m), drop_rng)
            value, grads = grad(model, feats, m, embedder, masks)
            losses.append(value)
            adam.step(model.params, grads)
        val = _eval_loss(model, monitor)
        history.train_loss.append(float(np.mean(losses)))
        history.val_loss.append(val)
        history.wall_time.append(time.perf_counter() - t0)
        if log is not None:
            log(epoch, history.train_loss[-1], val)
        if val < best_val:
            best_val, bad = val, 0
            best_params = {k: v.copy() for k, v in model.params.items()}
            history.best_epoch = epoch
        else:
            bad += 1
            if bad >= config.patience:
                history.stopped_early = True
                break
    if best_params is not None:
        model.params = best_params
    return model, history


def score(model: GibsModel, graph: ReasoningGraph, embedder=None) -> ConfidenceVector:
    """Eval-mode keep probabilities as step confidences."""
    embedder = embedder or make_embedder(model.embedding)
    p = forward(model, graph, embedder, train_mode=False)
    return ConfidenceVector(graph.trajectory_id, tuple(float(x) for x in p))


# ------------------------------------------------------------------ model io


def _header(model: GibsModel) -> bytes:
    header = {
        "config": model.config.to_dict(),
        "embedding": model.embedding,
        "params": [{"name": n, "shape": list(s)} for n, s in GibsModel.param_shapes(model.config)],
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def dumps_model(model: GibsModel) -> bytes:
    header = _header(model)
    parts = [MAGIC, struct.pack("<Q", len(header)), header]
    for name, shape in GibsModel.param_shapes(model.config):
        arr = np.asarray(model.params[name], dtype="<f8")
        if arr.shape != shape:
            raise ModelFormatError(f"parameter {name} has shape {arr.shape}, expected {shape}")
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def loads_model(blob: bytes) -> GibsModel:
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise ModelFormatError("not a GIBS model file (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if 16 + hlen > len(blob):
        raise ModelFormatError("truncated model header")
    try:
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
        config = GibsConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError, ConfigError) as exc:
        raise ModelFormatError(f"unreadable model header: {exc}") from None
    expected = GibsModel.param_shapes(config)
    if [(p["name"], tuple(p["shape"])) for p in header.get("params", [])] != expected:
        raise ModelFormatError("parameter table does not match the config shapes")
    offset = 16 + hlen
    params = {}
    for name, shape in expected:
        n = int(np.prod(shape)) * 8
        if offset + n > len(blob):
            raise ModelFormatError(f"truncated model file in parameter {name}")
        params[name] = np.frombuffer(blob, dtype="<f8", count=n // 8, offset=offset).astype(float).reshape(shape)
        offset += n
    if offset != len(blob):
        raise ModelFormatError(f"{len(blob) - offset} trailing bytes after parameters")
    for name, value in params.items():
        if not np.all(np.isfinite(value)):
            raise ModelFormatError(f"parameter {name} contains non-finite values")
    return GibsModel(config, params, header.get("embedding"))


def save_model(model: GibsModel, path):
    atomic_write(path, dumps_model(model))


def load_model(path) -> GibsModel:
    with open(path, "rb") as fh:
        return loads_model(fh.read())
