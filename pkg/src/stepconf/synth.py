"""Planted-consensus synthetic corpora.

Each question gets a small DAG of anchor steps with fixed texts. Correct
trajectories contain every anchor (in some topological order, optionally with
paraphrase distractors); wrong trajectories corrupt exactly one anchor.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError
from .trace import ReasoningGraph, Step, Trajectory, TrajectorySet

CORRUPTION_MODES = ("replace-anchor", "extra-step", "wrong-result")

_NOUNS = [
    "apples", "pencils", "notebooks", "tickets", "marbles", "books", "coins", "eggs",
    "boxes", "stamps", "cookies", "bottles", "chairs", "shirts", "plants", "cards",
    "bricks", "tiles", "candles", "buttons", "ribbons", "lemons", "seeds", "shells",
    "bags", "cups", "pages", "songs", "miles", "hours", "tokens", "crates",
]
_OPS = ["add", "multiply", "subtract", "divide", "sum", "scale", "combine", "halve", "triple"]
_PARAPHRASE = ["restate", "recall", "note"]
_NOISE = ["guess", "assume", "estimate", "round", "swap", "ignore", "invert", "reuse"]


@dataclass(frozen=True)
class SynthConfig:
    num_questions: int = 20
    anchors_per_question: int = 4
    correct_per_question: int = 12
    wrong_per_question: int = 8
    distractor_rate: float = 0.0
    corruption_mode: str = "replace-anchor"
    rng_seed: int = 0
    max_parents: int = 2
    # fraction of questions whose wrong trajectories outnumber the correct
    # ones and all share one corruption (wrong modal answer)
    trap_questions: float = 0.0
    # in ordinary questions, probability a wrong trajectory reuses the shared trap
    trap_rate: float = 0.0

    def __post_init__(self):
        for name in ("num_questions", "anchors_per_question", "correct_per_question",
                     "wrong_per_question", "max_parents"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"synth.{name} must be >= 1")
        for name in ("distractor_rate", "trap_questions", "trap_rate"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"synth.{name} must be in [0, 1]")
        if self.corruption_mode not in CORRUPTION_MODES:
            raise ConfigError(f"synth.corruption_mode must be one of {CORRUPTION_MODES}")
        if self.trap_questions > 0 and self.correct_per_question == self.wrong_per_question:
            raise ConfigError("trap questions need correct_per_question != wrong_per_question")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return asdict(self)


class _Question:
    """Planted anchors for one question."""

    def __init__(self, q, cfg, rng):
        self.q = q
        self.cfg = cfg
        self.rng = rng
        n = cfg.anchors_per_question
        nouns = rng.choice(len(_NOUNS), size=min(n, len(_NOUNS)), replace=False).tolist()
        while len(nouns) < n:
            nouns.append(int(rng.integers(len(_NOUNS))))
        self.nouns = [f"{_NOUNS[i]}{'' if k < len(_NOUNS) else k}" for k, i in enumerate(nouns)]
        self.parents = [()]
        for a in range(1, n):
            k = int(rng.integers(1, min(cfg.max_parents, a) + 1))
            self.parents.append(tuple(sorted(rng.choice(a, size=k, replace=False).tolist())))
        self.values = [int(v) for v in rng.integers(2, 500, size=n)]
        self.ops = [_OPS[int(i)] for i in rng.integers(len(_OPS), size=n)]
        self.gold = str(self.values[-1])
        self.text = (f"Question {q}: starting from the given data, work out the "
                     f"{self.nouns[-1]} through {n} intermediate quantities.")
        self.trap = self.corruption()

    def anchor_texts(self, a):
        inputs = ", ".join(self.nouns[p] for p in self.parents[a]) if a else "the given data"
        return (f"{self.ops[a]} the {self.nouns[a]} using {inputs}",
                f"{self.nouns[a]} = {self.values[a]}")

    def corruption(self):
        rng = self.rng
        a = int(rng.integers(self.cfg.anchors_per_question))
        wrong_op = _NOISE[int(rng.integers(len(_NOISE)))]
        wrong_val = int(rng.integers(500, 100000))
        answer = int(rng.integers(500, 100000))
        return a, wrong_op, wrong_val, str(answer)

    def topo_order(self):
        n = self.cfg.anchors_per_question
        remaining = set(range(n))
        done = set()
        order = []
        while remaining:
            ready = sorted(a for a in remaining if set(self.parents[a]) <= done)
            pick = ready[int(self.rng.integers(len(ready)))]
            order.append(pick)
            done.add(pick)
            remaining.discard(pick)
        return order

    def trajectory(self, tid, corrupt=None):
        """Build one trajectory; ``corrupt`` is None or a corruption tuple."""
        cfg, rng = self.cfg, self.rng
        rows = []  # (edge, node, parent anchor ids / row refs, label)
        pos = {}
        for a in self.topo_order():
            edge, node = self.anchor_texts(a)
            label = True
            if corrupt is not None and corrupt[0] == a:
                _, wrong_op, wrong_val, _ans = corrupt
                if cfg.corruption_mode == "replace-anchor":
                    edge = f"{wrong_op} the {self.nouns[a]} from {wrong_val}"
                    node = f"{self.nouns[a]} = {wrong_val}"
                    label = False
                elif cfg.corruption_mode == "wrong-result":
                    node = f"{self.nouns[a]} = {wrong_val}"
                    label = False
            deps = [pos[p] for p in self.parents[a]]
            pos[a] = len(rows)
            rows.append((edge, node, deps, label))
            if corrupt is not None and corrupt[0] == a and cfg.corruption_mode == "extra-step":
                _, wrong_op, wrong_val, _ans = corrupt
                rows.append((f"{wrong_op} the {self.nouns[a]} again with {wrong_val}",
                             f"{self.nouns[a]} = {wrong_val}", [pos[a]], False))
            if cfg.distractor_rate > 0 and rng.random() < cfg.distractor_rate:
                verb = _PARAPHRASE[int(rng.integers(len(_PARAPHRASE)))]
                rows.append((f"{verb} the {self.nouns[a]}", node, [pos[a]], True))
        steps = tuple(Step(j, e, n, tuple(sorted(d))) for j, (e, n, d, _l) in enumerate(rows))
        answer = self.gold if corrupt is None else corrupt[3]
        graph = ReasoningGraph(f"q{self.q:03d}", tid, steps, answer)
        return Trajectory(graph, corrupt is None, tuple(r[3] for r in rows))


def synth_corpus(config: SynthConfig) -> list[TrajectorySet]:
    """Generate ``config.num_questions`` labelled trajectory sets, deterministically."""
    if isinstance(config, dict):
        config = SynthConfig.from_dict(config)
    n_trap = int(round(config.trap_questions * config.num_questions))
    picker = np.random.default_rng(np.random.SeedSequence([config.rng_seed, 0x7A9]))
    trap_qs = set(picker.choice(config.num_questions, size=n_trap, replace=False).tolist())
    sets = []
    for q in range(config.num_questions):
        rng = np.random.default_rng(np.random.SeedSequence([config.rng_seed, q]))
        question = _Question(q, config, rng)
        n_c, n_w = config.correct_per_question, config.wrong_per_question
        trap_all = q in trap_qs
        if trap_all:
            n_c, n_w = min(n_c, n_w), max(n_c, n_w)
        kinds = [True] * n_c + [False] * n_w
        rng.shuffle(kinds)
        trajs = []
        for i, ok in enumerate(kinds):
            tid = f"q{q:03d}-t{i:02d}"
            if ok:
                trajs.append(question.trajectory(tid))
                continue
            if trap_all or (config.trap_rate > 0 and rng.random() < config.trap_rate):
                corrupt = question.trap
            else:
                corrupt = question.corruption()
                while corrupt[3] == question.gold:
                    corrupt = question.corruption()
            trajs.append(question.trajectory(tid, corrupt))
        sets.append(TrajectorySet(f"q{q:03d}", question.text, question.gold, tuple(trajs)))
    return sets
