"""Step-level evaluation metrics: AUROC, AUCPR, ACC@c%, ECE, first-error filtering."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyInputError, SingleClassError, TraceError


@dataclass(frozen=True)
class LabeledScores:
    scores: tuple
    labels: tuple

    def __post_init__(self):
        scores = tuple(float(s) for s in self.scores)
        labels = tuple(int(bool(x)) for x in self.labels)
        if len(scores) != len(labels):
            raise EmptyInputError(f"{len(scores)} scores but {len(labels)} labels")
        if not scores:
            raise EmptyInputError("no labelled scores")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self):
        return len(self.scores)

    @property
    def positives(self):
        return sum(self.labels)


def _arrays(data):
    if not isinstance(data, LabeledScores):
        data = LabeledScores(*data)
    return np.asarray(data.scores, dtype=float), np.asarray(data.labels, dtype=int)


def auroc(data) -> float:
    """Mann-Whitney AUROC: P(random positive outranks random negative), ties count 1/2."""
    s, y = _arrays(data)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUROC needs at least one positive and one negative")
    ranks = rankdata(s, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _descending(s):
    # stable sort: ties keep original index order
    return np.argsort(-s, kind="stable")


def aucpr(data) -> float:
    """Average precision over the ranking by descending score (ties by index)."""
    s, y = _arrays(data)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise SingleClassError("AUCPR needs at least one positive")
    ordered = y[_descending(s)]
    hits = np.cumsum(ordered)
    precision = hits / np.arange(1, len(ordered) + 1)
    return float(precision[ordered == 1].sum() / n_pos)


def keep_count(n: int, c_percent) -> int:
    """Items kept at coverage c%: ceil(n * c / 100), computed exactly."""
    if not 0 < c_percent <= 100:
        raise ValueError("coverage must be in (0, 100]")
    return math.ceil(Fraction(n) * Fraction(c_percent) / 100)


def acc_at(data, c_percent=80) -> float:
    """Accuracy among the top-c% most confident items."""
    s, y = _arrays(data)
    k = keep_count(len(s), c_percent)
    return float(y[_descending(s)[:k]].mean())


def ece(data, bins: int = 10) -> float:
    """Expected calibration error over equal-width bins [k/B, (k+1)/B), last bin closed."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    s, y = _arrays(data)
    edges = np.arange(bins + 1) / bins
    idx = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, bins - 1)
    total = 0.0
    for b in range(bins):
        sel = idx == b
        count = int(sel.sum())
        if count:
            total += count / len(s) * abs(y[sel].mean() - s[sel].mean())
    return float(total)


def first_error_prefix(labels: Sequence[bool]) -> list[int]:
    """Indices kept for first-error evaluation: up to and including the first wrong step."""
    for j, ok in enumerate(labels):
        if not ok:
            return list(range(j + 1))
    return list(range(len(labels)))


def _by_id(t):
    return t.trajectory_id


def labeled_scores(trajectories, confidences: Mapping[str, Sequence[float]],
                   first_error: bool = False, key=_by_id) -> LabeledScores:
    """Pool per-step (score, label) pairs across trajectories.

    ``confidences`` maps ``key(trajectory)`` (default: trajectory_id) to
    per-step scores; trajectories without an entry are skipped. With ``first_error`` each trajectory is cut after its
    first incorrect step.
    """
    scores, labels = [], []
    for t in trajectories:
        if t.step_labels is None:
            raise TraceError(f"trajectory {t.trajectory_id} has no step labels",
                             trajectory_id=t.trajectory_id)
        conf = confidences.get(key(t))
        if conf is None:
            continue
        if len(conf) != len(t.step_labels):
            raise TraceError(f"trajectory {t.trajectory_id}: {len(conf)} scores for "
                             f"{len(t.step_labels)} steps", trajectory_id=t.trajectory_id)
        keep = first_error_prefix(t.step_labels) if first_error else range(len(conf))
        for j in keep:
            scores.append(conf[j])
            labels.append(t.step_labels[j])
    return LabeledScores(tuple(scores), tuple(labels))


def first_error_filter(trajectories, confidences: Mapping[str, Sequence[float]]) -> LabeledScores:
    return labeled_scores(trajectories, confidences, first_error=True)


@dataclass(frozen=True)
class MetricReport:
    auroc: float
    aucpr: float
    acc_at_c: float
    c: float
    ece: float
    bins: int
    n: int
    positives: int

    def to_dict(self):
        c = int(self.c) if float(self.c).is_integer() else self.c
        return {
            "auroc": self.auroc,
            "aucpr": self.aucpr,
            "acc_at": {"c": c, "value": self.acc_at_c},
            "ece": {"bins": self.bins, "value": self.ece},
            "n": self.n,
            "positives": self.positives,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def to_csv(self) -> str:
        row = {"auroc": self.auroc, "aucpr": self.aucpr, "acc_at_c": self.acc_at_c, "c": self.c,
               "ece": self.ece, "ece_bins": self.bins, "n": self.n, "positives": self.positives}
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        writer.writeheader()
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return buf.getvalue()


def report(data, c_percent=80, bins: int = 10) -> MetricReport:
    if not isinstance(data, LabeledScores):
        data = LabeledScores(*data)
    return MetricReport(
        auroc=auroc(data), aucpr=aucpr(data), acc_at_c=acc_at(data, c_percent), c=c_percent,
        ece=ece(data, bins), bins=bins, n=data.n, positives=data.positives,
    )
