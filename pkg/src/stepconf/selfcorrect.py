"""One round of feedback-driven regeneration.

Answer-level feedback only says the previous answer was wrong; stepwise
feedback also lists the low-confidence steps. Clients are either scripted
mocks or a minimal chat-completions HTTP endpoint.
"""

from __future__ import annotations

import json
import math
import re
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Mapping, Optional, Sequence

from . import diagnostics
from .errors import ConfigError, EmptyInputError, ParseError, ProviderError, TraceError
from .parser import canonical_value, parse_structured
from .similarity import canonical_text
from .trace import ReasoningGraph, Step

DEFAULT_TAU_C = 0.5
NO_FLAGS = "No steps were flagged as low confidence."


def load_template(name: str) -> str:
    return resources.files("stepconf").joinpath("templates", f"{name}.txt").read_text("utf-8")


def _fill(template: str, **values) -> str:
    # plain substitution: question text may itself contain braces
    for key, value in values.items():
        template = template.replace("{" + key + "}", str(value))
    return template


def structured_prompt(question: str) -> str:
    return _fill(load_template("structured"), question=question)


def build_answer_feedback(question: str, previous_answer: str) -> str:
    if not question or not str(previous_answer):
        raise EmptyInputError("question and previous answer must be non-empty")
    return structured_prompt(question) + _fill(load_template("answer_feedback"), answer=previous_answer)


def render_reasoning(graph: ReasoningGraph) -> str:
    return "\n".join(f"Step {s.index}: {s.edge_text} => {s.node_text}" for s in graph.steps)


def flag_steps(confidences: Sequence[float], tau_c: float = DEFAULT_TAU_C,
               bottom_k: Optional[int] = None) -> list[int]:
    """Indices of low-confidence steps, ascending.

    Threshold mode flags every step with confidence below ``tau_c``; with
    ``bottom_k`` the k least confident steps are flagged instead (ties by index).
    """
    if bottom_k is not None:
        if bottom_k < 0:
            raise ConfigError("bottom_k must be >= 0")
        order = sorted(range(len(confidences)), key=lambda j: (confidences[j], j))
        return sorted(order[:bottom_k])
    if not 0.0 < tau_c < 1.0:
        raise ConfigError("tau_c must be in (0, 1)")
    return [j for j, c in enumerate(confidences) if c < tau_c]


def describe_errors(graph: ReasoningGraph, confidences: Sequence[float], flagged: Sequence[int]) -> str:
    if not flagged:
        return NO_FLAGS
    lines = []
    for j in flagged:
        s = graph.steps[j]
        lines.append(f"- Step {j} (confidence {confidences[j]:.3f}): {s.edge_text} => {s.node_text}")
    return "\n".join(lines)


@dataclass(frozen=True)
class FeedbackItem:
    question_text: str
    previous_answer: str
    reasoning_rendering: str
    flagged_steps: tuple
    built_prompt: str
    question_id: str = ""
    trajectory_id: str = ""


def build_stepwise_feedback(question: str, graph: ReasoningGraph, confidences: Sequence[float],
                            tau_c: float = DEFAULT_TAU_C, bottom_k: Optional[int] = None) -> FeedbackItem:
    if len(confidences) != len(graph.steps):
        raise TraceError(f"{len(confidences)} confidences for {len(graph.steps)} steps",
                         trajectory_id=graph.trajectory_id)
    flagged = flag_steps(confidences, tau_c, bottom_k)
    reasoning = render_reasoning(graph)
    suffix = _fill(load_template("stepwise_feedback"), previous_answer=graph.final_answer,
                   reasoning_process=reasoning,
                   error_description=describe_errors(graph, confidences, flagged))
    return FeedbackItem(question, graph.final_answer, reasoning, tuple(flagged),
                        structured_prompt(question) + suffix, graph.question_id, graph.trajectory_id)


def answer_feedback_item(question: str, graph: ReasoningGraph) -> FeedbackItem:
    return FeedbackItem(question, graph.final_answer, render_reasoning(graph), (),
                        build_answer_feedback(question, graph.final_answer),
                        graph.question_id, graph.trajectory_id)


# ------------------------------------------------------------------ clients


class MockClient:
    """Scripted client: ``responder`` is a prompt -> reply mapping or callable."""

    kind = "mock"

    def __init__(self, responder):
        self.responder = responder
        self.calls = 0

    def send(self, prompt: str) -> str:
        self.calls += 1
        if callable(self.responder):
            return self.responder(prompt)
        if prompt not in self.responder:
            raise ProviderError("mock has no scripted reply for prompt", retryable=False)
        return self.responder[prompt]


class HttpChatClient:
    """Chat-completions style endpoint; one retry on transport or shape errors."""

    kind = "http-chat"

    def __init__(self, url: str, model: str, timeout: float = 60.0, retries: int = 1,
                 max_in_flight: int = 1, temperature: float = 1.0):
        self.url = url
        self.model = model
        self.timeout = timeout
        self.retries = min(int(retries), 1)
        self.temperature = temperature
        self.calls = 0
        self._slots = threading.BoundedSemaphore(max(1, int(max_in_flight)))

    def _post(self, prompt):
        body = json.dumps({"model": self.model,
                           "messages": [{"role": "user", "content": prompt}],
                           "temperature": self.temperature}).encode("utf-8")
        req = urllib.request.Request(self.url, data=body, method="POST",
                                     headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))

    @staticmethod
    def _text(data):
        choice = data["choices"][0]
        if "message" in choice:
            return choice["message"]["content"]
        return choice["text"]

    def send(self, prompt: str) -> str:
        self.calls += 1
        last = None
        with self._slots:
            for _ in range(self.retries + 1):
                try:
                    text = self._text(self._post(prompt))
                except (urllib.error.URLError, OSError, ValueError, KeyError, IndexError, TypeError) as exc:
                    last = exc
                    continue
                if isinstance(text, str):
                    return text
                last = ValueError("reply content is not a string")
        raise ProviderError(f"chat request to {self.url} failed: {last}", url=self.url)


def make_client(cfg: Optional[Mapping], responder=None):
    cfg = dict(cfg or {})
    kind = cfg.get("kind", "mock")
    if kind == "mock":
        if responder is None:
            raise ConfigError("mock client needs a responder")
        return MockClient(responder)
    if kind in ("http", "http-chat"):
        try:
            return HttpChatClient(cfg["url"], cfg["model"], float(cfg.get("timeout", 60.0)),
                                  int(cfg.get("retries", 1)), int(cfg.get("max_in_flight", 1)))
        except KeyError as exc:
            raise ConfigError(f"http client config missing {exc.args[0]!r}") from None
    raise ConfigError(f"unknown client kind {kind!r}")


def render_graph(graph: ReasoningGraph) -> str:
    """Serialize a graph in the constructor syntax the structured prompt asks for."""
    nodes = []
    for s in graph.steps:
        nodes.append(f"ReasoningNode(id={s.index}, description={s.edge_text!r}, "
                     f"output={s.node_text!r}, depends_on={list(s.depends_on)})")
    return "ReasoningGraph(nodes=[" + ", ".join(nodes) + f"], final_answer={graph.final_answer!r})"


_FLAG_LINE = re.compile(r"^- Step (\d+) \(confidence [0-9.]+\): (.*)$", re.M)
_ERRORS_HEADER = "## Identified Errors (steps with low confidence):"
_PREVIOUS = re.compile(r"The previous final answer '(.*?)' is incorrect")


def flagged_in_prompt(prompt: str) -> dict:
    """``{step index: "edge => node"}`` for each step listed as an error."""
    _head, sep, tail = prompt.partition(_ERRORS_HEADER)
    if not sep:
        return {}
    return {int(j): text for j, text in _FLAG_LINE.findall(tail)}


class FlagOracle:
    """Scripted responder for plumbing tests.

    ``cases`` maps question text to ``(gold_answer, corrupted step renderings)``.
    The reply carries the gold answer iff the prompt flags a corrupted step;
    otherwise it repeats the previous answer.
    """

    def __init__(self, cases: Mapping[str, tuple]):
        self.cases = {q: (gold, frozenset(bad)) for q, (gold, bad) in cases.items()}

    def __call__(self, prompt: str) -> str:
        for question, (gold, corrupted) in self.cases.items():
            if question in prompt:
                prev = _PREVIOUS.search(prompt)
                answer = prev.group(1) if prev else ""
                if corrupted & set(flagged_in_prompt(prompt).values()):
                    answer = gold
                step = ReasoningGraph("", "", (Step(0, "reconsider the problem", answer, ()),), answer)
                return render_graph(step)
        return "I cannot help with that."


# ------------------------------------------------------------------ rounds


def answer_equal(a: str, b: str) -> bool:
    """Trimmed, case-folded comparison with numeric normalization (``2.0 == 2``)."""
    return _norm(a) == _norm(b)


def _norm(x) -> str:
    text = canonical_text(str(x))
    try:
        value = float(text.replace(",", ""))
    except ValueError:
        return text
    return canonical_value(value) if math.isfinite(value) else text


@dataclass(frozen=True)
class CorrectionOutcome:
    question_id: str
    trajectory_id: str
    corrected: bool
    new_answer: Optional[str]
    initially_wrong: bool = True
    error: Optional[dict] = None

    def to_record(self):
        return {"question_id": self.question_id, "trajectory_id": self.trajectory_id,
                "initially_wrong": self.initially_wrong, "corrected": self.corrected,
                "new_answer": self.new_answer, "error": self.error}


def run_round(client, items: Sequence[FeedbackItem], gold_answers: Sequence[str],
              equal: Callable[[str, str], bool] = answer_equal) -> list[CorrectionOutcome]:
    """Send each prompt once and judge the regenerated answer against gold."""
    if len(items) != len(gold_answers):
        raise EmptyInputError(f"{len(items)} items but {len(gold_answers)} gold answers")
    out = []
    for item, gold in zip(items, gold_answers):
        ids = {"question_id": item.question_id, "trajectory_id": item.trajectory_id}
        try:
            reply = client.send(item.built_prompt)
        except ProviderError as exc:
            record = diagnostics.emit("error", exc.code, exc.message, **ids)
            out.append(CorrectionOutcome(item.question_id, item.trajectory_id, False, None, error=record))
            continue
        try:
            with diagnostics.capture():
                graph = parse_structured(reply, item.question_id, item.trajectory_id)
        except ParseError as exc:
            record = diagnostics.warn("unparseable-reply", exc.message, offset=exc.offset, **ids)
            out.append(CorrectionOutcome(item.question_id, item.trajectory_id, False, None, error=record))
            continue
        out.append(CorrectionOutcome(item.question_id, item.trajectory_id,
                                     bool(equal(graph.final_answer, gold)), graph.final_answer))
    return out


def success_rate(outcomes: Sequence[CorrectionOutcome]) -> float:
    if not outcomes:
        raise EmptyInputError("no correction outcomes")
    return sum(o.corrected for o in outcomes) / len(outcomes)


def dumps_outcomes(outcomes: Sequence[CorrectionOutcome]) -> str:
    return "".join(json.dumps(o.to_record(), sort_keys=True, ensure_ascii=False) + "\n"
                   for o in outcomes)


def feedback_batch(sets, scores: Mapping[tuple, Sequence[float]], mode: str = "stepwise",
                   tau_c: float = DEFAULT_TAU_C, bottom_k: Optional[int] = None,
                   limit: Optional[int] = None):
    """Feedback items and gold answers for every initially wrong trajectory.

    ``scores`` is keyed by ``(question_id, trajectory_id)``; it is only needed
    for stepwise mode.
    """
    if mode not in ("answer", "stepwise"):
        raise ConfigError("feedback mode must be 'answer' or 'stepwise'")
    items, golds = [], []
    for ts in sets:
        for t in ts.trajectories:
            if t.answer_correct:
                continue
            if limit is not None and len(items) >= limit:
                return items, golds
            if mode == "answer":
                items.append(answer_feedback_item(ts.question_text, t.graph))
            else:
                key = (ts.question_id, t.trajectory_id)
                if key not in scores:
                    raise TraceError(f"no scores for {key[0]}/{key[1]}",
                                     question_id=key[0], trajectory_id=key[1])
                items.append(build_stepwise_feedback(ts.question_text, t.graph, scores[key],
                                                     tau_c, bottom_k))
            golds.append(ts.gold_answer if ts.gold_answer is not None else "")
    return items, golds


def oracle_for(sets) -> FlagOracle:
    """A :class:`FlagOracle` whose corrupted steps come from planted step labels."""
    cases = {}
    for ts in sets:
        bad = set()
        for t in ts.trajectories:
            if t.answer_correct or t.step_labels is None:
                continue
            bad.update(f"{s.edge_text} => {s.node_text}"
                       for s, ok in zip(t.graph.steps, t.step_labels) if not ok)
        cases[ts.question_text] = (ts.gold_answer, bad)
    return FlagOracle(cases)
