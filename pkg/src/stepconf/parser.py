"""Parsers that turn LLM output into :class:`ReasoningGraph` objects.

``parse_structured`` reads the ``ReasoningGraph(nodes=[ReasoningNode(...)], final_answer=...)``
constructor syntax that structured prompting elicits; ``parse_linear`` turns a
plain chain-of-thought (one sentence per step) into a chain graph.
"""

from __future__ import annotations

import ast
import math
import re
from typing import Iterable, Optional

from . import diagnostics
from .errors import (EmptyInputError, MissingKeyError, NoConstructorError, ParseError,
                     UnbalancedDelimiterError)
from .trace import ReasoningGraph, Step

MAX_DEPTH = 64

_CONSTRUCTOR = re.compile(r"\bReasoningGraph\s*\(")
_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_OPENERS = {"(": ")", "[": "]", "{": "}"}
_CLOSERS = {")", "]", "}"}


def canonical_value(value) -> str:
    """Render a parsed literal as text; numbers use the shortest round-trip form.

    Integral floats collapse to integers so ``2.0`` and ``2`` compare equal.
    """
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isfinite(value) and value.is_integer():
            return str(int(value))
        return repr(value)
    if isinstance(value, list):
        return "[" + ", ".join(canonical_value(v) for v in value) + "]"
    if isinstance(value, _Call):
        return value.name + "(...)"
    return str(value)


class _Call:
    __slots__ = ("name", "kwargs", "offset")

    def __init__(self, name, kwargs, offset):
        self.name = name
        self.kwargs = kwargs
        self.offset = offset


class _Reader:
    def __init__(self, text, start, end):
        self.text = text
        self.pos = start
        self.end = end
        self._byte_cache = {}

    def byte_offset(self, pos):
        return len(self.text[:pos].encode("utf-8", errors="replace"))

    def fail(self, message, pos=None, cls=ParseError, **details):
        pos = self.pos if pos is None else pos
        raise cls(message, offset=self.byte_offset(pos), **details)

    def skip_ws(self):
        text, end = self.text, self.end
        while self.pos < end:
            c = text[self.pos]
            if c.isspace():
                self.pos += 1
            elif c == "#":
                nl = text.find("\n", self.pos, end)
                self.pos = end if nl < 0 else nl + 1
            else:
                break

    def peek(self):
        self.skip_ws()
        return self.text[self.pos] if self.pos < self.end else ""

    def expect(self, ch):
        if self.peek() != ch:
            found = self.text[self.pos] if self.pos < self.end else "end of input"
            self.fail(f"expected {ch!r}, found {found!r}")
        self.pos += 1

    def ident(self):
        self.skip_ws()
        m = _IDENT.match(self.text, self.pos, self.end)
        if not m:
            self.fail("expected identifier")
        self.pos = m.end()
        return m.group(0)

    def value(self, depth=0):
        if depth > MAX_DEPTH:
            self.fail("nesting too deep")
        c = self.peek()
        start = self.pos
        if c in ("'", '"'):
            return self.string()
        if c == "[":
            self.pos += 1
            items = []
            while True:
                if self.peek() == "]":
                    self.pos += 1
                    return items
                items.append(self.value(depth + 1))
                nxt = self.peek()
                if nxt == ",":
                    self.pos += 1
                elif nxt != "]":
                    self.fail("expected ',' or ']' in list")
        m = _NUMBER.match(self.text, self.pos, self.end)
        if m and m.group(0) not in ("+", "-"):
            self.pos = m.end()
            tok = m.group(0)
            if re.fullmatch(r"[+-]?\d+", tok):
                return int(tok)
            return float(tok)
        if _IDENT.match(self.text, self.pos, self.end):
            name = self.ident()
            if self.peek() == "(":
                return self.call(name, start, depth + 1)
            # bare identifiers (None, True, x) are kept as text
            return name
        self.fail("expected a value")

    def string(self):
        text, start = self.text, self.pos
        quote = text[start]
        triple = text.startswith(quote * 3, start)
        delim = quote * 3 if triple else quote
        i = start + len(delim)
        while i < self.end:
            c = text[i]
            if c == "\\":
                i += 2
                continue
            if text.startswith(delim, i):
                i += len(delim)
                try:
                    value = ast.literal_eval(text[start:i])
                except (ValueError, SyntaxError):
                    self.fail("malformed string literal", start)
                self.pos = i
                return str(value)
            if c == "\n" and not triple:
                break
            i += 1
        self.fail("unterminated string literal", start)

    def call(self, name, start, depth):
        self.expect("(")
        kwargs = {}
        while True:
            if self.peek() == ")":
                self.pos += 1
                return _Call(name, kwargs, start)
            key_pos = self.pos
            key = self.ident()
            self.expect("=")
            val = self.value(depth)
            kwargs.setdefault(key, (val, key_pos))
            nxt = self.peek()
            if nxt == ",":
                self.pos += 1
            elif nxt != ")":
                self.fail("expected ',' or ')' in argument list")


def _balanced_end(text, start):
    """Index just past the ')' closing the constructor opened at/after ``start``."""
    stack = []
    i, n = start, len(text)
    while i < n:
        c = text[i]
        if c in ("'", '"'):
            triple = text.startswith(c * 3, i)
            delim = c * 3 if triple else c
            j = i + len(delim)
            while j < n:
                if text[j] == "\\":
                    j += 2
                    continue
                if text.startswith(delim, j):
                    break
                if text[j] == "\n" and not triple:
                    break
                j += 1
            if j >= n or not text.startswith(delim, j):
                raise UnbalancedDelimiterError(
                    "unterminated string literal",
                    offset=len(text[:i].encode("utf-8", errors="replace")))
            i = j + len(delim)
            continue
        if c in _OPENERS:
            stack.append((c, i))
        elif c in _CLOSERS:
            if not stack or _OPENERS[stack[-1][0]] != c:
                raise UnbalancedDelimiterError(
                    f"unexpected {c!r}", offset=len(text[:i].encode("utf-8", errors="replace")))
            stack.pop()
            if not stack:
                return i + 1
        i += 1
    opener, pos = stack[-1] if stack else ("(", start)
    raise UnbalancedDelimiterError(
        f"unclosed {opener!r}", offset=len(text[:pos].encode("utf-8", errors="replace")))


def _require(call, key, reader):
    if key not in call.kwargs:
        reader.fail(f"{call.name} is missing required key {key!r}", call.offset,
                    cls=MissingKeyError, key=key)
    return call.kwargs[key][0]


def parse_structured(text, question_id: str = "", trajectory_id: str = "",
                     warnings: Optional[list] = None) -> ReasoningGraph:
    """Parse the first ``ReasoningGraph(...)`` constructor found in ``text``.

    Node ids are remapped to 0-based step indices in order of appearance.
    Dependencies on unknown or not-yet-seen ids are dropped and reported
    through ``warnings`` (if given) and the diagnostics stream.
    """
    if isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("utf-8", errors="replace")
    m = _CONSTRUCTOR.search(text)
    if not m:
        raise NoConstructorError("no ReasoningGraph(...) expression found", offset=0)
    end = _balanced_end(text, m.start())
    reader = _Reader(text, m.start(), end)
    try:
        name = reader.ident()
        graph_call = reader.call(name, m.start(), 1)
    except RecursionError:
        raise ParseError("nesting too deep", offset=reader.byte_offset(m.start())) from None

    nodes = _require(graph_call, "nodes", reader)
    final = _require(graph_call, "final_answer", reader)
    if not isinstance(nodes, list) or not nodes:
        reader.fail("nodes must be a non-empty list of ReasoningNode(...)", graph_call.offset)

    found = []
    for node in nodes:
        if not isinstance(node, _Call):
            reader.fail("nodes must contain ReasoningNode(...) entries", graph_call.offset)
        raw_id = _require(node, "id", reader)
        desc = _require(node, "description", reader)
        output = _require(node, "output", reader)
        deps = node.kwargs.get("depends_on", ([], None))[0]
        if not isinstance(deps, list):
            deps = [deps]
        found.append((node, raw_id, desc, output, deps))

    def note(code, message, **fields):
        record = diagnostics.warn(code, message, trajectory_id=trajectory_id, **fields)
        if warnings is not None:
            warnings.append(record)

    id_map = {}
    for idx, (node, raw_id, *_rest) in enumerate(found):
        key = canonical_value(raw_id)
        if key in id_map:
            note("duplicate-id", f"node id {key} repeated; first occurrence kept",
                 node_id=key, step=idx)
            continue
        id_map[key] = idx

    steps = []
    for idx, (node, raw_id, desc, output, deps) in enumerate(found):
        parents = []
        for dep in deps:
            key = canonical_value(dep)
            target = id_map.get(key)
            if target is None:
                note("unknown-dependency", f"step {idx} depends on unknown id {key}; dropped",
                     step=idx, node_id=key)
            elif target >= idx:
                note("forward-dependency", f"step {idx} depends on later id {key}; dropped",
                     step=idx, node_id=key)
            elif target not in parents:
                parents.append(target)
        steps.append(Step(idx, canonical_value(desc), canonical_value(output), tuple(parents)))
    return ReasoningGraph(question_id, trajectory_id, tuple(steps), canonical_value(final))


def parse_linear(sentences: Iterable[str], question_id: str = "", trajectory_id: str = "",
                 final_answer: str = "") -> ReasoningGraph:
    """Chain-of-thought as a linear graph: each sentence is an edge, nodes are empty."""
    sentences = [s.strip() for s in sentences if s and s.strip()]
    if not sentences:
        raise EmptyInputError("linear trace has no non-empty sentences")
    steps = tuple(Step(j, s, "", (j - 1,) if j else ()) for j, s in enumerate(sentences))
    return ReasoningGraph(question_id, trajectory_id, steps, final_answer)
