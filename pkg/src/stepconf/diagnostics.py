"""JSON-lines diagnostics stream.

Warnings and errors are written one JSON object per line. The default sink is
stderr; tests and the CLI can swap it with :func:`capture` or :func:`set_stream`.
"""

import contextlib
import json
import sys
import threading

_lock = threading.Lock()
_stream = None


def set_stream(stream):
    global _stream
    _stream = stream


def emit(level, code, message, **fields):
    record = {"level": level, "code": code, "message": message}
    record.update(fields)
    line = json.dumps(record, sort_keys=True, ensure_ascii=False)
    with _lock:
        out = _stream if _stream is not None else sys.stderr
        out.write(line + "\n")
    return record


def warn(code, message, **fields):
    return emit("warning", code, message, **fields)


class _Collector:
    def __init__(self):
        self.records = []

    def write(self, text):
        for line in text.splitlines():
            if line.strip():
                self.records.append(json.loads(line))


@contextlib.contextmanager
def capture():
    """Collect emitted records in a list instead of writing them out."""
    global _stream
    previous = _stream
    collector = _Collector()
    _stream = collector
    try:
        yield collector.records
    finally:
        _stream = previous
