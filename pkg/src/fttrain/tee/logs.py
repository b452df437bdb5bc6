"""Error-log counting over a detection window."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .config import DEFAULT_ERROR_PATTERNS


class LineClassifier:
    def __init__(self, patterns=DEFAULT_ERROR_PATTERNS):
        self.patterns = tuple(patterns)
        self._rx = re.compile("|".join(f"(?:{p})" for p in self.patterns), re.IGNORECASE)

    def is_error(self, text: str) -> bool:
        return bool(self.patterns) and self._rx.search(text) is not None


@dataclass(frozen=True)
class ClassifiedLine:
    time: float
    node: int
    text: str
    error: bool


@dataclass
class LogWindow:
    start: float
    end: float
    lines: list  # ClassifiedLine, time ordered
    rank_nodes: tuple = ()

    @property
    def errors(self) -> list:
        return [l for l in self.lines if l.error]

    @property
    def err_cnt(self) -> int:
        return sum(l.error for l in self.lines)

    @property
    def first_error_node(self) -> int | None:
        errs = self.errors
        if not errs:
            return None
        return min(errs, key=lambda l: (l.time, l.node)).node

    def first_error_by_node(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for l in self.errors:
            out[l.node] = min(out.get(l.node, l.time), l.time)
        return out


def log_window(trace, end: float, window: float, classifier: LineClassifier) -> LogWindow:
    start = end - window
    lines = [ClassifiedLine(l.time, l.node, l.text, classifier.is_error(l.text))
             for l in trace.logs if start <= l.time <= end]
    return LogWindow(start, end, lines, tuple(int(n) for n in trace.node_of_ranks()))
