"""Decode traces, wall-clock phase instrumentation, and JSONL serialization.

Every decode run (parallel, autoregressive, or truncated) records one
:class:`IterationRecord` per iteration plus a :class:`TimeBreakdown` of
where the wall clock went.  Traces are the single input to the metrics
module and to golden-trace tests, and serialize to JSONL with one
iteration per line.
"""

from __future__ import annotations

import json
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import IO, Iterator

from glimpse.errors import InstrumentationError

#: Wall-clock categories reported in benchmark tables.  ``stop_check`` is
#: tracked beside them so autoregressive baselines can exclude it.
PHASES = ("infer", "decode", "context_decode", "kv_cache")


@dataclass
class TimeBreakdown:
    """Disjoint wall-clock totals in seconds; they sum to <= total elapsed."""

    infer: float = 0.0
    decode: float = 0.0
    context_decode: float = 0.0
    kv_cache: float = 0.0

    def total(self) -> float:
        return self.infer + self.decode + self.context_decode + self.kv_cache

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


class PhaseTimer:
    """Accumulates monotone-clock durations per category.

    Phases may not overlap: beginning a phase while another is active, or
    ending one that is not active, raises :class:`InstrumentationError`.
    This makes double counting impossible by construction.
    """

    def __init__(self) -> None:
        self.totals: dict[str, float] = {}
        self._active: str | None = None
        self._start = 0.0

    def begin(self, category: str) -> None:
        if self._active is not None:
            raise InstrumentationError(
                f"cannot begin {category!r}: phase {self._active!r} still active"
            )
        self._active = category
        self._start = time.perf_counter()

    def end(self, category: str) -> None:
        if self._active != category:
            raise InstrumentationError(
                f"cannot end {category!r}: active phase is {self._active!r}"
            )
        self.totals[category] = self.totals.get(category, 0.0) + (
            time.perf_counter() - self._start
        )
        self._active = None

    @contextmanager
    def phase(self, category: str) -> Iterator[None]:
        self.begin(category)
        try:
            yield
        finally:
            self.end(category)

    def get(self, category: str) -> float:
        return self.totals.get(category, 0.0)

    def breakdown(self) -> TimeBreakdown:
        if self._active is not None:
            raise InstrumentationError(f"phase {self._active!r} never ended")
        return TimeBreakdown(**{name: self.get(name) for name in PHASES})


def record_phase(timer: PhaseTimer, category: str):
    """Context manager recording one timed span under ``category``."""
    return timer.phase(category)


@dataclass
class IterationRecord:
    """State transition of one decode iteration.

    ``window_before`` holds the guesses the forward call actually saw;
    ``committed`` the tokens verified exact this iteration; ``window``
    the refilled guess block afterwards.
    """

    iteration: int
    frontier_before: int
    frontier: int
    window_before: list[int]
    predictions: list[int]
    match_len: int
    committed: list[int]
    window: list[int]
    probe_score: float = 0.0

    def to_json(self) -> dict:
        out = asdict(self)
        out["type"] = "iteration"
        return out


@dataclass
class DecodeTrace:
    """Full record of one decode run for one instance."""

    method: str
    prompt: list[int]
    window_len: int
    skip: bool
    records: list[IterationRecord] = field(default_factory=list)
    breakdown: TimeBreakdown = field(default_factory=TimeBreakdown)
    stop_check_s: float = 0.0
    wall_s: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.records)

    def committed_stream(self) -> list[int]:
        out: list[int] = []
        for rec in self.records:
            out.extend(rec.committed)
        return out

    def write_jsonl(self, fh: IO[str]) -> None:
        header = {
            "type": "header",
            "method": self.method,
            "prompt": self.prompt,
            "window_len": self.window_len,
            "skip": self.skip,
        }
        fh.write(json.dumps(header) + "\n")
        for rec in self.records:
            fh.write(json.dumps(rec.to_json()) + "\n")
        summary = {
            "type": "summary",
            "breakdown": self.breakdown.as_dict(),
            "stop_check_s": self.stop_check_s,
            "wall_s": self.wall_s,
        }
        fh.write(json.dumps(summary) + "\n")


def read_jsonl(fh: IO[str]) -> DecodeTrace:
    """Rebuild a trace from its JSONL form (inverse of ``write_jsonl``)."""
    trace: DecodeTrace | None = None
    for line in fh:
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        kind = obj.pop("type")
        if kind == "header":
            trace = DecodeTrace(**obj)
        elif kind == "iteration":
            if trace is None:
                raise ValueError("iteration line before header")
            trace.records.append(IterationRecord(**obj))
        elif kind == "summary":
            if trace is None:
                raise ValueError("summary line before header")
            trace.breakdown = TimeBreakdown(**obj["breakdown"])
            trace.stop_check_s = obj["stop_check_s"]
            trace.wall_s = obj["wall_s"]
    if trace is None:
        raise ValueError("empty trace stream")
    return trace
