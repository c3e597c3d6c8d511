"""Marked event streams and the ``hawkes-events v1`` text format."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["EventStream", "EventFormatError", "save_events", "load_events", "TIE_TOL"]

TIE_TOL = 1e-12
_HEADER = re.compile(r"^# hawkes-events v1 d=(\d+) T=(\S+)\s*$")


class EventFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-sorted events ``(times[i], marks[i])`` with 0-based component marks.

    Events with negative times are warm-up history; the counting process
    starts at ``t = 0``.
    """

    times: np.ndarray
    marks: np.ndarray
    T: float
    d: int
    warmup_start: float = 0.0
    seed: int | None = None
    stream_id: int | None = None

    def __post_init__(self):
        times = np.array(self.times, dtype=float).ravel()
        marks = np.array(self.marks, dtype=np.int64).ravel()
        if times.shape != marks.shape:
            raise ValueError("times and marks differ in length")
        if times.size:
            if not np.all(np.isfinite(times)):
                raise ValueError("event times must be finite")
            gaps = np.diff(times)
            if np.any(gaps <= TIE_TOL):
                i = int(np.argmax(gaps <= TIE_TOL))
                raise ValueError(
                    f"event times not strictly increasing near t={times[i]!r} "
                    f"(ties within {TIE_TOL} are rejected)"
                )
            if marks.min() < 0 or marks.max() >= self.d:
                raise ValueError(f"marks must lie in 0..{self.d - 1}")
            if times[0] < self.warmup_start or times[-1] > self.T:
                raise ValueError("events outside [warmup_start, T]")
        times.flags.writeable = False
        marks.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "warmup_start", float(self.warmup_start))

    def __len__(self) -> int:
        return self.times.size

    def observed(self) -> "EventStream":
        keep = self.times >= 0
        return EventStream(self.times[keep], self.marks[keep], self.T, self.d, 0.0,
                           self.seed, self.stream_id)

    def window_counts(self, edges) -> np.ndarray:
        """Counts per component in bins ``[edges[k], edges[k+1])``, shape (bins, d)."""
        edges = np.asarray(edges, dtype=float)
        out = np.zeros((edges.size - 1, self.d), dtype=np.int64)
        for m in range(self.d):
            out[:, m] = np.histogram(self.times[self.marks == m], bins=edges)[0]
        return out

    def equals(self, other: "EventStream") -> bool:
        return (self.d == other.d and self.T == other.T
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.marks, other.marks))


def _fmt(value: float) -> str:
    return "%.17g" % value


def save_events(stream: EventStream, path: str | Path) -> None:
    """Write ``# hawkes-events v1`` text: fixed 9-decimal times, 1-based components."""
    lines = [f"# hawkes-events v1 d={stream.d} T={_fmt(stream.T)}",
             f"# warmup_start={_fmt(stream.warmup_start)}"]
    if stream.seed is not None:
        lines.append(f"# seed={stream.seed} stream={stream.stream_id or 0}")
    lines.extend(f"{t:.9f},{m + 1}" for t, m in zip(stream.times.tolist(), stream.marks.tolist()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_events(path: str | Path) -> EventStream:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text:
        raise EventFormatError(f"{path}: empty file")
    match = _HEADER.match(text[0])
    if not match:
        raise EventFormatError(f"{path}: bad header {text[0]!r}")
    d, T = int(match.group(1)), float(match.group(2))
    warmup_start, seed, stream_id = None, None, None
    times, marks = [], []
    for lineno, line in enumerate(text[1:], start=2):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for key, value in re.findall(r"(\w+)=(\S+)", line):
                if key == "warmup_start":
                    warmup_start = float(value)
                elif key == "seed":
                    seed = int(value)
                elif key == "stream":
                    stream_id = int(value)
            continue
        try:
            t_text, m_text = line.split(",")
            times.append(float(t_text))
            marks.append(int(m_text) - 1)
        except ValueError as exc:
            raise EventFormatError(f"{path}:{lineno}: cannot parse {line!r}") from exc
    times_arr = np.array(times, dtype=float)
    if warmup_start is None:
        warmup_start = min(0.0, float(times_arr.min())) if times_arr.size else 0.0
    try:
        return EventStream(times_arr, np.array(marks, dtype=np.int64), T, d,
                           warmup_start, seed, stream_id)
    except ValueError as exc:
        raise EventFormatError(f"{path}: {exc}") from exc
