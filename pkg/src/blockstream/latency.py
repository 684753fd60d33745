"""Latency metrics over emission logs: average lagging and endpoint latency."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class EmissionEvent:
    position: int  # 1-based output position
    token: str
    block: int  # number of blocks consumed when the token was committed
    source_ms: float  # source audio consumed at commit (simulated time)
    wall_ms: float  # wall clock at commit


@dataclass(frozen=True)
class EmissionLog:
    events: tuple[EmissionEvent, ...]
    source_total_ms: float
    source_end_wall_ms: float = 0.0
    completion_wall_ms: float = 0.0
    wait_events: int = 0

    def __post_init__(self):
        prev = -float("inf")
        for i, ev in enumerate(self.events, start=1):
            if ev.position != i:
                raise ValueError(f"event positions must run 1..n, got {ev.position} at {i}")
            if ev.source_ms < prev:
                raise ValueError("source_ms must be non-decreasing")
            if ev.source_ms > self.source_total_ms:
                raise ValueError("source_ms exceeds source_total_ms")
            prev = ev.source_ms

    def __len__(self) -> int:
        return len(self.events)

    @property
    def delays(self) -> list[float]:
        return [ev.source_ms for ev in self.events]


@dataclass(frozen=True)
class LatencyReport:
    average_lagging_ms: float
    endpoint_latency_ms: float
    wait_events: int
    tokens_before_source_end: int
    n_tokens: int = field(default=0)

    def as_dict(self) -> dict:
        return {
            "AL_ms": self.average_lagging_ms,
            "EP_ms": self.endpoint_latency_ms,
            "wait_events": self.wait_events,
            "tokens_before_source_end": self.tokens_before_source_end,
            "n_tokens": self.n_tokens,
        }


def average_lagging(log: EmissionLog) -> float:
    """Average lagging in ms, from simulated source delays only.

    With delays ``d_i``, source length ``|X|`` and ``|Y|`` tokens:
    ``AL = 1/tau * sum_{i<=tau} (d_i - (i-1) * |X| / |Y|)`` where ``tau`` is
    the first position whose delay reaches ``|X|`` (``|Y|`` if none does).
    """
    delays = log.delays
    if not delays:
        raise ValueError("average lagging of an empty emission log")
    src = log.source_total_ms
    n = len(delays)
    tau = next((i for i, d in enumerate(delays, start=1) if d >= src), n)
    rate = src / n
    return sum(delays[i] - i * rate for i in range(tau)) / tau


def endpoint_latency(log: EmissionLog) -> float:
    """Wall-clock ms from the last source chunk's arrival to decode completion."""
    ep = log.completion_wall_ms - log.source_end_wall_ms
    if ep < 0:
        warnings.warn(
            f"decode completed {-ep:.3f} ms before the source ended; endpoint latency clamped to 0",
            RuntimeWarning,
            stacklevel=2,
        )
        return 0.0
    return ep


def latency_report(log: EmissionLog) -> LatencyReport:
    return LatencyReport(
        average_lagging(log),
        endpoint_latency(log),
        log.wait_events,
        sum(d < log.source_total_ms for d in log.delays),
        len(log),
    )


# --------------------------------------------------------------------------
# file format
# --------------------------------------------------------------------------

_HEADER_KEYS = ("source_total_ms", "source_end_wall_ms", "completion_wall_ms", "wait_events")


def write_emission_log(log: EmissionLog, path) -> None:
    """TSV: one ``#key=value`` header line, then ``position token block source_ms wall_ms``."""
    header = "\t".join(f"{k}={getattr(log, k)!r}" for k in _HEADER_KEYS)
    lines = ["#" + header]
    for ev in log.events:
        lines.append(f"{ev.position}\t{ev.token}\t{ev.block}\t{ev.source_ms!r}\t{ev.wall_ms!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_emission_log(path) -> EmissionLog:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing header line")
    header = {}
    for item in lines[0][1:].split("\t"):
        key, _, value = item.partition("=")
        header[key] = value
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise ValueError(f"{path}: header lacks {missing}")
    events = []
    for lineno, line in enumerate(lines[1:], start=2):
        cols = line.split("\t")
        if len(cols) != 5:
            raise ValueError(f"{path}:{lineno}: expected 5 columns, got {len(cols)}")
        events.append(EmissionEvent(int(cols[0]), cols[1], int(cols[2]), float(cols[3]), float(cols[4])))
    return EmissionLog(
        tuple(events),
        float(header["source_total_ms"]),
        float(header["source_end_wall_ms"]),
        float(header["completion_wall_ms"]),
        int(header["wait_events"]),
    )
