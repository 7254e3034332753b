"""Timer instrumentation: a thread-safe registry of named interval records
and an aggregated report (stdout table plus timers.csv)."""

from __future__ import annotations

import csv
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

GROUPS = ("INIT", "MEMORY", "PHYSICS", "IO")

HOST_SCOPE = "host"


def device_scope(device_id: int) -> str:
    return f"device{device_id}"


@dataclass(frozen=True)
class TimerRecord:
    name: str
    group: str      # INIT | MEMORY | PHYSICS | IO
    scope: str      # "host" or "device<d>"
    elapsed_ns: int

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ValueError(f"unknown timer group {self.group!r}")
        if self.elapsed_ns < 0:
            raise ValueError("elapsed time must be >= 0")


class TimerRegistry:
    """Collects records from concurrent device tasks (the one shared sink)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._records: list[TimerRecord] = []

    def record(self, name: str, group: str, scope: str, elapsed_ns: int) -> None:
        rec = TimerRecord(name=name, group=group, scope=scope,
                          elapsed_ns=elapsed_ns)
        with self._lock:
            self._records.append(rec)

    @contextmanager
    def timed(self, name: str, group: str, scope: str):
        t0 = time.perf_counter_ns()
        try:
            yield
        finally:
            self.record(name, group, scope, time.perf_counter_ns() - t0)

    @property
    def records(self) -> list[TimerRecord]:
        with self._lock:
            return list(self._records)


def aggregate(records) -> list[tuple]:
    """Rows (group, name, scope, count, total_ns, mean_ns), sorted by
    group then name then scope."""
    totals: dict[tuple, list] = {}
    for rec in records:
        key = (rec.group, rec.name, rec.scope)
        entry = totals.setdefault(key, [0, 0])
        entry[0] += 1
        entry[1] += rec.elapsed_ns
    rows = []
    for (group, name, scope) in sorted(totals):
        count, total = totals[(group, name, scope)]
        rows.append((group, name, scope, count, total, total / count))
    return rows


def report_timers(records, outdir=None) -> str:
    """Format the aggregated timer table; also writes timers.csv if outdir
    is given. Returns the table text."""
    rows = aggregate(records)
    header = f"{'group':8} {'name':24} {'scope':10} {'count':>7} " \
             f"{'total_ms':>12} {'mean_ms':>12}"
    lines = [header]
    for group, name, scope, count, total, mean in rows:
        lines.append(f"{group:8} {name:24} {scope:10} {count:>7} "
                     f"{total / 1e6:>12.3f} {mean / 1e6:>12.3f}")
    text = "\n".join(lines)
    if outdir is not None:
        with open(Path(outdir) / "timers.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["group", "name", "scope", "count",
                             "total_ns", "mean_ns"])
            for group, name, scope, count, total, mean in rows:
                writer.writerow([group, name, scope, count, total, mean])
    return text
