"""Fleet event histories: validation, CSV/JSON ingestion and summaries.

On-disk CSV layout (long format, one row per event)::

    system_id,event_type,time
    A,failure,2.0
    A,censor,4.0

Every system has exactly one ``censor`` row carrying its end-of-observation
time tau. The JSON mirror is ``{"m": 16, "systems": [{"id", "times", "tau"}]}``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

__all__ = [
    "EventHistory",
    "Fleet",
    "FleetValidationError",
    "parse_fleet",
    "read_fleet",
    "fleet_to_csv",
    "fleet_to_json",
    "fleet_from_json",
    "write_fleet",
    "failure_count_table",
    "format_failure_table",
]

CSV_HEADER = ("system_id", "event_type", "time")


class FleetValidationError(ValueError):
    """Invalid event history. ``code`` is a stable machine-readable tag."""

    def __init__(self, code: str, message: str, system_id=None, line=None):
        self.code = code
        self.system_id = system_id
        self.line = line
        where = []
        if system_id is not None:
            where.append(f"system {system_id}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message}" + (f" ({', '.join(where)})" if where else ""))

    def as_dict(self) -> dict:
        return {"code": self.code, "message": str(self), "system_id": self.system_id, "line": self.line}


@dataclass(frozen=True)
class EventHistory:
    """Ordered failure times of one system and its end-of-observation time."""

    times: tuple[float, ...]
    tau: float
    id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "id", str(self.id))
        validate_history(self)

    @property
    def r(self) -> int:
        return len(self.times)


def validate_history(h: EventHistory, line=None):
    if not (math.isfinite(h.tau) and h.tau > 0):
        raise FleetValidationError("nonpositive_time", f"tau must be positive, got {h.tau}", h.id, line)
    prev = 0.0
    for t in h.times:
        if not (math.isfinite(t) and t > 0):
            raise FleetValidationError("nonpositive_time", f"failure time must be positive, got {t}", h.id, line)
        if t == prev:
            raise FleetValidationError("tied_failures", f"tied failure times at {t}", h.id, line)
        if t < prev:
            raise FleetValidationError("unsorted_failures", "failure times must be increasing", h.id, line)
        prev = t
    if h.times and h.times[-1] >= h.tau:
        raise FleetValidationError("failure_after_censor", "failure after censor", h.id, line)


@dataclass(frozen=True)
class Fleet:
    """Independent systems sharing the socket count ``m``."""

    systems: tuple[EventHistory, ...]
    m: int

    def __post_init__(self):
        object.__setattr__(self, "systems", tuple(self.systems))
        if int(self.m) != self.m or self.m < 1:
            raise FleetValidationError("bad_socket_count", f"m must be a positive integer, got {self.m}")
        object.__setattr__(self, "m", int(self.m))
        ids = [s.id for s in self.systems]
        dup = [k for k, c in Counter(ids).items() if c > 1]
        if dup:
            raise FleetValidationError("duplicate_system", "duplicate system id", dup[0])

    @property
    def n(self) -> int:
        return len(self.systems)

    @property
    def total_failures(self) -> int:
        return sum(s.r for s in self.systems)

    @property
    def max_r(self) -> int:
        return max((s.r for s in self.systems), default=0)

    def __iter__(self):
        return iter(self.systems)

    def __len__(self):
        return len(self.systems)

    @classmethod
    def from_lists(cls, times: Sequence[Sequence[float]], taus: Sequence[float], m: int, ids=None):
        ids = ids if ids is not None else [str(i + 1) for i in range(len(taus))]
        return cls(tuple(EventHistory(tuple(t), tau, i) for t, tau, i in zip(times, taus, ids)), m)


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8"), True
    return source, False


def parse_fleet(source, m: int) -> Fleet:
    """Read the long-format CSV from a path or text stream."""
    fh, close = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FleetValidationError("bad_header", "empty input") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise FleetValidationError("bad_header", f"expected header {','.join(CSV_HEADER)}", line=1)
        order: list[str] = []
        failures: dict[str, list[tuple[float, int]]] = {}
        censor: dict[str, tuple[float, int]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise FleetValidationError("bad_row", "expected 3 columns", line=lineno)
            sid, kind, raw = (c.strip() for c in row)
            try:
                t = float(raw)
            except ValueError:
                raise FleetValidationError("bad_time", f"not a number: {raw!r}", sid, lineno) from None
            if not (math.isfinite(t) and t > 0):
                raise FleetValidationError("nonpositive_time", f"time must be positive, got {raw}", sid, lineno)
            if sid not in failures:
                order.append(sid)
                failures[sid] = []
            if kind == "failure":
                failures[sid].append((t, lineno))
            elif kind == "censor":
                if sid in censor:
                    raise FleetValidationError("duplicate_censor", "duplicate censor row", sid, lineno)
                censor[sid] = (t, lineno)
            else:
                raise FleetValidationError("bad_event_type", f"unknown event type {kind!r}", sid, lineno)
    finally:
        if close:
            fh.close()

    systems = []
    for sid in order:
        if sid not in censor:
            line = failures[sid][-1][1] if failures[sid] else None
            raise FleetValidationError("missing_censor", "missing censor row", sid, line)
        tau, tau_line = censor[sid]
        events = sorted(failures[sid])
        for t, line in events:
            if t >= tau:
                raise FleetValidationError("failure_after_censor", "failure after censor", sid, line)
        for (t0, _), (t1, line) in zip(events, events[1:]):
            if t0 == t1:
                raise FleetValidationError("tied_failures", f"tied failure times at {t1}", sid, line)
        systems.append(EventHistory(tuple(t for t, _ in events), tau, sid))
    return Fleet(tuple(systems), m)


def fleet_to_csv(fleet: Fleet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for s in fleet.systems:
        for t in s.times:
            w.writerow((s.id, "failure", repr(t)))
        w.writerow((s.id, "censor", repr(s.tau)))
    return buf.getvalue()


def fleet_to_json(fleet: Fleet) -> str:
    doc = {
        "m": fleet.m,
        "systems": [{"id": s.id, "times": list(s.times), "tau": s.tau} for s in fleet.systems],
    }
    return json.dumps(doc, indent=1)


def fleet_from_json(text_or_doc, m: int | None = None) -> Fleet:
    doc = json.loads(text_or_doc) if isinstance(text_or_doc, (str, bytes)) else text_or_doc
    try:
        mm = doc.get("m", m) if m is None else m
        systems = tuple(EventHistory(tuple(s["times"]), s["tau"], s["id"]) for s in doc["systems"])
    except (KeyError, TypeError) as exc:
        raise FleetValidationError("bad_json", f"malformed fleet document: {exc}") from None
    if mm is None:
        raise FleetValidationError("bad_socket_count", "socket count m missing")
    return Fleet(systems, mm)


def read_fleet(path, m: int | None = None) -> Fleet:
    """Load a fleet by file extension (``.json`` or CSV)."""
    path = os.fspath(path)
    if path.lower().endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            return fleet_from_json(fh.read(), m)
    if m is None:
        raise FleetValidationError("bad_socket_count", "socket count m is required for CSV input")
    return parse_fleet(path, m)


def write_fleet(fleet: Fleet, path):
    path = os.fspath(path)
    text = fleet_to_json(fleet) if path.lower().endswith(".json") else fleet_to_csv(fleet)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def failure_count_table(fleet_or_counts: Fleet | Iterable[int]) -> dict[int, tuple[int, float]]:
    """Map r -> (number of systems, percent of fleet)."""
    if isinstance(fleet_or_counts, Fleet):
        rs = [s.r for s in fleet_or_counts.systems]
    else:
        rs = list(fleet_or_counts)
    n = len(rs)
    counts = Counter(rs)
    return {r: (c, 100.0 * c / n) for r, c in sorted(counts.items())}


def format_failure_table(table: dict[int, tuple[int, float]]) -> str:
    lines = ["r | Number of systems | %", "--+-------------------+------"]
    total = 0
    for r, (c, pct) in table.items():
        lines.append(f"{r} | {c} | {pct:.1f}")
        total += c
    lines.append(f"Total | {total} | {100.0 if total else 0.0:.1f}")
    return "\n".join(lines)
