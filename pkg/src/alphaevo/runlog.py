"""Append-only structured run logs shared by the search engines.

One JSON record per line, serialized with sorted keys and no timestamps,
so a seeded run with the scripted backend reproduces its log byte for
byte. Secrets registered with the log are scrubbed from every string
field before a record is written.
"""

from __future__ import annotations

import json
import threading
from typing import Callable, Iterable

__all__ = [
    "RunLog",
    "read_log",
    "convergence_series",
    "write_convergence_csv",
]

SCRUB_PLACEHOLDER = "********"


class RunLog:
    """Single-writer JSONL log kept in memory and optionally on disk."""

    def __init__(self, path: str | None = None):
        self._path = path
        self._records: list[dict] = []
        self._secrets: list[str] = []
        self._lock = threading.Lock()
        self._handle = open(path, "w", encoding="utf-8") if path else None

    def register_secret(self, secret: str) -> None:
        """Mask this value in all subsequently written records."""
        if secret:
            self._secrets.append(secret)

    def append(self, kind: str, **fields) -> dict:
        record = {"kind": kind, **fields}
        record = self._scrub(record)
        with self._lock:
            self._records.append(record)
            if self._handle is not None:
                self._handle.write(json.dumps(record, sort_keys=True) + "\n")
                self._handle.flush()
        return record

    def append_record(self, record: dict) -> dict:
        kind = record.get("kind", "event")
        rest = {k: v for k, v in record.items() if k != "kind"}
        return self.append(kind, **rest)

    @property
    def records(self) -> list[dict]:
        with self._lock:
            return list(self._records)

    @property
    def path(self) -> str | None:
        return self._path

    def close(self) -> None:
        with self._lock:
            if self._handle is not None:
                self._handle.close()
                self._handle = None

    def __enter__(self) -> "RunLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _scrub(self, value):
        if isinstance(value, str):
            for secret in self._secrets:
                value = value.replace(secret, SCRUB_PLACEHOLDER)
            return value
        if isinstance(value, dict):
            return {k: self._scrub(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [self._scrub(v) for v in value]
        return value


class BufferedSink:
    """Collects records from one worker for later in-order flushing."""

    def __init__(self):
        self.records: list[dict] = []

    def __call__(self, record: dict) -> None:
        self.records.append(record)

    def flush_to(self, sink: Callable[[dict], None]) -> None:
        for record in self.records:
            sink(record)
        self.records.clear()


def read_log(path: str) -> list[dict]:
    """Parse a JSONL run log, reporting the offending line on corruption."""
    records: list[dict] = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: corrupt log line: {exc.msg}") from exc
    return records


def convergence_series(records: Iterable[dict]) -> list[tuple[int, float | None]]:
    """(evaluations consumed, best validation IC so far) points from a log."""
    return [
        (r["evaluations"], r["best_validation_ic"])
        for r in records
        if r.get("kind") == "convergence"
    ]


def write_convergence_csv(series: Iterable[tuple[int, float | None]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("evaluations,best_validation_ic\n")
        for evaluations, best in series:
            handle.write(f"{evaluations},{'' if best is None else repr(best)}\n")
