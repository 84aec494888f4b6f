"""Failure deduplication, operation coverage and the on-disk report."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

MESSAGE_LIMIT = 200


class IoFailure(OSError):
    pass


def dedup_key(operation_id: str, body: str) -> str:
    """``operation|message``; the message is the body's ``message``/``error`` field if any."""
    message = None
    try:
        data = json.loads(body)
    except (json.JSONDecodeError, TypeError):
        data = None
    if isinstance(data, dict):
        for name in ("message", "error"):
            if name in data and data[name] is not None:
                value = data[name]
                message = value if isinstance(value, str) else json.dumps(value, sort_keys=True)
                break
    if message is None:
        message = (body or "").strip()[:MESSAGE_LIMIT]
    return f"{operation_id}|{message}"


@dataclass
class FailureRecord:
    operation: str
    status: int
    dedup_key: str
    first_seen: int
    example: dict = field(default_factory=dict)


@dataclass
class CoverageSummary:
    operations_total: int
    operations_processed: int = 0
    processed: list[str] = field(default_factory=list)
    status_counts: dict[str, int] = field(default_factory=dict)
    failures: list[FailureRecord] = field(default_factory=list)
    requests_sent: int = 0
    requests_to_full_coverage: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


class CoverageTracker:
    """Aggregates exchanges into a :class:`CoverageSummary` as the session runs."""

    def __init__(self, operation_ids: Iterable[str]):
        self.operation_ids = list(operation_ids)
        self.summary = CoverageSummary(operations_total=len(self.operation_ids))
        self._keys: set[str] = set()

    def observe(
        self,
        seq: int,
        operation: str,
        status: int | None,
        body: str,
        mutated: bool,
        example: dict | None = None,
    ) -> None:
        s = self.summary
        s.requests_sent += 1
        label = str(status) if status else "transport_error"
        s.status_counts[label] = s.status_counts.get(label, 0) + 1
        if not status:
            return
        if 200 <= status < 300 and not mutated and operation not in s.processed:
            s.processed.append(operation)
            s.operations_processed = len(s.processed)
            if s.operations_processed == s.operations_total and s.requests_to_full_coverage is None:
                s.requests_to_full_coverage = seq
        if status >= 500:
            key = dedup_key(operation, body)
            if key not in self._keys:
                self._keys.add(key)
                s.failures.append(FailureRecord(operation, status, key, seq, example or {}))


def summarize_log(operation_ids: Iterable[str], records: Iterable[dict]) -> CoverageSummary:
    """Rebuild a summary from request-log rows (they must carry ``body``)."""
    tracker = CoverageTracker(operation_ids)
    for row in records:
        tracker.observe(row["seq"], row["operation"], row["status"], row.get("body", ""), row["mutated"])
    return tracker.summary


def _dump(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def emit_report(summary: CoverageSummary, spdg, qtables, out: str | Path, requests: list[dict] | None = None) -> list[Path]:
    """Write report.json, spdg.json, spdg.dot, qtables.json and requests.jsonl under ``out``."""
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    written = []
    files = {
        "report.json": json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n",
        "spdg.json": json.dumps(spdg.to_dict(), indent=2) + "\n",
        "spdg.dot": spdg.to_dot(),
        "qtables.json": json.dumps([row for t in qtables for row in t.rows()], indent=1) + "\n",
        "requests.jsonl": "".join(json.dumps(r, sort_keys=True) + "\n" for r in requests or []),
    }
    for name, text in files.items():
        _dump(out / name, text)
        written.append(out / name)
    return written
