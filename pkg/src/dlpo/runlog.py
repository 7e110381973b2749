"""Append-only JSONL run logs with a determinism-friendly canonical form.

Every event line carries `event`, `step`, and payload fields; the wall-clock
timestamp lives in the optional `ts` field only, so two runs of the same
recorded session can be compared byte-for-byte after dropping `ts`.
"""

from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Any, Iterable, Optional, Union

from .errors import IoFailure, ParseError

STEP_STARTED = "StepStarted"
FORWARD_BATCH = "ForwardBatch"
LOSS_COMPUTED = "LossComputed"
GRADIENT_PRODUCED = "GradientProduced"
CANDIDATE_PRODUCED = "CandidateProduced"
TLR_MEASURED = "TlrMeasured"
TSA_DECISION = "TsaDecision"
EVALUATED = "Evaluated"
CHECKPOINTED = "Checkpointed"
RUN_FINISHED = "RunFinished"
STEP_SKIPPED = "StepSkipped"

EVENT_NAMES = frozenset(
    {
        STEP_STARTED,
        FORWARD_BATCH,
        LOSS_COMPUTED,
        GRADIENT_PRODUCED,
        CANDIDATE_PRODUCED,
        TLR_MEASURED,
        TSA_DECISION,
        EVALUATED,
        CHECKPOINTED,
        RUN_FINISHED,
        STEP_SKIPPED,
    }
)


def canonical_event(event: dict[str, Any]) -> str:
    """One event as a canonical JSON line, wall-clock field removed."""
    stripped = {k: v for k, v in event.items() if k != "ts"}
    return json.dumps(stripped, sort_keys=True, ensure_ascii=True)


def canonical_log(events: Iterable[dict[str, Any]]) -> str:
    """The whole log in canonical form; the unit for byte-level comparison."""
    return "\n".join(canonical_event(e) for e in events)


class RunLogWriter:
    """Writes events to a JSONL file as they happen (append mode)."""

    def __init__(self, path: Union[str, Path], include_ts: bool = True) -> None:
        self.path = Path(path)
        self.include_ts = include_ts
        self.events: list[dict[str, Any]] = []
        try:
            self._fh = open(self.path, "a", encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot open run log {path}: {exc}") from exc

    def write(self, event: str, step: int, **payload: Any) -> dict[str, Any]:
        assert event in EVENT_NAMES, f"unknown event name {event!r}"
        record: dict[str, Any] = {"event": event, "step": step, **payload}
        line = canonical_event(record)
        if self.include_ts:
            record["ts"] = time.time()
            line = json.dumps(record, sort_keys=True, ensure_ascii=True)
        self.events.append(record)
        try:
            self._fh.write(line + "\n")
            self._fh.flush()
        except OSError as exc:
            raise IoFailure(f"cannot write run log {self.path}: {exc}") from exc
        return record

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "RunLogWriter":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def read_runlog(path: Union[str, Path]) -> list[dict[str, Any]]:
    """Parse a run log; malformed lines raise ParseError with the line no."""
    events: list[dict[str, Any]] = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read run log {path}: {exc}") from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON in run log: {exc.msg}") from exc
            if not isinstance(obj, dict) or "event" not in obj:
                raise ParseError(lineno, "run log line is not an event object")
            events.append(obj)
    return events
