from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .utils import utc_now_iso

RUN_LOG_FILENAME = "events.jsonl"


@dataclass
class RunLog:
    """Append-only JSONL event log for one experiment run."""

    path: Path
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @classmethod
    def in_directory(cls, directory: Path) -> "RunLog":
        directory.mkdir(parents=True, exist_ok=True)
        return cls(directory / RUN_LOG_FILENAME)

    def read_events(self) -> list[dict[str, Any]]:
        if not self.path.exists():
            return []
        lines = self.path.read_text(encoding="utf-8").splitlines()
        return [json.loads(line) for line in lines if line.strip()]


def log_event(log: RunLog | None, event_type: str, payload: dict[str, Any]) -> None:
    if log is None:
        return
    entry = {
        "timestamp": utc_now_iso(),
        "type": event_type,
        "payload": payload,
    }
    with log._lock:
        log.path.parent.mkdir(parents=True, exist_ok=True)
        with log.path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(entry, sort_keys=True) + "\n")
