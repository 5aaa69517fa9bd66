"""Durable feedback storage: an append-only newline-delimited JSON log.

Entries are only ever appended; export returns the raw file bytes so two
exports with no writes in between are byte-identical, and the full history
(initial ratings and post-perspective revisions) stays replayable.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path


class FeedbackLog:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.touch(exist_ok=True)
        self._lock = threading.Lock()

    def append(self, entry: dict) -> dict:
        line = json.dumps(entry, sort_keys=True)
        with self._lock:
            with open(self.path, "a") as fh:
                fh.write(line + "\n")
        return entry

    def entries(self) -> list[dict]:
        with self._lock:
            raw = self.path.read_text()
        return [json.loads(line) for line in raw.splitlines() if line.strip()]

    def export_bytes(self) -> bytes:
        with self._lock:
            return self.path.read_bytes()
