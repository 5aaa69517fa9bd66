"""Perspective pool: short viewpoints from people with different pillar
priorities, served to prompt reflection before feedback is finalized.

Selection maximizes the Kendall-tau distance between the author's ranking
and the session's ranking (most different first); ties go to the entry
served the fewest times, then the lowest id.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .model import DistrictError, PillarRanking, kendall_tau_distance


class EmptyPerspectivePool(DistrictError):
    pass


@dataclass
class Perspective:
    id: str
    author_ranking: PillarRanking
    snippet: str
    full_text: str
    times_served: int = 0


@dataclass
class PerspectivePool:
    perspectives: list[Perspective]
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def load(cls, path: str | Path) -> "PerspectivePool":
        doc = json.loads(Path(path).read_text())
        return cls._from_doc(doc)

    @classmethod
    def default(cls) -> "PerspectivePool":
        doc = json.loads(resources.files("rezone.data").joinpath("perspectives.json").read_text())
        return cls._from_doc(doc)

    @classmethod
    def _from_doc(cls, doc: dict) -> "PerspectivePool":
        out = []
        for item in doc.get("perspectives", []):
            if not item.get("snippet"):
                raise ValueError(f"perspective {item.get('id')!r} has an empty snippet")
            out.append(
                Perspective(
                    id=str(item["id"]),
                    author_ranking=PillarRanking.from_keys(item["author_ranking"]),
                    snippet=item["snippet"],
                    full_text=item["full_text"],
                )
            )
        return cls(out)

    def select(self, ranking: PillarRanking) -> Perspective:
        """Pick the most-different perspective and count the serving."""
        if not self.perspectives:
            raise EmptyPerspectivePool("no perspectives loaded")
        with self._lock:
            best = min(
                self.perspectives,
                key=lambda p: (-kendall_tau_distance(p.author_ranking, ranking), p.times_served, p.id),
            )
            best.times_served += 1
            return best
