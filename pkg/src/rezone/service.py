"""HTTP service exposing the full engagement flow: session creation from a
pillar ranking and an address, scenario retrieval with geometry and reports,
feedback capture with stat attachments, perspective serving, and
post-perspective revision.

Scenarios are cached per ranking permutation (24 keys at most) under the
service's fixed seed, so every visitor with the same priorities sees the
same proposal and every served report is reproducible from (bundle,
ranking, seed) alone.
"""

from __future__ import annotations

import csv
import logging
import os
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, Header, HTTPException
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel

from .feedback import FeedbackLog
from .ingest import load_bundle
from .model import (
    District,
    PILLAR_DESCRIPTIONS,
    PILLAR_ORDER,
    PillarRanking,
    Scenario,
)
from .optimizer import OptimizerParams, optimize
from .perspectives import EmptyPerspectivePool, PerspectivePool
from .report import full_report, zone_geojson
from .weights import softmax_weights

logger = logging.getLogger(__name__)

ADMIN_TOKEN_ENV = "REZONE_ADMIN_TOKEN"


class AddressOutsideDistrict(Exception):
    pass


def prepare_unit_polygons(district: District):
    from shapely.geometry import Polygon
    from shapely.prepared import prep

    out = []
    for unit_id in district.unit_ids():
        unit = district.units[unit_id]
        poly = Polygon(unit.polygon[0], unit.polygon[1:])
        out.append((unit_id, poly, prep(poly)))
    return out


def resolve_unit(district: District, longitude: float, latitude: float, prepared=None) -> str:
    """Point-in-polygon lookup; boundary points resolve to the lowest unit
    id with a warning."""
    from shapely.geometry import Point

    prepared = prepared if prepared is not None else prepare_unit_polygons(district)
    point = Point(longitude, latitude)
    hits = [unit_id for unit_id, poly, prepped in prepared if prepped.intersects(point) and poly.covers(point)]
    if not hits:
        raise AddressOutsideDistrict(f"({longitude}, {latitude}) does not fall inside any district unit")
    if len(hits) > 1:
        logger.warning("point (%s, %s) lies on a shared boundary of %s; using %s", longitude, latitude, hits, min(hits))
    return min(hits)


class SessionRequest(BaseModel):
    ranking: list[str]
    longitude: float | None = None
    latitude: float | None = None
    address: str | None = None


class FeedbackRequest(BaseModel):
    rating: int
    text: str = ""
    attached_stat_ids: list[str] = []


@dataclass
class Session:
    id: str
    ranking: PillarRanking
    address_unit: str
    longitude: float
    latitude: float
    scenario_id: str
    created_at: str
    perspective_served: bool = False
    versions: set[int] = field(default_factory=set)


def _error(status: int, code: str, message: str) -> HTTPException:
    return HTTPException(status_code=status, detail={"error": code, "message": message})


class EngineState:
    """Shared state behind the endpoints. Scenario cache entries are
    write-once per ranking key; feedback and perspective counters take the
    single-writer lock."""

    def __init__(
        self,
        district: District,
        seed: int,
        pool: PerspectivePool,
        feedback_log: FeedbackLog,
        addresses: list[dict] | None = None,
    ):
        self.district = district
        self.seed = seed
        self.pool = pool
        self.feedback_log = feedback_log
        self.addresses = addresses or []
        self.sessions: dict[str, Session] = {}
        self.scenarios: dict[str, Scenario] = {}
        self.reports: dict[str, dict] = {}
        self.unit_submissions: dict[str, int] = {}
        self._lock = threading.Lock()
        self._prepared = prepare_unit_polygons(district)

    def resolve_unit(self, longitude: float, latitude: float) -> str:
        try:
            return resolve_unit(self.district, longitude, latitude, self._prepared)
        except AddressOutsideDistrict as e:
            raise _error(404, "AddressOutsideDistrict", str(e))

    def lookup_address(self, query: str) -> tuple[float, float]:
        q = query.strip().lower()
        for row in self.addresses:
            if row["address"].strip().lower() == q:
                return row["longitude"], row["latitude"]
        raise _error(404, "UnknownAddress", f"address {query!r} not found in the lookup file")

    def scenario_for(self, ranking: PillarRanking) -> Scenario:
        key = ranking.key
        with self._lock:
            cached = self.scenarios.get(key)
        if cached is not None:
            return cached
        params = OptimizerParams.from_config(self.district.config, seed=self.seed)
        scenario = optimize(self.district, self.district.baseline, softmax_weights(ranking), params, ranking=ranking)
        with self._lock:
            return self.scenarios.setdefault(key, scenario)

    def next_unit_submission(self, unit_id: str) -> int:
        with self._lock:
            self.unit_submissions[unit_id] = self.unit_submissions.get(unit_id, 0) + 1
            return self.unit_submissions[unit_id]


def _load_addresses(path: str | Path | None) -> list[dict]:
    if not path:
        return []
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                {"address": row["address"], "longitude": float(row["longitude"]), "latitude": float(row["latitude"])}
            )
    return out


def create_app(
    data_dir: str | Path | None = None,
    district: District | None = None,
    seed: int = 0,
    perspectives_path: str | Path | None = None,
    feedback_path: str | Path | None = None,
    addresses_path: str | Path | None = None,
    precompute: bool = False,
) -> FastAPI:
    if district is None:
        if data_dir is None:
            raise ValueError("create_app needs data_dir or district")
        district = load_bundle(data_dir)
    pool = PerspectivePool.load(perspectives_path) if perspectives_path else PerspectivePool.default()
    log_path = Path(feedback_path) if feedback_path else Path(data_dir or ".") / "feedback.ndjson"
    state = EngineState(district, seed, pool, FeedbackLog(log_path), _load_addresses(addresses_path))

    app = FastAPI(title="rezone", version="0.1.0")
    app.state.engine = state

    if precompute:
        import itertools

        for perm in itertools.permutations(PILLAR_ORDER):
            state.scenario_for(PillarRanking(perm))

    @app.get("/api/pillars")
    def pillars() -> list[dict]:
        return [
            {"key": p.key, "name": p.display_name, "description": PILLAR_DESCRIPTIONS[p], "default_position": i + 1}
            for i, p in enumerate(PILLAR_ORDER)
        ]

    @app.get("/api/addresses")
    def addresses(q: str = "") -> list[dict]:
        ql = q.strip().lower()
        hits = [a for a in state.addresses if ql in a["address"].lower()] if ql else list(state.addresses)
        return hits[:10]

    def _session_or_404(session_id: str) -> Session:
        session = state.sessions.get(session_id)
        if session is None:
            raise _error(404, "UnknownSession", f"no session {session_id!r}")
        return session

    @app.post("/api/sessions", status_code=201)
    def create_session(body: SessionRequest) -> dict:
        try:
            ranking = PillarRanking.from_keys(body.ranking)
        except ValueError as e:
            raise _error(400, "InvalidRanking", str(e))
        if body.address is not None:
            lon, lat = state.lookup_address(body.address)
        elif body.longitude is not None and body.latitude is not None:
            lon, lat = body.longitude, body.latitude
        else:
            raise _error(400, "MissingAddress", "provide either an address or longitude and latitude")
        unit_id = state.resolve_unit(lon, lat)
        scenario = state.scenario_for(ranking)
        session = Session(
            id=uuid.uuid4().hex[:12],
            ranking=ranking,
            address_unit=unit_id,
            longitude=lon,
            latitude=lat,
            scenario_id=scenario.id,
            created_at=datetime.now(timezone.utc).isoformat(),
        )
        state.sessions[session.id] = session
        return {
            "session_id": session.id,
            "scenario_id": scenario.id,
            "address_unit": unit_id,
            "ranking": [p.key for p in ranking.order],
            "created_at": session.created_at,
        }

    @app.get("/api/sessions/{session_id}/scenario")
    def get_scenario(session_id: str) -> dict:
        session = _session_or_404(session_id)
        scenario = state.scenarios[session.ranking.key]
        report, personal, text = full_report(scenario, state.district, session.address_unit)
        return {
            "session_id": session.id,
            "scenario_id": scenario.id,
            "geometry": {
                "current": zone_geojson(scenario.baseline, state.district, "current"),
                "proposed": zone_geojson(scenario.proposed, state.district, "proposed"),
            },
            "schools": [
                {
                    "id": s.id,
                    "name": s.name,
                    "level": s.level.key,
                    "longitude": s.location[0],
                    "latitude": s.location[1],
                }
                for s in sorted(state.district.schools.values(), key=lambda s: s.id)
            ],
            "address": {"longitude": session.longitude, "latitude": session.latitude, "unit_id": session.address_unit},
            "report": report,
            "personal": personal,
            "text": text,
        }

    def _validated_feedback(session: Session, body: FeedbackRequest, version: int) -> dict:
        if not (1 <= body.rating <= 5):
            raise _error(400, "InvalidRating", f"rating must be between 1 and 5, got {body.rating}")
        scenario = state.scenarios[session.ranking.key]
        report, personal, text = full_report(scenario, state.district, session.address_unit)
        known = {card["id"] for card in report["stats"]}
        unknown = [sid for sid in body.attached_stat_ids if sid not in known]
        if unknown:
            raise _error(400, "UnknownStatId", f"stat ids not in this session's report: {unknown}")
        return {
            "session_id": session.id,
            "scenario_id": session.scenario_id,
            "version": version,
            "rating": body.rating,
            "text": body.text,
            "attached_stats": list(body.attached_stat_ids),
            "address_unit": session.address_unit,
            "unit_submission_index": state.next_unit_submission(session.address_unit),
            "submitted_at": datetime.now(timezone.utc).isoformat(),
        }

    @app.post("/api/sessions/{session_id}/feedback", status_code=201)
    def submit_feedback(session_id: str, body: FeedbackRequest) -> dict:
        session = _session_or_404(session_id)
        if 1 in session.versions:
            raise _error(409, "DuplicateFeedback", "initial feedback already submitted; use the revision endpoint")
        entry = _validated_feedback(session, body, version=1)
        state.feedback_log.append(entry)
        session.versions.add(1)
        return entry

    @app.get("/api/sessions/{session_id}/perspective")
    def get_perspective(session_id: str) -> dict:
        session = _session_or_404(session_id)
        try:
            perspective = state.pool.select(session.ranking)
        except EmptyPerspectivePool as e:
            raise _error(404, "EmptyPerspectivePool", str(e))
        session.perspective_served = True
        return {
            "id": perspective.id,
            "snippet": perspective.snippet,
            "full_text": perspective.full_text,
            "author_ranking": [p.key for p in perspective.author_ranking.order],
        }

    @app.post("/api/sessions/{session_id}/feedback/revision", status_code=201)
    def revise_feedback(session_id: str, body: FeedbackRequest) -> dict:
        session = _session_or_404(session_id)
        if 1 not in session.versions:
            raise _error(409, "NoInitialFeedback", "submit initial feedback before revising")
        if not session.perspective_served:
            raise _error(409, "PerspectiveNotServed", "a perspective must be viewed before revising feedback")
        entry = _validated_feedback(session, body, version=2)
        state.feedback_log.append(entry)
        session.versions.add(2)
        return entry

    @app.get("/api/admin/feedback", response_class=PlainTextResponse)
    def export_feedback(authorization: str = Header(default="")) -> PlainTextResponse:
        expected = os.environ.get(ADMIN_TOKEN_ENV)
        if not expected or authorization != f"Bearer {expected}":
            raise _error(401, "Unauthorized", f"set {ADMIN_TOKEN_ENV} and pass it as a bearer token")
        return PlainTextResponse(state.feedback_log.export_bytes(), media_type="application/x-ndjson")

    return app
