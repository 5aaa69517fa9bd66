"""Bundle I/O and synthetic districts.

A district bundle is five files in one directory:

  units.geojson   feature collection; each feature carries properties
                  {id, neighbors[], students:{level:{low,mid,high}}}
  schools.csv     id,name,level,capacity,longitude,latitude,home_unit
  travel.csv      long-form unit_id,school_id,minutes (must be complete)
  feeders.csv     the current zoning: unit_id,level,school_id
  config.txt      flat key = value thresholds and optimizer schedule

Writers are canonical (sorted keys, repr floats, LF newlines) so identical
districts always serialize to identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .model import (
    Assignment,
    District,
    DistrictConfig,
    DistrictError,
    GeoUnit,
    LEVEL_ORDER,
    School,
    SchoolLevel,
    SESCounts,
    TravelTimeMatrix,
    validate_district,
)

UNITS_FILE = "units.geojson"
SCHOOLS_FILE = "schools.csv"
TRAVEL_FILE = "travel.csv"
FEEDERS_FILE = "feeders.csv"
CONFIG_FILE = "config.txt"

EARTH_RADIUS_KM = 6371.0088


class ParseError(DistrictError):
    def __init__(self, file: str, record: str, reason: str):
        self.file = file
        self.record = record
        self.reason = reason
        super().__init__(f"{file} [{record}]: {reason}")


class InfeasibleParams(DistrictError):
    pass


@dataclass(frozen=True)
class DistrictBundle:
    units_path: Path
    schools_path: Path
    travel_path: Path
    feeders_path: Path
    config_path: Path

    @classmethod
    def from_dir(cls, directory: str | Path) -> "DistrictBundle":
        d = Path(directory)
        return cls(
            d / UNITS_FILE, d / SCHOOLS_FILE, d / TRAVEL_FILE, d / FEEDERS_FILE, d / CONFIG_FILE
        )

    def paths(self) -> tuple[Path, ...]:
        return (self.units_path, self.schools_path, self.travel_path, self.feeders_path, self.config_path)


# ---------------------------------------------------------------------------
# Parsing


def _parse_units(path: Path) -> list[GeoUnit]:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(path.name, "document", f"invalid JSON: {e}") from e
    units = []
    for idx, feature in enumerate(doc.get("features", [])):
        record = f"feature {idx}"
        props = feature.get("properties") or {}
        unit_id = props.get("id")
        if not unit_id:
            raise ParseError(path.name, record, "missing properties.id")
        record = f"unit {unit_id}"
        geom = feature.get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise ParseError(path.name, record, f"geometry must be a Polygon, got {geom.get('type')!r}")
        try:
            polygon = tuple(tuple((float(x), float(y)) for x, y in ring) for ring in geom["coordinates"])
        except (TypeError, ValueError, KeyError) as e:
            raise ParseError(path.name, record, f"bad polygon coordinates: {e}") from e
        students: dict[SchoolLevel, SESCounts] = {}
        for level_key, tiers in (props.get("students") or {}).items():
            try:
                level = SchoolLevel.from_key(level_key)
            except ValueError as e:
                raise ParseError(path.name, record, str(e)) from e
            try:
                students[level] = SESCounts(int(tiers["low"]), int(tiers["mid"]), int(tiers["high"]))
            except (KeyError, TypeError, ValueError) as e:
                raise ParseError(path.name, record, f"bad student counts for {level_key}: {e}") from e
        neighbors = frozenset(str(n) for n in props.get("neighbors", []))
        units.append(GeoUnit(str(unit_id), polygon, neighbors, students))
    return units


def _read_csv(path: Path, required: Sequence[str]) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(col not in reader.fieldnames for col in required):
            raise ParseError(path.name, "header", f"expected columns {list(required)}, got {reader.fieldnames}")
        return list(reader)


def _parse_schools(path: Path) -> list[School]:
    rows = _read_csv(path, ["id", "name", "level", "capacity", "longitude", "latitude", "home_unit"])
    schools = []
    for i, row in enumerate(rows, start=2):
        record = f"line {i}"
        try:
            schools.append(
                School(
                    id=row["id"],
                    name=row["name"],
                    level=SchoolLevel.from_key(row["level"]),
                    capacity=int(row["capacity"]),
                    location=(float(row["longitude"]), float(row["latitude"])),
                    home_unit=row["home_unit"],
                )
            )
        except ValueError as e:
            raise ParseError(path.name, record, str(e)) from e
    return schools


def _parse_travel(path: Path) -> TravelTimeMatrix:
    rows = _read_csv(path, ["unit_id", "school_id", "minutes"])
    minutes: dict[tuple[str, str], float] = {}
    for i, row in enumerate(rows, start=2):
        key = (row["unit_id"], row["school_id"])
        if key in minutes:
            raise ParseError(path.name, f"line {i}", f"duplicate travel entry for {key}")
        try:
            minutes[key] = float(row["minutes"])
        except ValueError as e:
            raise ParseError(path.name, f"line {i}", f"bad minutes value {row['minutes']!r}") from e
    return TravelTimeMatrix(minutes)


def _parse_feeders(path: Path) -> Assignment:
    rows = _read_csv(path, ["unit_id", "level", "school_id"])
    zone: dict[tuple[str, SchoolLevel], str] = {}
    for i, row in enumerate(rows, start=2):
        try:
            level = SchoolLevel.from_key(row["level"])
        except ValueError as e:
            raise ParseError(path.name, f"line {i}", str(e)) from e
        key = (row["unit_id"], level)
        if key in zone:
            raise ParseError(path.name, f"line {i}", f"duplicate assignment for {key}")
        zone[key] = row["school_id"]
    return Assignment(zone)


def _parse_config(path: Path) -> DistrictConfig:
    kv: dict[str, str] = {}
    for i, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(path.name, f"line {i}", f"expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    try:
        return DistrictConfig.from_key_values(kv)
    except (ValueError, KeyError) as e:
        raise ParseError(path.name, "config", str(e)) from e


def load_bundle(bundle: DistrictBundle | str | Path) -> District:
    """Parse and validate a bundle. Identical bytes always produce an
    identical District; the fingerprint hashes the raw file bytes."""
    if not isinstance(bundle, DistrictBundle):
        bundle = DistrictBundle.from_dir(bundle)
    for path in bundle.paths():
        if not path.exists():
            raise ParseError(path.name, "file", "missing from bundle")
    units = _parse_units(bundle.units_path)
    schools = _parse_schools(bundle.schools_path)
    travel = _parse_travel(bundle.travel_path)
    baseline = _parse_feeders(bundle.feeders_path)
    config = _parse_config(bundle.config_path)
    digest = hashlib.sha256()
    for path in bundle.paths():
        digest.update(path.read_bytes())
    return validate_district(units, schools, travel, baseline, config, fingerprint=digest.hexdigest())


# ---------------------------------------------------------------------------
# Canonical serialization


def units_geojson_bytes(units: Mapping[str, GeoUnit]) -> bytes:
    features = []
    for unit in sorted(units.values(), key=lambda u: u.id):
        students = {
            level.key: {"low": c.low, "mid": c.mid, "high": c.high}
            for level in LEVEL_ORDER
            if (c := unit.students_at(level)).total or level in unit.students
        }
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [[list(pt) for pt in ring] for ring in unit.polygon]},
                "properties": {"id": unit.id, "neighbors": sorted(unit.neighbors), "students": students},
            }
        )
    doc = {"type": "FeatureCollection", "features": features}
    return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode()


def schools_csv_bytes(schools: Mapping[str, School]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "name", "level", "capacity", "longitude", "latitude", "home_unit"])
    for s in sorted(schools.values(), key=lambda s: s.id):
        writer.writerow([s.id, s.name, s.level.key, s.capacity, repr(s.location[0]), repr(s.location[1]), s.home_unit])
    return buf.getvalue().encode()


def travel_csv_bytes(matrix: TravelTimeMatrix) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["unit_id", "school_id", "minutes"])
    for (unit_id, school_id), m in sorted(matrix.minutes.items()):
        writer.writerow([unit_id, school_id, repr(m)])
    return buf.getvalue().encode()


def feeders_csv_bytes(baseline: Assignment) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["unit_id", "level", "school_id"])
    for (unit_id, level), school_id in sorted(baseline.zone.items(), key=lambda kv: (kv[0][0], kv[0][1].rank)):
        writer.writerow([unit_id, level.key, school_id])
    return buf.getvalue().encode()


def config_bytes(config: DistrictConfig) -> bytes:
    lines = [f"{k} = {v}" for k, v in config.to_key_values().items()]
    return ("\n".join(lines) + "\n").encode()


def bundle_bytes(district: District) -> dict[str, bytes]:
    return {
        UNITS_FILE: units_geojson_bytes(district.units),
        SCHOOLS_FILE: schools_csv_bytes(district.schools),
        TRAVEL_FILE: travel_csv_bytes(district.travel),
        FEEDERS_FILE: feeders_csv_bytes(district.baseline),
        CONFIG_FILE: config_bytes(district.config),
    }


def save_bundle(district: District, directory: str | Path) -> DistrictBundle:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, data in bundle_bytes(district).items():
        (d / name).write_bytes(data)
    return DistrictBundle.from_dir(d)


def district_fingerprint(district: District) -> str:
    """Fingerprint from the loaded bundle bytes, or from the canonical
    serialization for districts built in memory."""
    if district.fingerprint:
        return district.fingerprint
    digest = hashlib.sha256()
    data = bundle_bytes(district)
    for name in (UNITS_FILE, SCHOOLS_FILE, TRAVEL_FILE, FEEDERS_FILE, CONFIG_FILE):
        digest.update(data[name])
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Synthetic districts


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance between two (longitude, latitude) points."""
    lon1, lat1, lon2, lat2 = map(math.radians, (a[0], a[1], b[0], b[1]))
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


def _grid_dims(n: int) -> tuple[int, int]:
    rows = int(math.sqrt(n))
    while rows > 1 and n % rows:
        rows -= 1
    return rows, n // rows


def _normalize_schools_per_level(spec: int | Sequence[int]) -> dict[SchoolLevel, int]:
    if isinstance(spec, int):
        counts = (spec, spec, spec)
    else:
        counts = tuple(spec)
        if len(counts) != 3:
            raise InfeasibleParams(f"schools_per_level needs 3 entries (elementary, middle, high), got {counts}")
    return dict(zip(LEVEL_ORDER, counts))


def generate_synthetic(
    out_dir: str | Path,
    unit_count: int,
    schools_per_level: int | Sequence[int] = 2,
    ses_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3),
    seed: int = 0,
    speed_kmh: float = 30.0,
    config: DistrictConfig | None = None,
) -> District:
    """Build a grid district, write its bundle, and return the validated
    District. Deterministic under (params, seed): re-running produces
    byte-identical bundle files."""
    per_level = _normalize_schools_per_level(schools_per_level)
    if unit_count < 1:
        raise InfeasibleParams("unit_count must be positive")
    for level, count in per_level.items():
        if count < 1:
            raise InfeasibleParams(f"need at least one {level.key} school")
        if count > unit_count:
            raise InfeasibleParams(f"{count} {level.key} schools cannot have distinct home units among {unit_count} units")
    rng = random.Random(seed)
    rows, cols = _grid_dims(unit_count)
    cell = 0.01  # degrees, ~1.1 km
    origin = (-71.10, 42.30)

    width = max(2, len(str(unit_count - 1)))
    unit_ids = [f"u{idx:0{width}d}" for idx in range(unit_count)]
    pos = {uid: divmod(idx, cols) for idx, uid in enumerate(unit_ids)}  # uid -> (row, col)

    def centroid(uid: str) -> tuple[float, float]:
        r, c = pos[uid]
        return (origin[0] + (c + 0.5) * cell, origin[1] + (r + 0.5) * cell)

    neighbors: dict[str, set[str]] = {uid: set() for uid in unit_ids}
    index = {rc: uid for uid, rc in pos.items()}
    for uid, (r, c) in pos.items():
        for rc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if rc in index:
                neighbors[uid].add(index[rc])

    # SES composition follows a southwest-to-northeast gradient, tilted by
    # the requested district-wide mix, with per-unit noise.
    span = max(1, (rows - 1) + (cols - 1))
    students: dict[str, dict[SchoolLevel, SESCounts]] = {}
    for uid in unit_ids:
        r, c = pos[uid]
        t = (r + c) / span
        base = (0.55 - 0.35 * t, 0.30, 0.15 + 0.35 * t)
        per_level_counts = {}
        for level in LEVEL_ORDER:
            noisy = [max(0.02, b * m * 3 + rng.uniform(-0.07, 0.07)) for b, m in zip(base, ses_mix)]
            total_p = sum(noisy)
            p = [x / total_p for x in noisy]
            n = rng.randint(18, 42)
            low = round(n * p[0])
            mid = round(n * p[1])
            high = n - low - mid
            if high < 0:
                mid += high
                high = 0
            per_level_counts[level] = SESCounts(low, mid, high)
        students[uid] = per_level_counts

    units = {
        uid: GeoUnit(
            id=uid,
            polygon=(_cell_ring(pos[uid], origin, cell),),
            neighbors=frozenset(neighbors[uid]),
            students=students[uid],
        )
        for uid in unit_ids
    }

    schools: dict[str, School] = {}
    zone: dict[tuple[str, SchoolLevel], str] = {}
    for level in LEVEL_ORDER:
        count = per_level[level]
        homes = rng.sample(unit_ids, count)
        names = rng.sample(_NAME_PARTS, count) if count <= len(_NAME_PARTS) else [f"School {i}" for i in range(count)]
        level_schools = []
        for i, home in enumerate(sorted(homes)):
            sid = f"{level.key[0]}{i:02d}"
            schools[sid] = School(
                id=sid,
                name=f"{names[i]} {level.key.capitalize()}",
                level=level,
                capacity=1,  # placeholder until zones are grown
                location=centroid(home),
                home_unit=home,
            )
            level_schools.append(sid)
        grown = _grow_zones(level_schools, schools, units, level)
        for uid, sid in grown.items():
            zone[(uid, level)] = sid

    # Capacities from grown enrollment with jitter, keeping the baseline
    # comfortably under the 130% cap.
    baseline = Assignment(zone)
    for sid in sorted(schools):
        school = schools[sid]
        enrolled = sum(units[u].students_at(school.level).total for u in baseline.members(sid, school.level))
        u = rng.uniform(0.80, 1.05)
        schools[sid] = School(sid, school.name, school.level, max(1, round(enrolled / u)), school.location, school.home_unit)

    minutes: dict[tuple[str, str], float] = {}
    for uid in unit_ids:
        for sid, school in schools.items():
            km = haversine_km(centroid(uid), school.location)
            raw = km / speed_kmh * 60.0
            # Quantize to 1/1024 minute so cost ratios stay exact under
            # matrix rescaling.
            minutes[(uid, sid)] = round(raw * 1024) / 1024
    travel = TravelTimeMatrix(minutes)

    district = District(units, schools, travel, baseline, config or DistrictConfig())
    save_bundle(district, out_dir)
    return load_bundle(out_dir)


def _cell_ring(rc: tuple[int, int], origin: tuple[float, float], cell: float):
    r, c = rc
    x0, y0 = origin[0] + c * cell, origin[1] + r * cell
    x1, y1 = x0 + cell, y0 + cell
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0))


_NAME_PARTS = (
    "Alder", "Birch", "Cedar", "Dogwood", "Elm", "Fir", "Hawthorn", "Juniper",
    "Laurel", "Maple", "Oak", "Pine", "Rowan", "Spruce", "Sycamore", "Willow",
)


def _grow_zones(
    school_ids: list[str],
    schools: Mapping[str, School],
    units: Mapping[str, GeoUnit],
    level: SchoolLevel,
) -> dict[str, str]:
    """Region-grow contiguous zones from each school's home unit, expanding
    whichever zone currently has the fewest students."""
    zone: dict[str, str] = {}
    load: dict[str, int] = {}
    for sid in school_ids:
        home = schools[sid].home_unit
        if home in zone:
            raise InfeasibleParams(f"two {level.key} schools share home unit {home!r}")
        zone[home] = sid
        load[sid] = units[home].students_at(level).total
    active = sorted(school_ids)
    while len(zone) < len(units):
        active.sort(key=lambda s: (load[s], s))
        grew = False
        for sid in active:
            frontier = sorted(
                v
                for u, z in zone.items()
                if z == sid
                for v in units[u].neighbors
                if v not in zone
            )
            if frontier:
                pick = frontier[0]
                zone[pick] = sid
                load[sid] += units[pick].students_at(level).total
                grew = True
                break
        if not grew:
            raise InfeasibleParams("unit graph is disconnected; cannot grow contiguous zones")
    return zone
