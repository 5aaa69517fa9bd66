"""Core domain model: geography, schools, assignments, rankings, and the
validated District aggregate everything else operates on.

District data is immutable after validation and safe to share across
threads; Assignments are value-semantic snapshots (copy before mutating).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping


class Pillar(Enum):
    """The four board policy pillars, in canonical serialization order."""

    SES_DIVERSITY = "ses"
    DISTANCE = "distance"
    FEEDER_PATTERNS = "feeder"
    UTILIZATION = "utilization"

    @property
    def key(self) -> str:
        return self.value

    @property
    def display_name(self) -> str:
        return _PILLAR_NAMES[self]

    @classmethod
    def from_key(cls, key: str) -> "Pillar":
        try:
            return cls(key.strip().lower())
        except ValueError:
            raise ValueError(f"unknown pillar key: {key!r}") from None


PILLAR_ORDER: tuple[Pillar, ...] = tuple(Pillar)

_PILLAR_NAMES = {
    Pillar.SES_DIVERSITY: "SES diversity",
    Pillar.DISTANCE: "Home-to-school distance",
    Pillar.FEEDER_PATTERNS: "Feeder patterns",
    Pillar.UTILIZATION: "Utilization",
}

PILLAR_DESCRIPTIONS = {
    Pillar.SES_DIVERSITY: "How evenly each school's enrollment draws from the three socioeconomic tiers.",
    Pillar.DISTANCE: "Estimated travel time between home and the assigned school.",
    Pillar.FEEDER_PATTERNS: "Whether a school's students move on to the next level together or get split across schools.",
    Pillar.UTILIZATION: "Enrollment as a share of a school's capacity.",
}


class SchoolLevel(Enum):
    ELEMENTARY = "elementary"
    MIDDLE = "middle"
    HIGH = "high"

    @property
    def key(self) -> str:
        return self.value

    @property
    def rank(self) -> int:
        return LEVEL_ORDER.index(self)

    @classmethod
    def from_key(cls, key: str) -> "SchoolLevel":
        try:
            return cls(key.strip().lower())
        except ValueError:
            raise ValueError(f"unknown school level: {key!r}") from None


LEVEL_ORDER: tuple[SchoolLevel, ...] = (
    SchoolLevel.ELEMENTARY,
    SchoolLevel.MIDDLE,
    SchoolLevel.HIGH,
)

# Adjacent (lower, upper) level pairs, in feeder direction.
LEVEL_PAIRS: tuple[tuple[SchoolLevel, SchoolLevel], ...] = (
    (SchoolLevel.ELEMENTARY, SchoolLevel.MIDDLE),
    (SchoolLevel.MIDDLE, SchoolLevel.HIGH),
)


@dataclass(frozen=True)
class SESCounts:
    """Student counts in one unit at one level, split by SES tier."""

    low: int = 0
    mid: int = 0
    high: int = 0

    @property
    def total(self) -> int:
        return self.low + self.mid + self.high

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.low, self.mid, self.high)


ZERO_COUNTS = SESCounts(0, 0, 0)

Ring = tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class GeoUnit:
    """Smallest assignable geography: a polygon with explicit neighbors and
    per-level student counts."""

    id: str
    polygon: tuple[Ring, ...]
    neighbors: frozenset[str]
    students: Mapping[SchoolLevel, SESCounts]

    def students_at(self, level: SchoolLevel) -> SESCounts:
        return self.students.get(level, ZERO_COUNTS)


@dataclass(frozen=True)
class School:
    id: str
    name: str
    level: SchoolLevel
    capacity: int
    location: tuple[float, float]  # (longitude, latitude)
    home_unit: str


@dataclass(frozen=True)
class TravelTimeMatrix:
    """Dense travel times in minutes, keyed by (unit id, school id)."""

    minutes: Mapping[tuple[str, str], float]

    def get(self, unit_id: str, school_id: str) -> float:
        return self.minutes[(unit_id, school_id)]

    def scaled(self, factor: float) -> "TravelTimeMatrix":
        return TravelTimeMatrix({k: factor * v for k, v in self.minutes.items()})


@dataclass
class Assignment:
    """Total map from (unit id, level) to school id. Value semantics: use
    copy() before mutating a shared instance."""

    zone: dict[tuple[str, SchoolLevel], str]

    def school_of(self, unit_id: str, level: SchoolLevel) -> str:
        return self.zone[(unit_id, level)]

    def copy(self) -> "Assignment":
        return Assignment(dict(self.zone))

    def members(self, school_id: str, level: SchoolLevel) -> set[str]:
        return {u for (u, lvl), s in self.zone.items() if lvl is level and s == school_id}

    def to_level_maps(self) -> dict[str, dict[str, str]]:
        out: dict[str, dict[str, str]] = {}
        for (unit_id, level), school_id in self.zone.items():
            out.setdefault(level.key, {})[unit_id] = school_id
        return {lvl: dict(sorted(m.items())) for lvl, m in sorted(out.items())}

    @classmethod
    def from_level_maps(cls, maps: Mapping[str, Mapping[str, str]]) -> "Assignment":
        zone = {}
        for level_key, m in maps.items():
            level = SchoolLevel.from_key(level_key)
            for unit_id, school_id in m.items():
                zone[(unit_id, level)] = school_id
        return cls(zone)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Assignment) and self.zone == other.zone


@dataclass(frozen=True)
class PillarRanking:
    """Permutation of the four pillars; position 1 is most important."""

    order: tuple[Pillar, Pillar, Pillar, Pillar]

    def __post_init__(self) -> None:
        if sorted(self.order, key=lambda p: p.key) != sorted(PILLAR_ORDER, key=lambda p: p.key):
            raise ValueError(f"ranking must be a permutation of the four pillars, got {self.order}")

    def position(self, pillar: Pillar) -> int:
        """1-based rank position of a pillar."""
        return self.order.index(pillar) + 1

    @property
    def key(self) -> str:
        return ",".join(p.key for p in self.order)

    @classmethod
    def from_keys(cls, keys: Iterable[str] | str) -> "PillarRanking":
        if isinstance(keys, str):
            keys = keys.split(",")
        pillars = tuple(Pillar.from_key(k) for k in keys)
        if len(pillars) != 4:
            raise ValueError(f"ranking needs exactly 4 pillars, got {len(pillars)}")
        return cls(pillars)  # type: ignore[arg-type]


@dataclass(frozen=True)
class PillarWeights:
    weight: Mapping[Pillar, float]

    def __post_init__(self) -> None:
        total = sum(self.weight[p] for p in PILLAR_ORDER)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1.0, got {total!r}")

    def of(self, pillar: Pillar) -> float:
        return self.weight[pillar]

    def as_key_map(self) -> dict[str, float]:
        return {p.key: self.weight[p] for p in PILLAR_ORDER}


@dataclass(frozen=True)
class DistrictConfig:
    """Thresholds and optimizer schedule, loadable from the bundle config file."""

    utilization_target: float = 1.0
    utilization_hard_max: float = 1.3
    under_enrollment_floor: float = 0.7
    focal_level: SchoolLevel = SchoolLevel.HIGH
    initial_temperature: float = 1.0
    cooling_rate: float = 0.995
    max_iterations: int = 20000
    restarts: int = 3
    allow_noncontiguous: bool = False

    def to_key_values(self) -> dict[str, str]:
        return {
            "utilization_target": repr(self.utilization_target),
            "utilization_hard_max": repr(self.utilization_hard_max),
            "under_enrollment_floor": repr(self.under_enrollment_floor),
            "focal_level": self.focal_level.key,
            "initial_temperature": repr(self.initial_temperature),
            "cooling_rate": repr(self.cooling_rate),
            "max_iterations": str(self.max_iterations),
            "restarts": str(self.restarts),
            "allow_noncontiguous": "true" if self.allow_noncontiguous else "false",
        }

    @classmethod
    def from_key_values(cls, kv: Mapping[str, str]) -> "DistrictConfig":
        base = cls()
        def _f(key, cast, default):
            return cast(kv[key]) if key in kv else default
        return cls(
            utilization_target=_f("utilization_target", float, base.utilization_target),
            utilization_hard_max=_f("utilization_hard_max", float, base.utilization_hard_max),
            under_enrollment_floor=_f("under_enrollment_floor", float, base.under_enrollment_floor),
            focal_level=_f("focal_level", SchoolLevel.from_key, base.focal_level),
            initial_temperature=_f("initial_temperature", float, base.initial_temperature),
            cooling_rate=_f("cooling_rate", float, base.cooling_rate),
            max_iterations=_f("max_iterations", int, base.max_iterations),
            restarts=_f("restarts", int, base.restarts),
            allow_noncontiguous=_f("allow_noncontiguous", lambda s: s.strip().lower() in ("true", "1", "yes"), base.allow_noncontiguous),
        )


@dataclass
class District:
    """Validated aggregate of everything the engine needs. Construct via
    validate_district() or ingest.load_bundle(); treat as read-only."""

    units: dict[str, GeoUnit]
    schools: dict[str, School]
    travel: TravelTimeMatrix
    baseline: Assignment
    config: DistrictConfig = field(default_factory=DistrictConfig)
    fingerprint: str = field(default="", compare=False)

    @property
    def levels(self) -> tuple[SchoolLevel, ...]:
        present = {s.level for s in self.schools.values()}
        return tuple(lvl for lvl in LEVEL_ORDER if lvl in present)

    def schools_at(self, level: SchoolLevel) -> list[School]:
        return sorted((s for s in self.schools.values() if s.level is level), key=lambda s: s.id)

    def unit_ids(self) -> list[str]:
        return sorted(self.units)

    def students(self, unit_id: str, level: SchoolLevel) -> SESCounts:
        return self.units[unit_id].students_at(level)

    def total_students(self, level: SchoolLevel | None = None) -> int:
        levels = (level,) if level is not None else self.levels
        return sum(self.units[u].students_at(lvl).total for u in self.units for lvl in levels)

    def with_travel(self, matrix: TravelTimeMatrix) -> "District":
        return replace(self, travel=matrix)


@dataclass(frozen=True)
class Scenario:
    """One proposed assignment plus its provenance."""

    id: str
    ranking: PillarRanking
    weights: PillarWeights
    baseline: Assignment
    proposed: Assignment
    seed: int
    objective_value: float


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


class DistrictError(Exception):
    pass


class ValidationFailure(DistrictError):
    """Carries the complete list of violations, not just the first."""

    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


def _connected(members: set[str], neighbors: Mapping[str, frozenset[str]], start: str) -> bool:
    if start not in members:
        return False
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in neighbors[u]:
            if v in members and v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(members)


def assignment_violations(
    assignment: Assignment,
    units: Mapping[str, GeoUnit],
    schools: Mapping[str, School],
    *,
    allow_noncontiguous: bool = False,
    hard_max_utilization: float | None = None,
) -> list[Violation]:
    """Check the Assignment invariants: totality over (unit, level) for every
    level with schools, level match, contiguity with home-unit containment,
    and optionally the utilization hard cap."""
    out: list[Violation] = []
    levels = tuple(lvl for lvl in LEVEL_ORDER if any(s.level is lvl for s in schools.values()))
    neighbor_map = {u.id: u.neighbors for u in units.values()}

    for (unit_id, level), school_id in sorted(assignment.zone.items(), key=lambda kv: (kv[0][0], kv[0][1].key)):
        if unit_id not in units:
            out.append(Violation("UnknownUnit", f"assignment references unit {unit_id!r} not in district"))
            continue
        school = schools.get(school_id)
        if school is None:
            out.append(Violation("UnknownSchool", f"assignment of unit {unit_id!r} references school {school_id!r} not in district"))
        elif school.level is not level:
            out.append(Violation("LevelMismatch", f"unit {unit_id!r} at level {level.key} assigned to {school_id!r} which is a {school.level.key} school"))

    for unit_id in sorted(units):
        for level in levels:
            if (unit_id, level) not in assignment.zone:
                out.append(Violation("MissingAssignment", f"unit {unit_id!r} has no {level.key} school assigned"))

    members: dict[str, set[str]] = {sid: set() for sid in schools}
    for (unit_id, level), school_id in assignment.zone.items():
        if school_id in members and schools[school_id].level is level:
            members[school_id].add(unit_id)

    for school in sorted(schools.values(), key=lambda s: s.id):
        zone = members[school.id]
        if allow_noncontiguous:
            continue
        if school.home_unit not in zone:
            out.append(Violation("HomeUnitOutsideZone", f"school {school.id!r} does not serve its own home unit {school.home_unit!r}"))
        elif not _connected(zone, neighbor_map, school.home_unit):
            out.append(Violation("NonContiguousZone", f"zone of school {school.id!r} is not contiguous"))

    if hard_max_utilization is not None:
        for school in sorted(schools.values(), key=lambda s: s.id):
            enrolled = sum(units[u].students_at(school.level).total for u in members[school.id] if u in units)
            # Epsilon keeps an exactly-at-cap school legal despite float rounding.
            if enrolled > hard_max_utilization * school.capacity + 1e-9:
                pct = 100.0 * enrolled / school.capacity
                out.append(Violation("OverCapacity", f"school {school.id!r} at {pct:.1f}% utilization exceeds the {hard_max_utilization:.0%} cap"))
    return out


def validate_district(
    units: Iterable[GeoUnit],
    schools: Iterable[School],
    matrix: TravelTimeMatrix,
    baseline: Assignment,
    config: DistrictConfig | None = None,
    fingerprint: str = "",
) -> District:
    """Assemble and validate a District; raises ValidationFailure carrying
    every violation found (not just the first)."""
    config = config or DistrictConfig()
    unit_map = {u.id: u for u in units}
    school_map = {s.id: s for s in schools}
    out: list[Violation] = []

    for unit in sorted(unit_map.values(), key=lambda u: u.id):
        for level in LEVEL_ORDER:
            c = unit.students_at(level)
            for tier, n in (("low", c.low), ("mid", c.mid), ("high", c.high)):
                if n < 0:
                    out.append(Violation("NegativeCount", f"unit {unit.id!r} has negative {tier} count {n} at level {level.key}"))
        for ring in unit.polygon:
            if len(ring) < 4 or ring[0] != ring[-1]:
                out.append(Violation("UnclosedRing", f"unit {unit.id!r} has a polygon ring that is not closed"))
        if unit.id in unit.neighbors:
            out.append(Violation("SelfNeighbor", f"unit {unit.id!r} lists itself as a neighbor"))
        for n_id in sorted(unit.neighbors):
            if n_id == unit.id:
                continue
            if n_id not in unit_map:
                out.append(Violation("UnknownNeighbor", f"unit {unit.id!r} lists unknown neighbor {n_id!r}"))
            elif unit.id not in unit_map[n_id].neighbors:
                out.append(Violation("AsymmetricNeighbor", f"unit {unit.id!r} lists {n_id!r} as neighbor but not vice versa"))

    out.extend(_polygon_violations(unit_map))

    for school in sorted(school_map.values(), key=lambda s: s.id):
        if school.capacity <= 0:
            out.append(Violation("InvalidCapacity", f"school {school.id!r} has non-positive capacity {school.capacity}"))
        if school.home_unit not in unit_map:
            out.append(Violation("OrphanHomeUnit", f"school {school.id!r} has home unit {school.home_unit!r} absent from the district"))

    for unit_id in sorted(unit_map):
        for school_id, school in sorted(school_map.items()):
            key = (unit_id, school_id)
            if key not in matrix.minutes:
                out.append(Violation("MissingTravelEntry", f"no travel time for unit {unit_id!r} to school {school_id!r}"))
                continue
            m = matrix.minutes[key]
            if not math.isfinite(m) or m < 0:
                out.append(Violation("InvalidTravelTime", f"travel time for ({unit_id!r}, {school_id!r}) is {m!r}"))
            elif m == 0 and school.home_unit != unit_id:
                out.append(Violation("ZeroTravelTime", f"zero minutes for ({unit_id!r}, {school_id!r}) but the school is not homed there"))

    levels_with_schools = {s.level for s in school_map.values()}
    for level in LEVEL_ORDER:
        has_students = any(u.students_at(level).total > 0 for u in unit_map.values())
        if has_students and level not in levels_with_schools:
            out.append(Violation("NoSchoolForLevel", f"students exist at level {level.key} but the district has no {level.key} school"))

    if len(unit_map) > 1:
        all_ids = set(unit_map)
        neighbor_map = {u.id: u.neighbors for u in unit_map.values()}
        start = min(all_ids)
        if not _connected(all_ids, neighbor_map, start):
            out.append(Violation("DisconnectedDistrict", "the unit neighbor graph is not connected"))

    # Baseline invariants are only meaningful once the pieces above resolve.
    if not out:
        out.extend(
            assignment_violations(
                baseline, unit_map, school_map,
                allow_noncontiguous=config.allow_noncontiguous,
            )
        )

    if out:
        raise ValidationFailure(out)
    return District(unit_map, school_map, matrix, baseline, config, fingerprint)


def _polygon_violations(unit_map: Mapping[str, GeoUnit]) -> list[Violation]:
    try:
        from shapely.geometry import Polygon
    except ImportError:  # geometry checks degrade gracefully without shapely
        return []
    out = []
    for unit in sorted(unit_map.values(), key=lambda u: u.id):
        if not unit.polygon:
            out.append(Violation("InvalidPolygon", f"unit {unit.id!r} has no polygon geometry"))
            continue
        rings = [r for r in unit.polygon if len(r) >= 4 and r[0] == r[-1]]
        if len(rings) != len(unit.polygon):
            continue  # already reported as UnclosedRing
        poly = Polygon(rings[0], rings[1:])
        if not poly.is_valid:
            out.append(Violation("InvalidPolygon", f"unit {unit.id!r} polygon is self-intersecting or otherwise invalid"))
    return out


def kendall_tau_distance(a: PillarRanking, b: PillarRanking) -> int:
    """Number of discordant pillar pairs between two rankings (0..6)."""
    pos_b = {p: i for i, p in enumerate(b.order)}
    seq = [pos_b[p] for p in a.order]
    return sum(1 for i in range(4) for j in range(i + 1, 4) if seq[i] > seq[j])
