"""Pillar cost functions and district-wide statistics.

All operations here are pure functions of (assignment, district) and are
safe to call concurrently. Costs are unit-free: SES evenness is an L1
deviation from the 1/3-per-tier target weighted by enrollment share, travel
is a ratio to the baseline (scale-invariant by construction), feeder cost is
the split-student fraction averaged over the two level pairs, and
utilization penalizes distance outside the [floor, 100%] band.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import (
    LEVEL_PAIRS,
    Assignment,
    District,
    DistrictError,
    SchoolLevel,
    TravelTimeMatrix,
)

TARGET_SHARE = 1.0 / 3.0


class EmptyDistrict(DistrictError):
    pass


class ZeroBaselineTravel(DistrictError):
    pass


@dataclass(frozen=True)
class SESShare:
    """Per-school SES composition at one level; shares are None when the
    school has no enrollment (undefined rather than zero)."""

    school_id: str
    enrollment: int
    low: float | None
    mid: float | None
    high: float | None

    @property
    def deviation(self) -> float | None:
        """L1 distance of the share vector from the (1/3, 1/3, 1/3) target."""
        if self.low is None:
            return None
        return abs(self.low - TARGET_SHARE) + abs(self.mid - TARGET_SHARE) + abs(self.high - TARGET_SHARE)


def _school_counts(assignment: Assignment, district: District, level: SchoolLevel) -> dict[str, list[int]]:
    counts = {s.id: [0, 0, 0] for s in district.schools_at(level)}
    for unit_id in district.unit_ids():
        c = district.students(unit_id, level)
        if c.total == 0:
            continue
        sid = assignment.school_of(unit_id, level)
        acc = counts[sid]
        acc[0] += c.low
        acc[1] += c.mid
        acc[2] += c.high
    return counts


def ses_shares(assignment: Assignment, district: District, level: SchoolLevel | None = None) -> list[SESShare]:
    level = level or district.config.focal_level
    out = []
    for sid, (low, mid, high) in sorted(_school_counts(assignment, district, level).items()):
        n = low + mid + high
        if n == 0:
            out.append(SESShare(sid, 0, None, None, None))
        else:
            out.append(SESShare(sid, n, low / n, mid / n, high / n))
    return out


def ses_cost(assignment: Assignment, district: District, level: SchoolLevel | None = None) -> float:
    """Enrollment-weighted L1 deviation from the even-thirds target, in
    [0, 4/3]. Zero iff every nonempty school matches the target exactly."""
    level = level or district.config.focal_level
    shares = ses_shares(assignment, district, level)
    total = sum(s.enrollment for s in shares)
    if total == 0:
        raise EmptyDistrict(f"no students enrolled at level {level.key}")
    return sum((s.enrollment / total) * s.deviation for s in shares if s.enrollment > 0)


def total_student_minutes(assignment: Assignment, district: District, matrix: TravelTimeMatrix | None = None) -> float:
    matrix = matrix or district.travel
    total = 0.0
    for unit_id in district.unit_ids():
        for level in district.levels:
            n = district.students(unit_id, level).total
            if n:
                total += n * matrix.get(unit_id, assignment.school_of(unit_id, level))
    return total


def travel_cost(
    assignment: Assignment,
    baseline: Assignment,
    district: District,
    matrix: TravelTimeMatrix | None = None,
) -> float:
    """Total student-minutes under the assignment as a fraction of the
    baseline's; 1.0 for the baseline itself. Scaling the whole matrix by a
    constant cancels in the ratio."""
    matrix = matrix or district.travel
    base = total_student_minutes(baseline, district, matrix)
    if base <= 0:
        raise ZeroBaselineTravel("baseline assignment has zero total student-minutes")
    return total_student_minutes(assignment, district, matrix) / base


@dataclass(frozen=True)
class TravelImpact:
    increased_count: int
    increased_percent: float
    decreased_count: int
    decreased_percent: float
    total_students: int
    # Only filled when a user unit is given: level key -> (current, proposed) minutes.
    user_minutes: dict[str, tuple[float, float]] | None = None


def travel_impact_stats(
    assignment: Assignment,
    baseline: Assignment,
    district: District,
    matrix: TravelTimeMatrix | None = None,
    user_unit: str | None = None,
) -> TravelImpact:
    """Counts of students whose travel time rises or falls versus the
    baseline; unchanged students belong to neither bucket."""
    matrix = matrix or district.travel
    inc = dec = total = 0
    for unit_id in district.unit_ids():
        for level in district.levels:
            n = district.students(unit_id, level).total
            if not n:
                continue
            total += n
            before = matrix.get(unit_id, baseline.school_of(unit_id, level))
            after = matrix.get(unit_id, assignment.school_of(unit_id, level))
            if after > before:
                inc += n
            elif after < before:
                dec += n
    user = None
    if user_unit is not None:
        user = {}
        for level in district.levels:
            user[level.key] = (
                matrix.get(user_unit, baseline.school_of(user_unit, level)),
                matrix.get(user_unit, assignment.school_of(user_unit, level)),
            )
    pct = lambda k: 100.0 * k / total if total else 0.0
    return TravelImpact(inc, pct(inc), dec, pct(dec), total, user)


@dataclass(frozen=True)
class FeederFlow:
    from_school: str
    to_school: str
    students: int


@dataclass(frozen=True)
class FeederGraph:
    """Student flows between one adjacent level pair under an assignment.
    Sum of a school's outflows equals its lower-level enrollment."""

    lower: SchoolLevel
    upper: SchoolLevel
    flows: tuple[FeederFlow, ...]

    def outflows(self, school_id: str) -> tuple[FeederFlow, ...]:
        return tuple(f for f in self.flows if f.from_school == school_id)


def feeder_flows(
    assignment: Assignment,
    district: District,
    level_pair: tuple[SchoolLevel, SchoolLevel],
) -> FeederGraph:
    lower, upper = level_pair
    acc: dict[tuple[str, str], int] = {}
    for unit_id in district.unit_ids():
        n = district.students(unit_id, lower).total
        if not n:
            continue
        key = (assignment.school_of(unit_id, lower), assignment.school_of(unit_id, upper))
        acc[key] = acc.get(key, 0) + n
    flows = tuple(FeederFlow(f, t, n) for (f, t), n in sorted(acc.items()))
    return FeederGraph(lower, upper, flows)


@dataclass(frozen=True)
class SplitStats:
    split_count: int
    split_percent: float
    intact_count: int
    intact_percent: float
    total: int


def _pair_split(assignment: Assignment, district: District, pair: tuple[SchoolLevel, SchoolLevel]) -> SplitStats:
    graph = feeder_flows(assignment, district, pair)
    dests: dict[str, set[str]] = {}
    enroll: dict[str, int] = {}
    for f in graph.flows:
        dests.setdefault(f.from_school, set()).add(f.to_school)
        enroll[f.from_school] = enroll.get(f.from_school, 0) + f.students
    total = sum(enroll.values())
    split = sum(enroll[s] for s, d in dests.items() if len(d) >= 2)
    pct = lambda k: 100.0 * k / total if total else 0.0
    return SplitStats(split, pct(split), total - split, pct(total - split), total)


def split_feeder_stats(assignment: Assignment, district: District) -> dict[str, SplitStats]:
    """Split/intact student counts per level pair plus 'combined' across
    both. A student counts as split when their lower-level school's cohort
    fans out to two or more destinations."""
    out: dict[str, SplitStats] = {}
    agg_split = agg_total = 0
    for pair in LEVEL_PAIRS:
        stats = _pair_split(assignment, district, pair)
        out[f"{pair[0].key}_to_{pair[1].key}"] = stats
        agg_split += stats.split_count
        agg_total += stats.total
    pct = lambda k: 100.0 * k / agg_total if agg_total else 0.0
    out["combined"] = SplitStats(agg_split, pct(agg_split), agg_total - agg_split, pct(agg_total - agg_split), agg_total)
    return out


def feeder_cost(assignment: Assignment, district: District) -> float:
    """Split-student fraction averaged over the two level pairs, in [0, 1].
    A pair with no students contributes zero."""
    fractions = []
    for pair in LEVEL_PAIRS:
        stats = _pair_split(assignment, district, pair)
        fractions.append(stats.split_count / stats.total if stats.total else 0.0)
    return sum(fractions) / len(fractions)


@dataclass(frozen=True)
class UtilizationStat:
    school_id: str
    name: str
    level: SchoolLevel
    enrollment: int
    capacity: int

    @property
    def utilization_percent(self) -> float:
        return 100.0 * self.enrollment / self.capacity

    @property
    def within_target(self) -> bool:
        # Integer comparison so 100% exactly counts as within target.
        return self.enrollment <= self.capacity

    @property
    def at_hard_max(self) -> bool:
        return 10 * self.enrollment >= 13 * self.capacity

    def under_enrolled(self, floor: float) -> bool:
        return self.enrollment < floor * self.capacity


def utilization_stats(assignment: Assignment, district: District) -> list[UtilizationStat]:
    out = []
    for level in district.levels:
        counts = _school_counts(assignment, district, level)
        for school in district.schools_at(level):
            out.append(UtilizationStat(school.id, school.name, level, sum(counts[school.id]), school.capacity))
    return sorted(out, key=lambda s: s.school_id)


def utilization_cost(assignment: Assignment, district: District, floor: float | None = None) -> float:
    """Enrollment-weighted overflow above 100% plus shortfall below the
    under-enrollment floor; zero iff every school sits inside the band."""
    floor = district.config.under_enrollment_floor if floor is None else floor
    stats = utilization_stats(assignment, district)
    total = sum(s.enrollment for s in stats)
    if total == 0:
        raise EmptyDistrict("district has no enrolled students")
    cost = 0.0
    for s in stats:
        u = s.enrollment / s.capacity
        cost += (s.enrollment / total) * (max(0.0, u - 1.0) + max(0.0, floor - u))
    return cost
