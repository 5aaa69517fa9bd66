"""Boundary optimization: weighted composite objective, frontier moves,
simulated annealing with restarts, and an exhaustive oracle for small
districts.

A move reassigns one frontier geo-unit (a unit bordering a different zone at
the same level) to that adjacent zone. Moves that would disconnect the donor
zone, strand a school's home unit, or push the receiver past the utilization
hard cap are off the table. Levels are optimized jointly because the feeder
cost couples adjacent levels.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from typing import Iterable

from . import metrics
from .model import (
    LEVEL_PAIRS,
    Assignment,
    District,
    DistrictConfig,
    DistrictError,
    PILLAR_ORDER,
    Pillar,
    PillarRanking,
    PillarWeights,
    Scenario,
    SchoolLevel,
    ValidationFailure,
    assignment_violations,
)

CAP_EPS = 1e-9  # slack so an exactly-at-cap school stays legal under float math


class InfeasibleBaseline(DistrictError):
    pass


class TooLarge(DistrictError):
    pass


@dataclass(frozen=True)
class OptimizerParams:
    seed: int = 0
    max_iterations: int = 20000
    initial_temperature: float = 1.0
    cooling_rate: float = 0.995
    restarts: int = 3
    hard_max_utilization: float = 1.3
    allow_noncontiguous: bool = False

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not (0.0 < self.cooling_rate < 1.0):
            raise ValueError("cooling_rate must be in (0, 1)")
        if self.initial_temperature < 0.0:
            raise ValueError("initial_temperature must be non-negative")
        if self.restarts < 0:
            raise ValueError("restarts must be non-negative")

    @classmethod
    def from_config(cls, config: DistrictConfig, seed: int = 0) -> "OptimizerParams":
        return cls(
            seed=seed,
            max_iterations=config.max_iterations,
            initial_temperature=config.initial_temperature,
            cooling_rate=config.cooling_rate,
            restarts=config.restarts,
            hard_max_utilization=config.utilization_hard_max,
            allow_noncontiguous=config.allow_noncontiguous,
        )


@dataclass(frozen=True)
class ObjectiveBreakdown:
    raw: dict[Pillar, float]
    weighted: dict[Pillar, float]
    total: float

    def as_json(self) -> dict:
        return {
            "total": self.total,
            "pillars": {p.key: {"raw": self.raw[p], "weighted": self.weighted[p]} for p in PILLAR_ORDER},
        }


@dataclass(frozen=True)
class Move:
    unit: str
    level: SchoolLevel
    from_school: str
    to_school: str


@dataclass(frozen=True)
class MoveRecord:
    restart: int
    iteration: int
    unit: str
    level: str
    from_school: str
    to_school: str
    objective: float


def composite_objective(
    assignment: Assignment,
    baseline: Assignment,
    district: District,
    weights: PillarWeights,
) -> ObjectiveBreakdown:
    """From-scratch weighted sum of the four pillar costs."""
    raw = {
        Pillar.SES_DIVERSITY: metrics.ses_cost(assignment, district),
        Pillar.DISTANCE: metrics.travel_cost(assignment, baseline, district),
        Pillar.FEEDER_PATTERNS: metrics.feeder_cost(assignment, district),
        Pillar.UTILIZATION: metrics.utilization_cost(assignment, district),
    }
    weighted = {p: weights.of(p) * raw[p] for p in PILLAR_ORDER}
    return ObjectiveBreakdown(raw, weighted, sum(weighted[p] for p in PILLAR_ORDER))


def boundary_moves(assignment: Assignment, district: District, params: OptimizerParams | None = None) -> list[Move]:
    """All single-unit frontier reassignments legal from this state."""
    params = params or OptimizerParams.from_config(district.config)
    ev = _Evaluator(district, assignment, None, params)
    return [m for m in ev.candidate_moves() if ev.donor_stays_connected(m)]


class _Evaluator:
    """Aggregate-backed objective evaluation with O(1) move apply/revert.

    Aggregates: per-school SES counts per level, total student-minutes, and
    feeder flow tallies per adjacent level pair. Costs are computed fresh
    from the aggregates on each call, so repeated evaluation never drifts
    from the aggregate state.
    """

    def __init__(self, district: District, baseline: Assignment, weights: PillarWeights | None, params: OptimizerParams):
        self.district = district
        self.weights = weights
        self.params = params
        self.levels = district.levels
        self.focal = district.config.focal_level
        self.floor = district.config.under_enrollment_floor
        self.units = district.unit_ids()
        self.neighbors = {u: tuple(sorted(district.units[u].neighbors)) for u in self.units}
        self.counts_cache = {
            (u, lvl): district.students(u, lvl) for u in self.units for lvl in self.levels
        }
        self.capacity = {sid: s.capacity for sid, s in district.schools.items()}
        self.home = {sid: s.home_unit for sid, s in district.schools.items()}
        self.school_level = {sid: s.level for sid, s in district.schools.items()}
        self.schools_by_level = {lvl: [s.id for s in district.schools_at(lvl)] for lvl in self.levels}
        self.sorted_school_ids = sorted(district.schools)
        self.pairs = [p for p in LEVEL_PAIRS if p[0] in self.levels and p[1] in self.levels]
        self.total_students = district.total_students()
        self.baseline_travel = metrics.total_student_minutes(baseline, district)
        if weights is not None and self.baseline_travel <= 0:
            raise metrics.ZeroBaselineTravel("baseline assignment has zero total student-minutes")
        self.minutes = district.travel.minutes
        self.load(baseline)

    def load(self, assignment: Assignment) -> None:
        self.zone = dict(assignment.zone)
        self.counts = {lvl: {sid: [0, 0, 0, 0] for sid in self.schools_by_level[lvl]} for lvl in self.levels}
        self.members: dict[tuple[SchoolLevel, str], set[str]] = {
            (lvl, sid): set() for lvl in self.levels for sid in self.schools_by_level[lvl]
        }
        self.travel_sum = 0.0
        self.flows: dict[tuple[SchoolLevel, SchoolLevel], dict[tuple[str, str], int]] = {p: {} for p in self.pairs}
        for u in self.units:
            for lvl in self.levels:
                sid = self.zone[(u, lvl)]
                c = self.counts_cache[(u, lvl)]
                acc = self.counts[lvl][sid]
                acc[0] += c.low
                acc[1] += c.mid
                acc[2] += c.high
                acc[3] += c.total
                self.members[(lvl, sid)].add(u)
                if c.total:
                    self.travel_sum += c.total * self.minutes[(u, sid)]
            for pair in self.pairs:
                n = self.counts_cache[(u, pair[0])].total
                if n:
                    key = (self.zone[(u, pair[0])], self.zone[(u, pair[1])])
                    self.flows[pair][key] = self.flows[pair].get(key, 0) + n

    # -- cost evaluation -----------------------------------------------

    def raw_costs(self) -> dict[Pillar, float]:
        return {
            Pillar.SES_DIVERSITY: self._ses(),
            Pillar.DISTANCE: self.travel_sum / self.baseline_travel,
            Pillar.FEEDER_PATTERNS: self._feeder(),
            Pillar.UTILIZATION: self._utilization(),
        }

    def total(self) -> float:
        raw = self.raw_costs()
        return sum(self.weights.of(p) * raw[p] for p in PILLAR_ORDER)

    def breakdown(self) -> ObjectiveBreakdown:
        raw = self.raw_costs()
        weighted = {p: self.weights.of(p) * raw[p] for p in PILLAR_ORDER}
        return ObjectiveBreakdown(raw, weighted, sum(weighted[p] for p in PILLAR_ORDER))

    def _ses(self) -> float:
        counts = self.counts[self.focal]
        total = sum(counts[sid][3] for sid in self.schools_by_level[self.focal])
        if total == 0:
            raise metrics.EmptyDistrict(f"no students enrolled at level {self.focal.key}")
        cost = 0.0
        third = 1.0 / 3.0
        for sid in self.schools_by_level[self.focal]:
            low, mid, high, n = counts[sid]
            if n == 0:
                continue
            dev = abs(low / n - third) + abs(mid / n - third) + abs(high / n - third)
            cost += (n / total) * dev
        return cost

    def _feeder(self) -> float:
        fractions = []
        for pair in LEVEL_PAIRS:
            if pair not in self.flows:
                fractions.append(0.0)
                continue
            dests: dict[str, int] = {}
            for (f, t), n in self.flows[pair].items():
                if n > 0:
                    dests[f] = dests.get(f, 0) + 1
            total = split = 0
            for sid in self.schools_by_level[pair[0]]:
                n = self.counts[pair[0]][sid][3]
                total += n
                if dests.get(sid, 0) >= 2:
                    split += n
            fractions.append(split / total if total else 0.0)
        return sum(fractions) / len(fractions)

    def _utilization(self) -> float:
        cost = 0.0
        for sid in self.sorted_school_ids:
            lvl = self.school_level[sid]
            n = self.counts[lvl][sid][3]
            u = n / self.capacity[sid]
            cost += (n / self.total_students) * (max(0.0, u - 1.0) + max(0.0, self.floor - u))
        return cost

    # -- moves -----------------------------------------------------------

    def candidate_moves(self) -> list[Move]:
        """Frontier moves passing the cheap filters (home-unit retention and
        receiver cap); donor connectivity is checked separately."""
        moves = []
        cap_mult = self.params.hard_max_utilization
        for u in self.units:
            for lvl in self.levels:
                f = self.zone[(u, lvl)]
                if self.home[f] == u:
                    continue
                n = self.counts_cache[(u, lvl)].total
                seen = {f}
                for v in self.neighbors[u]:
                    t = self.zone[(v, lvl)]
                    if t in seen:
                        continue
                    seen.add(t)
                    if self.counts[lvl][t][3] + n <= cap_mult * self.capacity[t] + CAP_EPS:
                        moves.append(Move(u, lvl, f, t))
        return moves

    def donor_stays_connected(self, move: Move) -> bool:
        if self.params.allow_noncontiguous:
            return True
        remaining = self.members[(move.level, move.from_school)] - {move.unit}
        home = self.home[move.from_school]
        if home not in remaining:
            return False
        seen = {home}
        stack = [home]
        while stack:
            x = stack.pop()
            for v in self.neighbors[x]:
                if v in remaining and v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == len(remaining)

    def apply(self, move: Move) -> None:
        u, lvl, f, t = move.unit, move.level, move.from_school, move.to_school
        c = self.counts_cache[(u, lvl)]
        for i, val in enumerate((c.low, c.mid, c.high, c.total)):
            self.counts[lvl][f][i] -= val
            self.counts[lvl][t][i] += val
        self.members[(lvl, f)].discard(u)
        self.members[(lvl, t)].add(u)
        self.zone[(u, lvl)] = t
        if c.total:
            self.travel_sum += c.total * (self.minutes[(u, t)] - self.minutes[(u, f)])
        for pair in self.pairs:
            lower, upper = pair
            if lvl is lower:
                n = c.total
                other = self.zone[(u, upper)]
                self._flow_shift(pair, (f, other), (t, other), n)
            elif lvl is upper:
                n = self.counts_cache[(u, lower)].total
                other = self.zone[(u, lower)]
                self._flow_shift(pair, (other, f), (other, t), n)

    def revert(self, move: Move) -> None:
        self.apply(Move(move.unit, move.level, move.to_school, move.from_school))

    def _flow_shift(self, pair, old_key, new_key, n: int) -> None:
        if not n:
            return
        table = self.flows[pair]
        table[old_key] -= n
        if table[old_key] == 0:
            del table[old_key]
        table[new_key] = table.get(new_key, 0) + n

    def over_cap_schools(self) -> list[str]:
        out = []
        for sid in self.sorted_school_ids:
            lvl = self.school_level[sid]
            if self.counts[lvl][sid][3] > self.params.hard_max_utilization * self.capacity[sid] + CAP_EPS:
                out.append(sid)
        return out

    def assignment(self) -> Assignment:
        return Assignment(dict(self.zone))


def _repair_overflow(ev: _Evaluator) -> None:
    """Greedily move frontier units out of over-cap schools; raises
    InfeasibleBaseline when stuck."""
    def overflow() -> float:
        total = 0.0
        for sid in ev.sorted_school_ids:
            lvl = ev.school_level[sid]
            total += max(0.0, ev.counts[lvl][sid][3] - ev.params.hard_max_utilization * ev.capacity[sid])
        return total

    current = overflow()
    while current > CAP_EPS:
        over = set(ev.over_cap_schools())
        best_move = None
        best_after = current
        for move in ev.candidate_moves():
            if move.from_school not in over or not ev.donor_stays_connected(move):
                continue
            ev.apply(move)
            after = overflow()
            ev.revert(move)
            if after < best_after - CAP_EPS:
                best_after = after
                best_move = move
        if best_move is None:
            raise InfeasibleBaseline("baseline exceeds the utilization cap and no repair move exists")
        ev.apply(best_move)
        current = best_after


def optimize(
    district: District,
    baseline: Assignment,
    weights: PillarWeights,
    params: OptimizerParams,
    ranking: PillarRanking | None = None,
    move_log: list[MoveRecord] | None = None,
) -> Scenario:
    """Simulated annealing over frontier moves, best of (restarts + 1)
    seeded runs. Bit-identical output for identical inputs and seed."""
    problems = assignment_violations(
        baseline, district.units, district.schools, allow_noncontiguous=params.allow_noncontiguous
    )
    if problems:
        raise ValidationFailure(problems)
    if ranking is None:
        ranking = PillarRanking(tuple(sorted(PILLAR_ORDER, key=lambda p: -weights.of(p))))  # type: ignore[arg-type]

    ev = _Evaluator(district, baseline, weights, params)
    if ev.over_cap_schools():
        _repair_overflow(ev)
    start = ev.assignment()

    best_zone = dict(start.zone)
    ev.load(start)
    best_obj = ev.total()

    master = random.Random(params.seed)
    run_seeds = [master.randrange(2**63) for _ in range(params.restarts + 1)]

    for run_idx, run_seed in enumerate(run_seeds):
        rng = random.Random(run_seed)
        ev.load(start)
        cur_obj = ev.total()
        temperature = params.initial_temperature
        stale = 0
        candidates: list[Move] | None = None
        for iteration in range(params.max_iterations):
            if candidates is None:
                candidates = ev.candidate_moves()
            if not candidates:
                break
            idx = rng.randrange(len(candidates))
            move = candidates[idx]
            if not ev.donor_stays_connected(move):
                # Stays infeasible until the state changes; drop it from the cache.
                candidates = candidates[:idx] + candidates[idx + 1 :]
                temperature *= params.cooling_rate
                stale += 1
                if temperature < 1e-7 and stale >= 400:
                    break
                continue
            ev.apply(move)
            new_obj = ev.total()
            delta = new_obj - cur_obj
            accept = delta <= 0 or (
                temperature > 0 and rng.random() < math.exp(-delta / temperature)
            )
            if accept:
                cur_obj = new_obj
                candidates = None
                stale = 0
                if move_log is not None:
                    move_log.append(
                        MoveRecord(run_idx, iteration, move.unit, move.level.key, move.from_school, move.to_school, cur_obj)
                    )
                if cur_obj < best_obj:
                    best_obj = cur_obj
                    best_zone = dict(ev.zone)
            else:
                ev.revert(move)
                stale += 1
            temperature *= params.cooling_rate
            if temperature < 1e-7 and stale >= 400:
                break

    proposed = Assignment(best_zone)
    final = composite_objective(proposed, baseline, district, weights)
    problems = assignment_violations(
        proposed,
        district.units,
        district.schools,
        allow_noncontiguous=params.allow_noncontiguous,
        hard_max_utilization=params.hard_max_utilization,
    )
    if problems:  # internal invariant; moves should make this unreachable
        raise ValidationFailure(problems)
    return Scenario(
        id=scenario_id(district, ranking, params.seed),
        ranking=ranking,
        weights=weights,
        baseline=baseline.copy(),
        proposed=proposed,
        seed=params.seed,
        objective_value=final.total,
    )


def scenario_id(district: District, ranking: PillarRanking, seed: int) -> str:
    from .ingest import district_fingerprint

    digest = hashlib.sha256(f"{district_fingerprint(district)}|{ranking.key}|{seed}".encode()).hexdigest()
    return f"scn-{digest[:12]}"


# ---------------------------------------------------------------------------
# Exhaustive oracle


def brute_force_optimum(district: District, baseline: Assignment, weights: PillarWeights) -> Assignment:
    """Exhaustive argmin of the composite objective over all assignments
    passing the hard constraints; ties broken by lexicographic encoding.
    Only for oracle-sized districts (<= 12 units)."""
    if len(district.units) > 12:
        raise TooLarge(f"brute force capped at 12 units, district has {len(district.units)}")
    params = OptimizerParams.from_config(district.config)
    units = district.unit_ids()
    levels = district.levels
    base_travel = metrics.total_student_minutes(baseline, district)
    if base_travel <= 0:
        raise metrics.ZeroBaselineTravel("baseline assignment has zero total student-minutes")
    total_students = district.total_students()

    w_ses = weights.of(Pillar.SES_DIVERSITY)
    w_dist = weights.of(Pillar.DISTANCE)
    w_feed = weights.of(Pillar.FEEDER_PATTERNS)
    w_util = weights.of(Pillar.UTILIZATION)

    feasible = {lvl: _feasible_zonings(district, lvl, params) for lvl in levels}
    for lvl, zonings in feasible.items():
        if not zonings:
            raise InfeasibleBaseline(f"no feasible zoning exists at level {lvl.key}")

    def level_score(lvl: SchoolLevel, zoning: tuple[str, ...]) -> float:
        school_counts = {s.id: [0, 0, 0, 0] for s in district.schools_at(lvl)}
        travel = 0.0
        for u, sid in zip(units, zoning):
            c = district.students(u, lvl)
            acc = school_counts[sid]
            acc[0] += c.low
            acc[1] += c.mid
            acc[2] += c.high
            acc[3] += c.total
            if c.total:
                travel += c.total * district.travel.get(u, sid)
        score = w_dist * travel / base_travel
        for sid in sorted(school_counts):
            n = school_counts[sid][3]
            u_frac = n / district.schools[sid].capacity
            score += w_util * (n / total_students) * (max(0.0, u_frac - 1.0) + max(0.0, district.config.under_enrollment_floor - u_frac))
        if lvl is district.config.focal_level:
            focal_total = sum(v[3] for v in school_counts.values())
            if focal_total == 0:
                raise metrics.EmptyDistrict(f"no students enrolled at level {lvl.key}")
            third = 1.0 / 3.0
            dev_sum = 0.0
            for sid in sorted(school_counts):
                low, mid, high, n = school_counts[sid]
                if n:
                    dev_sum += (n / focal_total) * (abs(low / n - third) + abs(mid / n - third) + abs(high / n - third))
            score += w_ses * dev_sum
        return score

    # Feeder cost averages over both level pairs even when a pair is absent,
    # so each present pair contributes w_feed * split_fraction / 2.
    def pair_score(pair, lower_zoning, upper_zoning) -> float:
        lower = pair[0]
        dests: dict[str, set[str]] = {}
        enroll: dict[str, int] = {}
        for u, low_sid, up_sid in zip(units, lower_zoning, upper_zoning):
            n = district.students(u, lower).total
            if not n:
                continue
            dests.setdefault(low_sid, set()).add(up_sid)
            enroll[low_sid] = enroll.get(low_sid, 0) + n
        total = sum(enroll.values())
        if not total:
            return 0.0
        split = sum(enroll[s] for s, d in dests.items() if len(d) >= 2)
        return w_feed * 0.5 * split / total

    scores = {lvl: [level_score(lvl, z) for z in feasible[lvl]] for lvl in levels}

    def encoding(combo: dict[SchoolLevel, tuple[str, ...]]) -> tuple[str, ...]:
        return tuple(combo[lvl][i] for i in range(len(units)) for lvl in levels)

    best_combos: list[dict[SchoolLevel, tuple[str, ...]]] = []
    if len(levels) == 1:
        lvl = levels[0]
        best_val = min(scores[lvl])
        best_combos = [{lvl: z} for z, v in zip(feasible[lvl], scores[lvl]) if v == best_val]
    elif len(levels) == 2 and (levels[0], levels[1]) in LEVEL_PAIRS:
        lo, up = levels
        best_val = math.inf
        for zl, vl in zip(feasible[lo], scores[lo]):
            for zu, vu in zip(feasible[up], scores[up]):
                val = vl + vu + pair_score((lo, up), zl, zu)
                if val < best_val:
                    best_val = val
                    best_combos = [{lo: zl, up: zu}]
                elif val == best_val:
                    best_combos.append({lo: zl, up: zu})
    elif len(levels) == 2:
        # Non-adjacent levels: independent minima.
        combos = []
        best_val = 0.0
        for lvl in levels:
            v = min(scores[lvl])
            best_val += v
            combos.append([z for z, s in zip(feasible[lvl], scores[lvl]) if s == v])
        best_combos = [{levels[0]: a, levels[1]: b} for a in combos[0] for b in combos[1]]
    else:
        elem, mid, high = levels
        p1 = (elem, mid)
        p2 = (mid, high)
        best_val = math.inf
        per_mid: list[tuple[float, float, float]] = []
        for zm, vm in zip(feasible[mid], scores[mid]):
            e_best = min(ve + pair_score(p1, ze, zm) for ze, ve in zip(feasible[elem], scores[elem]))
            h_best = min(vh + pair_score(p2, zm, zh) for zh, vh in zip(feasible[high], scores[high]))
            per_mid.append((vm, e_best, h_best))
            best_val = min(best_val, vm + e_best + h_best)
        for (vm, e_best, h_best), zm in zip(per_mid, feasible[mid]):
            if vm + e_best + h_best != best_val:
                continue
            es = [ze for ze, ve in zip(feasible[elem], scores[elem]) if ve + pair_score(p1, ze, zm) == e_best]
            hs = [zh for zh, vh in zip(feasible[high], scores[high]) if vh + pair_score(p2, zm, zh) == h_best]
            best_combos.extend({elem: ze, mid: zm, high: zh} for ze in es for zh in hs)

    winner = min(best_combos, key=encoding)
    zone = {(u, lvl): winner[lvl][i] for i, u in enumerate(units) for lvl in levels}
    return Assignment(zone)


def _feasible_zonings(district: District, level: SchoolLevel, params: OptimizerParams) -> list[tuple[str, ...]]:
    """All zone maps for one level passing home-unit, cap, and contiguity
    constraints, enumerated in lexicographic order."""
    units = district.unit_ids()
    schools = district.schools_at(level)
    school_ids = [s.id for s in schools]
    home_of = {s.home_unit: s.id for s in schools}
    cap_limit = {s.id: params.hard_max_utilization * s.capacity + CAP_EPS for s in schools}
    student_total = {u: district.students(u, level).total for u in units}
    neighbor_map = {u: district.units[u].neighbors for u in units}

    results: list[tuple[str, ...]] = []
    zoning: list[str] = []
    loads = {sid: 0 for sid in school_ids}

    def recurse(i: int) -> None:
        if i == len(units):
            candidate = tuple(zoning)
            if params.allow_noncontiguous or _all_zones_connected(candidate, units, schools, neighbor_map):
                results.append(candidate)
            return
        u = units[i]
        forced = home_of.get(u)
        options = [forced] if forced else school_ids
        for sid in options:
            if loads[sid] + student_total[u] > cap_limit[sid]:
                continue
            loads[sid] += student_total[u]
            zoning.append(sid)
            recurse(i + 1)
            zoning.pop()
            loads[sid] -= student_total[u]

    recurse(0)
    return results


def _all_zones_connected(zoning, units, schools, neighbor_map) -> bool:
    zone_of = dict(zip(units, zoning))
    for school in schools:
        members = {u for u, sid in zone_of.items() if sid == school.id}
        if school.home_unit not in members:
            return False
        seen = {school.home_unit}
        stack = [school.home_unit]
        while stack:
            x = stack.pop()
            for v in neighbor_map[x]:
                if v in members and v not in seen:
                    seen.add(v)
                    stack.append(v)
        if len(seen) != len(members):
            return False
    return True
