"""Scenario reports: district-wide metrics, personalized impacts, and the
dynamic text blocks rendered around them.

The report dictionaries are the API contract shared by the HTTP service,
the CLI reporter, and the browser UI: every number a client displays comes
from a field here. Text blocks mark emphasized value spans with **bold**
markers; the exact sentence shapes are pinned by golden-file tests.
"""

from __future__ import annotations

import json

from . import metrics
from .model import (
    LEVEL_PAIRS,
    Assignment,
    District,
    PILLAR_ORDER,
    Scenario,
    SchoolLevel,
)
from .optimizer import composite_objective
from .weights import display_weights

TARGET_PERCENT = 100.0 / 3.0


def report_json_bytes(payload: dict) -> bytes:
    """Canonical JSON encoding; identical payloads serialize identically."""
    return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode()


def _pct(value: float) -> str:
    return str(int(round(value)))


def _minutes(value: float) -> str:
    return f"{value:.1f}"


def _share_pct(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.1f}%"


def _article(level: SchoolLevel) -> str:
    return "an" if level is SchoolLevel.ELEMENTARY else "a"


def _ses_school_rows(assignment: Assignment, district: District) -> list[dict]:
    rows = []
    for share in metrics.ses_shares(assignment, district):
        rows.append(
            {
                "school_id": share.school_id,
                "name": district.schools[share.school_id].name,
                "enrollment": share.enrollment,
                "low_percent": None if share.low is None else 100.0 * share.low,
                "mid_percent": None if share.mid is None else 100.0 * share.mid,
                "high_percent": None if share.high is None else 100.0 * share.high,
                "deviation": share.deviation,
            }
        )
    return rows


def _utilization_rows(assignment: Assignment, district: District) -> list[dict]:
    floor = district.config.under_enrollment_floor
    rows = []
    for stat in metrics.utilization_stats(assignment, district):
        rows.append(
            {
                "school_id": stat.school_id,
                "name": stat.name,
                "level": stat.level.key,
                "enrollment": stat.enrollment,
                "capacity": stat.capacity,
                "utilization_percent": stat.utilization_percent,
                "within_target": stat.within_target,
                "at_hard_max": stat.at_hard_max,
                "under_enrolled": stat.under_enrolled(floor),
            }
        )
    return rows


def _flow_rows(assignment: Assignment, district: District) -> dict[str, list[dict]]:
    out: dict[str, list[dict]] = {}
    for pair in LEVEL_PAIRS:
        if pair[0] not in district.levels or pair[1] not in district.levels:
            continue
        graph = metrics.feeder_flows(assignment, district, pair)
        out[f"{pair[0].key}_to_{pair[1].key}"] = [
            {
                "from": f.from_school,
                "from_name": district.schools[f.from_school].name,
                "to": f.to_school,
                "to_name": district.schools[f.to_school].name,
                "students": f.students,
            }
            for f in graph.flows
        ]
    return out


def _split_rows(assignment: Assignment, district: District) -> dict[str, dict]:
    out = {}
    for key, stats in metrics.split_feeder_stats(assignment, district).items():
        out[key] = {
            "split": {"count": stats.split_count, "percent": stats.split_percent},
            "intact": {"count": stats.intact_count, "percent": stats.intact_percent},
            "total": stats.total,
        }
    return out


def build_scenario_report(scenario: Scenario, district: District) -> dict:
    """The district-wide ScenarioReport document."""
    proposed, baseline = scenario.proposed, scenario.baseline
    breakdown = composite_objective(proposed, baseline, district, scenario.weights)
    base_breakdown = composite_objective(baseline, baseline, district, scenario.weights)
    impact = metrics.travel_impact_stats(proposed, baseline, district)
    util_current = _utilization_rows(baseline, district)
    util_proposed = _utilization_rows(proposed, district)
    return {
        "scenario_id": scenario.id,
        "seed": scenario.seed,
        "ranking": [p.key for p in scenario.ranking.order],
        "weights": scenario.weights.as_key_map(),
        "weights_display": {p.key: w for p, w in display_weights(scenario.weights).items()},
        "objective": {
            "total": breakdown.total,
            "baseline_total": base_breakdown.total,
            "pillars": breakdown.as_json()["pillars"],
        },
        "ses": {
            "level": district.config.focal_level.key,
            "target_percent": TARGET_PERCENT,
            "schools": {
                "current": _ses_school_rows(baseline, district),
                "proposed": _ses_school_rows(proposed, district),
            },
            "cost": {
                "current": metrics.ses_cost(baseline, district),
                "proposed": metrics.ses_cost(proposed, district),
            },
        },
        "travel": {
            "ratio": metrics.travel_cost(proposed, baseline, district),
            "increased": {"count": impact.increased_count, "percent": impact.increased_percent},
            "decreased": {"count": impact.decreased_count, "percent": impact.decreased_percent},
            "total_students": impact.total_students,
        },
        "feeders": {
            "flows": {
                "current": _flow_rows(baseline, district),
                "proposed": _flow_rows(proposed, district),
            },
            "split": {
                "current": _split_rows(baseline, district),
                "proposed": _split_rows(proposed, district),
            },
            "cost": {
                "current": metrics.feeder_cost(baseline, district),
                "proposed": metrics.feeder_cost(proposed, district),
            },
        },
        "utilization": {
            "schools": {"current": util_current, "proposed": util_proposed},
            "within_target": {
                "current": sum(1 for r in util_current if r["within_target"]),
                "proposed": sum(1 for r in util_proposed if r["within_target"]),
                "total_schools": len(util_current),
            },
        },
    }


def build_personal_impact(scenario: Scenario, district: District, unit_id: str) -> dict:
    """Impacts specific to one household's geo-unit."""
    if unit_id not in district.units:
        raise KeyError(f"unknown unit {unit_id!r}")
    focal = district.config.focal_level
    schools = {}
    travel = {}
    for level in district.levels:
        cur = scenario.baseline.school_of(unit_id, level)
        new = scenario.proposed.school_of(unit_id, level)
        schools[level.key] = {
            "current": {"id": cur, "name": district.schools[cur].name},
            "proposed": {"id": new, "name": district.schools[new].name},
        }
        travel[level.key] = {
            "current": district.travel.get(unit_id, cur),
            "proposed": district.travel.get(unit_id, new),
        }

    cur_focal = scenario.baseline.school_of(unit_id, focal)
    new_focal = scenario.proposed.school_of(unit_id, focal)
    cur_share = {s.school_id: s for s in metrics.ses_shares(scenario.baseline, district)}[cur_focal]
    new_share = {s.school_id: s for s in metrics.ses_shares(scenario.proposed, district)}[new_focal]
    # "More diverse" means strictly closer to the even-thirds target; ties
    # (including an unchanged zone) read as "less".
    more = (
        cur_share.deviation is not None
        and new_share.deviation is not None
        and new_share.deviation < cur_share.deviation
    )
    rows = []
    for tier, cur_val, new_val in (
        ("Low SES", cur_share.low, new_share.low),
        ("Mid SES", cur_share.mid, new_share.mid),
        ("High SES", cur_share.high, new_share.high),
    ):
        rows.append(
            {
                "tier": tier,
                "current_percent": None if cur_val is None else 100.0 * cur_val,
                "proposed_percent": None if new_val is None else 100.0 * new_val,
                "target_percent": TARGET_PERCENT,
            }
        )

    chain_levels = [lvl for lvl in district.levels]
    util_cur = {r["school_id"]: r for r in _utilization_rows(scenario.baseline, district)}
    util_new = {r["school_id"]: r for r in _utilization_rows(scenario.proposed, district)}
    return {
        "unit_id": unit_id,
        "focal_level": focal.key,
        "schools": schools,
        "travel_minutes": travel,
        "ses_table": {
            "current_school": district.schools[cur_focal].name,
            "proposed_school": district.schools[new_focal].name,
            "rows": rows,
        },
        "feeder_chain": {
            "current": [district.schools[scenario.baseline.school_of(unit_id, lvl)].name for lvl in chain_levels],
            "proposed": [district.schools[scenario.proposed.school_of(unit_id, lvl)].name for lvl in chain_levels],
        },
        "utilization": {"current": util_cur[cur_focal], "proposed": util_new[new_focal]},
        "diversity_word": "more" if more else "less",
    }


# ---------------------------------------------------------------------------
# Dynamic text


def _comparison_word(proposed_count: int, current_count: int) -> str:
    if proposed_count > current_count:
        return "higher than"
    if proposed_count < current_count:
        return "lower than"
    return "equal to"


def _feeder_sentence(kind: str, proposed: dict, current: dict) -> str:
    word = _comparison_word(proposed["count"], current["count"])
    return (
        f"Overall, **{proposed['count']} ({_pct(proposed['percent'])}%)** students would experience "
        f"{kind} feeder patterns, which is **{word}** the **{current['count']} ({_pct(current['percent'])}%)** "
        f"students who experience {kind} feeder patterns with the current boundaries."
    )


def _utilization_sentence(row: dict, tense: str) -> str:
    state = "within" if row["within_target"] else "not within"
    if tense == "current":
        return (
            f"Your currently zoned school (**{row['name']}**) is **{state}** target enrollment, "
            f"since **{row['enrollment']}** students are enrolled (**{_pct(row['utilization_percent'])}%** utilization) "
            f"and **{row['capacity']}** students is 100% utilization."
        )
    return (
        f"Your newly zoned school (**{row['name']}**) would be **{state}** target enrollment, "
        f"since **{row['enrollment']}** students would be enrolled (**{_pct(row['utilization_percent'])}%** utilization) "
        f"and **{row['capacity']}** students is 100% utilization."
    )


def render_dynamic_text(report: dict, personal: dict | None = None) -> dict:
    """Instantiate the per-pillar text blocks from report fields alone."""
    travel = report["travel"]
    split = report["feeders"]["split"]
    within = report["utilization"]["within_target"]
    text: dict[str, dict[str, str]] = {
        "ses": {},
        "distance": {
            "district": (
                f"Overall, **{travel['increased']['count']} ({_pct(travel['increased']['percent'])}%)** students "
                f"would experience an increase in travel times, and **{travel['decreased']['count']} "
                f"({_pct(travel['decreased']['percent'])}%)** students would experience a decrease in travel times."
            )
        },
        "feeder": {
            "district_split": _feeder_sentence("split", split["proposed"]["combined"]["split"], split["current"]["combined"]["split"]),
            "district_intact": _feeder_sentence("intact", split["proposed"]["combined"]["intact"], split["current"]["combined"]["intact"]),
        },
        "utilization": {
            "district": (
                f"Currently, **{within['current']}** of **{within['total_schools']}** schools are within target "
                f"enrollment; with the proposed boundaries, **{within['proposed']}** of **{within['total_schools']}** "
                f"schools would be within target enrollment."
            )
        },
    }
    if personal is not None:
        focal = SchoolLevel.from_key(personal["focal_level"])
        text["ses"]["personal"] = (
            f"Your household would be zoned into {_article(focal)} {focal.key} school with "
            f"**{personal['diversity_word']}** socioeconomic diversity compared to the current zoning."
        )
        minutes = personal["travel_minutes"][focal.key]
        text["distance"]["personal"] = (
            f"Your current travel time is **{_minutes(minutes['current'])} minutes**, and your new estimated "
            f"travel time would be **{_minutes(minutes['proposed'])} minutes**."
        )
        chain_cur = " → ".join(personal["feeder_chain"]["current"])
        chain_new = " → ".join(personal["feeder_chain"]["proposed"])
        text["feeder"]["personal"] = (
            f"Your current feeder pattern is **{chain_cur}**, and your new feeder pattern would be **{chain_new}**."
        )
        text["utilization"]["personal_current"] = _utilization_sentence(personal["utilization"]["current"], "current")
        text["utilization"]["personal_proposed"] = _utilization_sentence(personal["utilization"]["proposed"], "proposed")
    return text


_CARD_ORDER = (
    ("ses", "personal", "ses-personal"),
    ("distance", "personal", "distance-personal"),
    ("distance", "district", "distance-district"),
    ("feeder", "personal", "feeder-personal"),
    ("feeder", "district_split", "feeder-district-split"),
    ("feeder", "district_intact", "feeder-district-intact"),
    ("utilization", "personal_current", "utilization-personal-current"),
    ("utilization", "personal_proposed", "utilization-personal-proposed"),
    ("utilization", "district", "utilization-district"),
)


def stat_cards(text: dict) -> list[dict]:
    """Clickable stat cards; ids are what feedback entries may attach."""
    cards = []
    for pillar_key, block_key, card_id in _CARD_ORDER:
        sentence = text.get(pillar_key, {}).get(block_key)
        if sentence:
            cards.append({"id": card_id, "pillar": pillar_key, "text": sentence})
    return cards


def full_report(scenario: Scenario, district: District, unit_id: str | None = None) -> tuple[dict, dict | None, dict]:
    """Assemble (report, personal, text) exactly as both the CLI and the
    service serve them; report embeds the stat cards."""
    report = build_scenario_report(scenario, district)
    personal = build_personal_impact(scenario, district, unit_id) if unit_id else None
    text = render_dynamic_text(report, personal)
    report["stats"] = stat_cards(text)
    return report, personal, text


# ---------------------------------------------------------------------------
# Scenario files


def scenario_payload(scenario: Scenario, district: District, params=None) -> dict:
    breakdown = composite_objective(scenario.proposed, scenario.baseline, district, scenario.weights)
    payload = {
        "id": scenario.id,
        "seed": scenario.seed,
        "ranking": [p.key for p in scenario.ranking.order],
        "weights": scenario.weights.as_key_map(),
        "objective_value": scenario.objective_value,
        "objective": breakdown.as_json(),
        "zones": {
            "baseline": scenario.baseline.to_level_maps(),
            "proposed": scenario.proposed.to_level_maps(),
        },
    }
    if params is not None:
        payload["params"] = {
            "seed": params.seed,
            "max_iterations": params.max_iterations,
            "initial_temperature": params.initial_temperature,
            "cooling_rate": params.cooling_rate,
            "restarts": params.restarts,
            "hard_max_utilization": params.hard_max_utilization,
            "allow_noncontiguous": params.allow_noncontiguous,
        }
    return payload


def write_scenario(path, scenario: Scenario, district: District, params=None) -> None:
    from pathlib import Path

    Path(path).write_bytes(report_json_bytes(scenario_payload(scenario, district, params)))


def read_scenario(path, district: District) -> Scenario:
    """Load a scenario file and verify it against this district: the stored
    objective must match a from-scratch recompute."""
    from pathlib import Path

    from .model import Pillar, PillarRanking, PillarWeights

    doc = json.loads(Path(path).read_text())
    ranking = PillarRanking.from_keys(doc["ranking"])
    weights = PillarWeights({Pillar.from_key(k): v for k, v in doc["weights"].items()})
    baseline = Assignment.from_level_maps(doc["zones"]["baseline"])
    proposed = Assignment.from_level_maps(doc["zones"]["proposed"])
    scenario = Scenario(
        id=doc["id"],
        ranking=ranking,
        weights=weights,
        baseline=baseline,
        proposed=proposed,
        seed=doc["seed"],
        objective_value=doc["objective_value"],
    )
    recomputed = composite_objective(proposed, baseline, district, weights).total
    if abs(recomputed - scenario.objective_value) > 1e-9:
        raise ValueError(
            f"scenario objective {scenario.objective_value!r} does not match this district "
            f"(recomputed {recomputed!r}); wrong bundle?"
        )
    return scenario


# ---------------------------------------------------------------------------
# Geometry and plain-text rendering


def zone_geojson(assignment: Assignment, district: District, label: str) -> dict:
    """Dissolved zone polygons per school as a feature collection."""
    from shapely.geometry import Polygon, mapping
    from shapely.ops import unary_union

    features = []
    for level in district.levels:
        for school in district.schools_at(level):
            member_polys = [
                Polygon(unit.polygon[0], unit.polygon[1:])
                for unit in district.units.values()
                if assignment.school_of(unit.id, level) == school.id
            ]
            if not member_polys:
                continue
            shape = unary_union(member_polys)
            features.append(
                {
                    "type": "Feature",
                    "geometry": mapping(shape),
                    "properties": {
                        "school_id": school.id,
                        "name": school.name,
                        "level": level.key,
                        "boundary": label,
                    },
                }
            )
    return {"type": "FeatureCollection", "features": features}


def _strip_bold(s: str) -> str:
    return s.replace("**", "")


def render_text_report(report: dict, personal: dict | None, text: dict) -> str:
    """Human-readable report for the CLI."""
    lines: list[str] = []
    lines.append(f"Scenario {report['scenario_id']} (seed {report['seed']})")
    lines.append("Ranking: " + " > ".join(report["ranking"]))
    lines.append(
        "Weights: " + ", ".join(f"{k}={report['weights_display'][k]:.2f}" for k in report["ranking"])
    )
    obj = report["objective"]
    lines.append(f"Objective: {obj['total']:.6f} (baseline {obj['baseline_total']:.6f})")
    lines.append("")

    from .model import Pillar, PILLAR_DESCRIPTIONS

    blocks = {
        Pillar.SES_DIVERSITY: ("ses", ["personal"]),
        Pillar.DISTANCE: ("distance", ["personal", "district"]),
        Pillar.FEEDER_PATTERNS: ("feeder", ["personal", "district_split", "district_intact"]),
        Pillar.UTILIZATION: ("utilization", ["personal_current", "personal_proposed", "district"]),
    }
    for pillar in PILLAR_ORDER:
        key, block_keys = blocks[pillar]
        lines.append(f"== {pillar.display_name} ==")
        lines.append(PILLAR_DESCRIPTIONS[pillar])
        for bk in block_keys:
            sentence = text.get(key, {}).get(bk)
            if sentence:
                lines.append(_strip_bold(sentence))
        if pillar is Pillar.SES_DIVERSITY and personal is not None:
            table = personal["ses_table"]
            lines.append(f"{'SES Level':<10} {'Current @ ' + table['current_school']:<28} "
                         f"{'New @ ' + table['proposed_school']:<28} Target")
            for row in table["rows"]:
                lines.append(
                    f"{row['tier']:<10} {_share_pct(row['current_percent']):<28} "
                    f"{_share_pct(row['proposed_percent']):<28} {_share_pct(row['target_percent'])}"
                )
        if pillar is Pillar.UTILIZATION:
            lines.append(f"{'School':<26} {'Level':<12} {'Current':>10} {'Proposed':>10}")
            cur = {r["school_id"]: r for r in report["utilization"]["schools"]["current"]}
            for row in report["utilization"]["schools"]["proposed"]:
                c = cur[row["school_id"]]
                lines.append(
                    f"{row['name']:<26} {row['level']:<12} "
                    f"{_pct(c['utilization_percent']) + '%':>10} {_pct(row['utilization_percent']) + '%':>10}"
                )
        lines.append("")
    return "\n".join(lines)
