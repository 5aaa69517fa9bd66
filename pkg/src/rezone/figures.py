"""Report figures rendered straight from report payload fields: the SES
dot plot, the feeder flow (Sankey-style) diagram, and the utilization radar.
Written as PNG files next to the CLI's delimited output.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

GOAL_COLOR = "#555555"
DOT_COLOR = "#222222"
USER_COLOR = "#e07b00"
SPLIT_COLOR = "#efe3a1"
FLOW_COLOR = "#b9b9b9"
BAND_130 = "#a8cde3"
BAND_100 = "#2a6f97"
ACTUAL_COLOR = "#e8b931"

_TIERS = ("low_percent", "mid_percent", "high_percent")
_TIER_LABELS = ("Low SES", "Mid SES", "High SES")


def _user_school_ids(personal: dict | None) -> set[str]:
    if not personal:
        return set()
    ids = set()
    for per_level in personal["schools"].values():
        ids.add(per_level["current"]["id"])
        ids.add(per_level["proposed"]["id"])
    return ids


def ses_dot_plot(report: dict, personal: dict | None, path: Path) -> None:
    """Share of each SES tier per school on a 0-100% line with the goal
    marked; the user's school is the orange triangle."""
    boundaries = ("current", "proposed")
    user_ids = _user_school_ids(personal)
    fig, axes = plt.subplots(len(_TIERS), len(boundaries), figsize=(9, 5.5), sharex=True)
    target = report["ses"]["target_percent"]
    for col, boundary in enumerate(boundaries):
        rows = report["ses"]["schools"][boundary]
        for row_idx, (tier, label) in enumerate(zip(_TIERS, _TIER_LABELS)):
            ax = axes[row_idx][col]
            ax.axvline(target, color=GOAL_COLOR, linestyle="--", linewidth=1, label="Our goal")
            for school in rows:
                value = school[tier]
                if value is None:
                    continue
                is_user = school["school_id"] in user_ids
                ax.plot(
                    value,
                    0,
                    marker="^" if is_user else "o",
                    color=USER_COLOR if is_user else DOT_COLOR,
                    markersize=9 if is_user else 7,
                    clip_on=False,
                )
                ax.annotate(
                    school["name"],
                    (value, 0),
                    textcoords="offset points",
                    xytext=(0, 8),
                    ha="center",
                    fontsize=7,
                    rotation=20,
                )
            ax.set_xlim(0, 100)
            ax.set_ylim(-0.5, 1.0)
            ax.get_yaxis().set_visible(False)
            for side in ("left", "right", "top"):
                ax.spines[side].set_visible(False)
            if col == 0:
                ax.set_ylabel(label, rotation=0, ha="right", va="center")
                ax.get_yaxis().set_visible(True)
                ax.set_yticks([])
            if row_idx == 0:
                ax.set_title(boundary.capitalize())
            if row_idx == len(_TIERS) - 1:
                ax.set_xlabel("Percentage of students per school")
    fig.suptitle(f"SES distribution at {report['ses']['level']} schools (goal line at {target:.0f}%)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _node_layout(levels: list[list[dict]]) -> dict[str, tuple[float, float, float]]:
    """x, y-bottom, height per school node, stacked per level column."""
    layout = {}
    for col, schools in enumerate(levels):
        total = sum(s["enrollment"] for s in schools) or 1
        gap = 0.06
        y = 0.0
        for s in schools:
            h = 0.9 * s["enrollment"] / total
            layout[s["school_id"]] = (float(col), y, h)
            y += h + gap
    return layout


def feeder_sankey(report: dict, personal: dict | None, path: Path) -> None:
    """Three-column flow diagram; pale yellow bands mark split cohorts and
    orange marks the user's own path."""
    boundaries = ("current", "proposed")
    fig, axes = plt.subplots(1, len(boundaries), figsize=(11, 5))
    for ax, boundary in zip(axes, boundaries):
        flows = report["feeders"]["flows"][boundary]
        util = {r["school_id"]: r for r in report["utilization"]["schools"][boundary]}
        level_cols: dict[str, list[dict]] = {}
        for pair_key, pair_flows in flows.items():
            lower, upper = pair_key.split("_to_")
            for f in pair_flows:
                level_cols.setdefault(lower, []).append(util[f["from"]])
                level_cols.setdefault(upper, []).append(util[f["to"]])
        ordered_levels = [lvl for lvl in ("elementary", "middle", "high") if lvl in level_cols]
        columns = []
        for lvl in ordered_levels:
            seen: dict[str, dict] = {}
            for row in level_cols[lvl]:
                seen.setdefault(row["school_id"], row)
            columns.append(sorted(seen.values(), key=lambda r: r["school_id"]))
        layout = _node_layout(columns)
        col_of = {lvl: i for i, lvl in enumerate(ordered_levels)}

        user_chain = set()
        if personal:
            chain_key = "current" if boundary == "current" else "proposed"
            for lvl_key, per_level in personal["schools"].items():
                user_chain.add(per_level[chain_key]["id"])

        split_sources = set()
        for pair_key, pair_flows in flows.items():
            sources: dict[str, int] = {}
            for f in pair_flows:
                sources[f["from"]] = sources.get(f["from"], 0) + 1
            split_sources |= {s for s, n in sources.items() if n >= 2}

        used_out: dict[str, float] = {}
        used_in: dict[str, float] = {}
        for pair_key, pair_flows in flows.items():
            for f in sorted(pair_flows, key=lambda f: (f["from"], f["to"])):
                x0, y0, h0 = layout[f["from"]]
                x1, y1, h1 = layout[f["to"]]
                total_out = sum(x["students"] for x in pair_flows if x["from"] == f["from"]) or 1
                total_in = sum(x["students"] for x in pair_flows if x["to"] == f["to"]) or 1
                w0 = h0 * f["students"] / total_out
                w1 = h1 * f["students"] / total_in
                o0 = used_out.get(f["from"], 0.0)
                o1 = used_in.get(f["to"], 0.0)
                used_out[f["from"]] = o0 + w0
                used_in[f["to"]] = o1 + w1
                xs = np.linspace(x0 + 0.08, x1 - 0.08, 40)
                t = (xs - xs[0]) / (xs[-1] - xs[0])
                ease = t * t * (3 - 2 * t)
                lower = (y0 + o0) * (1 - ease) + (y1 + o1) * ease
                upper = (y0 + o0 + w0) * (1 - ease) + (y1 + o1 + w1) * ease
                if f["from"] in user_chain and f["to"] in user_chain:
                    color = USER_COLOR
                elif f["from"] in split_sources:
                    color = SPLIT_COLOR
                else:
                    color = FLOW_COLOR
                ax.fill_between(xs, lower, upper, color=color, alpha=0.75, linewidth=0)
                mid = len(xs) // 2
                ax.annotate(
                    str(f["students"]),
                    (xs[mid], (lower[mid] + upper[mid]) / 2),
                    ha="center",
                    va="center",
                    fontsize=7,
                )
        for school_id, (x, y, h) in layout.items():
            is_user = school_id in user_chain
            ax.add_patch(plt.Rectangle((x - 0.08, y), 0.16, h, color=USER_COLOR if is_user else "#4a4a4a"))
            ax.annotate(util[school_id]["name"], (x, y + h + 0.015), ha="center", fontsize=7)
        ax.set_xlim(-0.3, len(ordered_levels) - 0.7)
        ax.set_ylim(-0.05, 1.15)
        ax.set_xticks(range(len(ordered_levels)))
        ax.set_xticklabels([lvl.capitalize() for lvl in ordered_levels])
        ax.set_yticks([])
        ax.set_title(boundary.capitalize())
        for side in ("left", "right", "top"):
            ax.spines[side].set_visible(False)
    fig.suptitle("Feeder patterns (band width = students moving up a level)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def utilization_radar(report: dict, personal: dict | None, path: Path) -> None:
    """Radar with the 130% and 100% reference polygons and the actual
    utilization per school for both boundary sets."""
    schools = report["utilization"]["schools"]["current"]
    names = [r["name"] for r in schools]
    n = len(names)
    angles = [2 * math.pi * i / n for i in range(n)]
    closed = angles + angles[:1]

    def values(boundary: str) -> list[float]:
        rows = {r["school_id"]: r for r in report["utilization"]["schools"][boundary]}
        vals = [rows[r["school_id"]]["utilization_percent"] for r in schools]
        return vals + vals[:1]

    fig, ax = plt.subplots(figsize=(6.5, 6.5), subplot_kw={"projection": "polar"})
    ax.fill(closed, [130] * (n + 1), color=BAND_130, alpha=0.5, label="130% utilization")
    ax.fill(closed, [100] * (n + 1), color=BAND_100, alpha=0.5, label="100% utilization")
    ax.plot(closed, values("current"), color=ACTUAL_COLOR, linestyle=":", linewidth=2, label="Current")
    ax.plot(closed, values("proposed"), color=ACTUAL_COLOR, linewidth=2, label="Proposed")
    ax.fill(closed, values("proposed"), color=ACTUAL_COLOR, alpha=0.25)
    ax.set_xticks(angles)
    ax.set_xticklabels(names, fontsize=8)
    top = max(140.0, max(values("current") + values("proposed")) + 10)
    ax.set_ylim(0, top)
    ax.set_title("School utilization (% of capacity)")
    ax.legend(loc="lower right", bbox_to_anchor=(1.15, -0.1), fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_figures(report: dict, personal: dict | None, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "ses_dot_plot.png", out / "feeder_sankey.png", out / "utilization_radar.png"]
    ses_dot_plot(report, personal, paths[0])
    feeder_sankey(report, personal, paths[1])
    utilization_radar(report, personal, paths[2])
    return paths
