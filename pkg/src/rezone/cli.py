"""Operator command line: validate bundles, generate synthetic districts,
run optimizations, render reports (text, JSON, CSV, and figures), and serve
the HTTP API.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .ingest import DistrictBundle, InfeasibleParams, ParseError, generate_synthetic, load_bundle
from .model import DistrictError, PillarRanking, ValidationFailure
from .optimizer import OptimizerParams, optimize
from .report import (
    full_report,
    read_scenario,
    render_text_report,
    report_json_bytes,
    scenario_payload,
    write_scenario,
    zone_geojson,
)
from .weights import softmax_weights

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_USAGE = 2


def _data_dir(path: str) -> Path:
    d = Path(path)
    if not d.is_dir():
        print(f"error: data directory {path!r} does not exist", file=sys.stderr)
        print("usage: rezone <command> --data DIR ...", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)
    return d


def cmd_validate(args: argparse.Namespace) -> int:
    directory = _data_dir(args.data)
    try:
        load_bundle(DistrictBundle.from_dir(directory))
    except ValidationFailure as failure:
        for violation in failure.violations:
            print(violation)
        return EXIT_VIOLATIONS
    except ParseError as e:
        print(e)
        return EXIT_VIOLATIONS
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    schools = tuple(int(x) for x in args.schools.split(",")) if "," in args.schools else int(args.schools)
    mix = tuple(float(x) for x in args.mix.split(","))
    try:
        district = generate_synthetic(
            args.out, unit_count=args.units, schools_per_level=schools, ses_mix=mix, seed=args.seed
        )
    except InfeasibleParams as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VIOLATIONS
    print(
        f"wrote bundle to {args.out}: {len(district.units)} units, "
        f"{len(district.schools)} schools, {district.total_students()} students"
    )
    return EXIT_OK


def cmd_optimize(args: argparse.Namespace) -> int:
    directory = _data_dir(args.data)
    district = load_bundle(directory)
    try:
        ranking = PillarRanking.from_keys(args.ranking)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    params = OptimizerParams.from_config(district.config, seed=args.seed)
    weights = softmax_weights(ranking)
    scenario = optimize(district, district.baseline, weights, params, ranking=ranking)
    write_scenario(args.out, scenario, district, params)

    from .optimizer import composite_objective

    breakdown = composite_objective(scenario.proposed, scenario.baseline, district, weights)
    base = composite_objective(scenario.baseline, scenario.baseline, district, weights)
    if args.json:
        print(json.dumps(scenario_payload(scenario, district, params), sort_keys=True, indent=2))
    else:
        print(f"scenario {scenario.id} (seed {scenario.seed}) written to {args.out}")
        print(f"{'pillar':<14} {'weight':>8} {'baseline':>10} {'proposed':>10} {'weighted':>10}")
        for pillar in ranking.order:
            print(
                f"{pillar.key:<14} {weights.of(pillar):>8.4f} {base.raw[pillar]:>10.4f} "
                f"{breakdown.raw[pillar]:>10.4f} {breakdown.weighted[pillar]:>10.4f}"
            )
        print(f"{'total':<14} {'':>8} {base.total:>10.4f} {breakdown.total:>10.4f}")
    return EXIT_OK


def _write_csvs(report: dict, out: Path) -> None:
    with open(out / "utilization.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["boundary", "school_id", "name", "level", "enrollment", "capacity", "utilization_percent", "within_target"])
        for boundary in ("current", "proposed"):
            for row in report["utilization"]["schools"][boundary]:
                writer.writerow(
                    [boundary, row["school_id"], row["name"], row["level"], row["enrollment"],
                     row["capacity"], f"{row['utilization_percent']:.2f}", row["within_target"]]
                )
    with open(out / "ses_shares.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["boundary", "school_id", "name", "enrollment", "low_percent", "mid_percent", "high_percent"])
        for boundary in ("current", "proposed"):
            for row in report["ses"]["schools"][boundary]:
                fmt = lambda v: "" if v is None else f"{v:.2f}"
                writer.writerow(
                    [boundary, row["school_id"], row["name"], row["enrollment"],
                     fmt(row["low_percent"]), fmt(row["mid_percent"]), fmt(row["high_percent"])]
                )
    with open(out / "feeder_flows.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["boundary", "pair", "from", "to", "students"])
        for boundary in ("current", "proposed"):
            for pair_key, flows in report["feeders"]["flows"][boundary].items():
                for f in flows:
                    writer.writerow([boundary, pair_key, f["from"], f["to"], f["students"]])
    with open(out / "stats.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "pillar", "text"])
        for card in report["stats"]:
            writer.writerow([card["id"], card["pillar"], card["text"].replace("**", "")])


def cmd_report(args: argparse.Namespace) -> int:
    directory = _data_dir(args.data)
    district = load_bundle(directory)
    scenario = read_scenario(args.scenario, district)

    unit_id = None
    if args.address:
        try:
            lon, lat = (float(x) for x in args.address.split(","))
        except ValueError:
            print("error: --address expects LON,LAT", file=sys.stderr)
            return EXIT_USAGE
        from .service import AddressOutsideDistrict, resolve_unit

        try:
            unit_id = resolve_unit(district, lon, lat)
        except AddressOutsideDistrict:
            print(f"error: address ({lon}, {lat}) is outside the district", file=sys.stderr)
            return EXIT_VIOLATIONS

    report, personal, text = full_report(scenario, district, unit_id)
    if args.json:
        print(json.dumps({"report": report, "personal": personal, "text": text}, sort_keys=True, indent=2))
    else:
        print(render_text_report(report, personal, text))

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_bytes(report_json_bytes(report))
        if personal is not None:
            (out / "personal.json").write_bytes(report_json_bytes(personal))
        (out / "geometry.json").write_bytes(
            report_json_bytes(
                {
                    "current": zone_geojson(scenario.baseline, district, "current"),
                    "proposed": zone_geojson(scenario.proposed, district, "proposed"),
                }
            )
        )
        _write_csvs(report, out)
        from .figures import render_figures

        for p in render_figures(report, personal, out):
            print(f"wrote {p}", file=sys.stderr)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    directory = _data_dir(args.data)
    from .service import create_app

    app = create_app(
        data_dir=directory,
        seed=args.seed,
        perspectives_path=args.perspectives,
        feedback_path=args.feedback,
        addresses_path=args.addresses,
        precompute=args.precompute,
    )
    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rezone", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a district bundle")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("generate", help="generate a synthetic district bundle")
    p.add_argument("--units", type=int, required=True)
    p.add_argument("--schools", default="2", help="schools per level: N or E,M,H")
    p.add_argument("--mix", default="0.3333,0.3334,0.3333", help="district SES mix low,mid,high")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("optimize", help="optimize boundaries for a pillar ranking")
    p.add_argument("--data", required=True)
    p.add_argument("--ranking", required=True, help="most-to-least important, e.g. ses,distance,feeder,utilization")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("report", help="render a scenario report")
    p.add_argument("scenario", help="scenario JSON written by optimize")
    p.add_argument("--data", required=True)
    p.add_argument("--address", help="LON,LAT of a household for personalized impacts")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", help="directory for report.json, CSVs, and figures")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--data", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perspectives", help="perspective pool JSON (defaults to the built-in pool)")
    p.add_argument("--feedback", help="feedback log path (defaults to DATA/feedback.ndjson)")
    p.add_argument("--addresses", help="address lookup CSV: address,longitude,latitude")
    p.add_argument("--precompute", action="store_true", help="precompute scenarios for all 24 rankings")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DistrictError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VIOLATIONS


if __name__ == "__main__":
    sys.exit(main())
