"""Command-line interface: run scenarios, analyze archives, detect drift.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .analytics.drift import DesiredState, detect_drift
from .analytics.legs import LegDef, compute_legs
from .analytics.stats import export_boxplot_csv, export_stats_json
from .envelope import parse_and_validate
from .errors import ConfigInvalid, GovSimError
from .runner import Runner
from .scenario import load_config, with_seed
from .storage import load_payloads_from_dir

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="govsim",
        description="Simulated multi-cloud telemetry governance pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario end to end")
    run.add_argument("--scenario", required=True, help="scenario file (YAML)")
    run.add_argument("--out", help="directory for report, stores, dead letters")
    run.add_argument("--seed", type=int, help="override the scenario master seed")
    run.add_argument("--wall-clock", action="store_true", help="pace against real time")
    run.add_argument(
        "--inline-analytics",
        action="store_true",
        help="evaluate leg SLO rules and correlate alerts during the run",
    )

    analyze = sub.add_parser("analyze", help="leg-delay analytics over an archive directory")
    analyze.add_argument("--input", required=True, help="store directory from a run --out")
    analyze.add_argument("--legs", required=True, help="leg definitions file (YAML)")
    analyze.add_argument("--stats", help="write summary statistics JSON here")
    analyze.add_argument("--boxplot", help="write box-plot CSV here")

    drift = sub.add_parser("drift", help="compare desired state against an observed snapshot")
    drift.add_argument("--scenario", required=True, help="scenario file carrying desired_state")
    drift.add_argument("--observed", required=True, help="observed snapshot JSON")
    return parser


def _load_leg_sets(path: str) -> dict[str, tuple[LegDef, ...]]:
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ConfigInvalid(["legs file must map CSP -> list of {name, start, end}"])
    out: dict[str, tuple[LegDef, ...]] = {}
    for csp, defs in doc.items():
        try:
            out[str(csp)] = tuple(
                LegDef(name=str(d["name"]), end_stage=str(d["end"]), start_stage=str(d["start"]))
                for d in defs or []
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid([f"legs.{csp}: {exc}"]) from exc
    return out


def _cmd_run(args) -> int:
    cfg = load_config(args.scenario)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    if args.inline_analytics:
        from dataclasses import replace

        cfg = replace(cfg, analytics=replace(cfg.analytics, inline=True))
    runner = Runner(cfg, wall=args.wall_clock)
    report = runner.run()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_bytes(report.to_json())
        runner.save_outputs(out)
    print(f"scenario {report.scenario!r} quiesced at {report.finished_at}")
    print(
        f"archived {report.pipeline['archived']} object(s): "
        f"{report.store_counts['mutable']} mutable, {report.store_counts['immutable']} immutable"
    )
    print(
        f"dead letters: {report.pipeline['dead_letters']}, "
        f"filtered out: {report.pipeline['filtered_out']}, "
        f"failover events: {len(report.failover_events)}"
    )
    if args.out:
        print(f"outputs written to {args.out}")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    if not args.stats and not args.boxplot:
        raise ConfigInvalid(["analyze needs --stats and/or --boxplot"])
    leg_sets = _load_leg_sets(args.legs)
    payloads = load_payloads_from_dir(Path(args.input))
    if not payloads:
        raise ConfigInvalid([f"no archived objects under {args.input!r}"])
    records = []
    for _kind, _key, payload in payloads:
        env = parse_and_validate(payload)
        records.append(compute_legs(leg_sets.get(env.csp, ()), env))
    if args.stats:
        Path(args.stats).write_bytes(export_stats_json(records))
        print(f"wrote {args.stats}")
    if args.boxplot:
        Path(args.boxplot).write_bytes(export_boxplot_csv(records))
        print(f"wrote {args.boxplot}")
    return EXIT_OK


def _cmd_drift(args) -> int:
    cfg = load_config(args.scenario)
    observed_doc = json.loads(Path(args.observed).read_text(encoding="utf-8"))
    report = detect_drift(cfg.desired_state, DesiredState.from_dict(observed_doc))
    if report.empty:
        print("no drift: observed state matches the desired state")
    else:
        print(f"drift detected in {len(report.items)} field(s):")
        for item in report.items:
            print(f"  {item.field}: desired={item.desired!r} observed={item.observed!r}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "analyze":
            return _cmd_analyze(args)
        return _cmd_drift(args)
    except (ConfigInvalid, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except GovSimError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
