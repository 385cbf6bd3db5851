"""Command-line harness: ingest, synth, run, evaluate, ensemble, report, sensitivity.

Global flags (before the subcommand) select the store, the config file, and
the seed. All dates are ISO-8601. Exit status is 0 on success, 1 on any
domain error (with a diagnostic on stderr), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .archive import ForecastArchive
from .dates import parse_date
from .ensemble import ForestHyper
from .harness import (
    DEFAULT_CONSTITUENTS,
    SUMMARY_FILENAME,
    HarnessConfig,
    configured_variants,
    evaluate,
    load_config,
    load_plan,
    run_ensemble,
    run_retrospective,
    sensitivity_day_of_week,
    sensitivity_smoothing,
    summarize_reports,
    write_evaluation,
    write_smoothing_table,
    write_weekday_table,
)
from .metrics import METRICS
from .store import Store, parse_truth_filename
from .synth import SCENARIOS, generate_synthetic

logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epibench",
        description="Retrospective epidemic-forecast benchmarking harness.",
    )
    parser.add_argument("--store", type=Path, help="store directory (versioned truth data)")
    parser.add_argument("--config", type=Path, help="TOML config (grids, population table)")
    parser.add_argument("--seed", type=int, default=0, help="seed for seeded subcommands")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest truth files into the store")
    p.add_argument("files", nargs="+", type=Path, help="<signal>_<YYYY-MM-DD>.csv files")

    p = sub.add_parser("synth", help="generate a synthetic versioned dataset")
    p.add_argument("--scenario", choices=SCENARIOS, default="stable")
    p.add_argument("--locations", type=int, default=10)
    p.add_argument("--days", type=int, default=120)
    p.add_argument("--start", type=parse_date, default=parse_date("2020-06-01"))
    p.add_argument("--out", type=Path, required=True, help="directory for truth files")

    p = sub.add_parser("run", help="run bundled methods over a plan's origins")
    p.add_argument("--plan", type=Path, required=True, help="TOML run plan")
    p.add_argument("--archive", type=Path, required=True, help="forecast archive directory")
    p.add_argument("--paranoid", action="store_true",
                   help="re-run each origin on a truncated store and compare bytes")

    p = sub.add_parser("evaluate", help="score archived forecasts against ground truth")
    p.add_argument("--archive", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="reports directory")
    p.add_argument("--metrics", default=",".join(METRICS),
                   help=f"comma list among {','.join(METRICS)}")
    p.add_argument("--nominal", type=float, default=0.95, help="coverage interval level")
    p.add_argument("--per-location", action="store_true")

    p = sub.add_parser("ensemble", help="train stacking forests and archive ensemble forecasts")
    p.add_argument("--archive", type=Path, required=True)
    p.add_argument("--origins", required=True, help="comma list of origin dates")
    p.add_argument("--horizons", default="1,2,3,4")
    p.add_argument("--constituents", default=",".join(DEFAULT_CONSTITUENTS))
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--models-dir", type=Path, help="where to save fitted forests")
    p.add_argument("--no-mean", action="store_true", help="skip the mean-ensemble baseline")

    p = sub.add_parser("report", help="summarize evaluation reports")
    p.add_argument("--reports", type=Path, required=True)
    p.add_argument("--out", type=Path, help=f"summary file (default <reports>/{SUMMARY_FILENAME})")

    p = sub.add_parser("sensitivity", help="smoothing-window or day-of-week analysis")
    mode = p.add_subparsers(dest="mode", required=True)

    ps = mode.add_parser("smoothing", help="paired MAE of the smooth-7/14 variants")
    ps.add_argument("--archive", type=Path, required=True)
    ps.add_argument("--origins", help="comma list; default: origins both variants share")
    ps.add_argument("--horizons", help="comma list; default: all archived")
    ps.add_argument("--out", type=Path, required=True)

    pd = mode.add_parser("day-of-week", help="per-weekday error distribution")
    pd.add_argument("--method", default="SIkJalpha_smooth14_un10_hyper7")
    pd.add_argument("--start", type=parse_date, required=True)
    pd.add_argument("--end", type=parse_date, required=True)
    pd.add_argument("--horizons", default="1")
    pd.add_argument("--out", type=Path, required=True)

    return parser


def _need_store(args) -> Store:
    if args.store is None:
        raise SystemExit("error: this command needs --store")
    return Store(args.store)


def _dates(text: str) -> list:
    return [parse_date(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _cmd_ingest(args, config: HarnessConfig) -> int:
    store = _need_store(args)
    total = 0
    for path in args.files:
        signal, version_date = parse_truth_filename(path.name)
        total += store.ingest_version(path.read_bytes(), signal, version_date)
        logger.info("ingested %s", path.name)
    print(f"ingested {len(args.files)} file(s), {total} series update(s)")
    return 0


def _cmd_synth(args, config: HarnessConfig) -> int:
    store = Store(args.store) if args.store else None
    world = generate_synthetic(
        args.out,
        seed=args.seed,
        n_locations=args.locations,
        days=args.days,
        scenario=args.scenario,
        start=args.start,
        store=store,
    )
    where = f" and store {args.store}" if store else ""
    print(
        f"generated scenario '{world.scenario}' ({world.days} days, "
        f"{len(world.locations)} locations) into {args.out}{where}"
    )
    return 0


def _cmd_run(args, config: HarnessConfig) -> int:
    store = _need_store(args)
    plan = load_plan(args.plan)
    archive = ForecastArchive(args.archive)
    written = run_retrospective(store, plan, archive, config, paranoid=args.paranoid)
    print(f"archived {len(written)} forecast file(s) under {args.archive}")
    return 0


def _cmd_evaluate(args, config: HarnessConfig) -> int:
    store = _need_store(args)
    archive = ForecastArchive(args.archive)
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    reports, leaderboards = evaluate(
        store, archive, metrics=metrics, nominal=args.nominal, per_location=args.per_location
    )
    written = write_evaluation(reports, leaderboards, args.out)
    print(f"wrote {len(written)} report file(s) under {args.out}")
    return 0


def _cmd_ensemble(args, config: HarnessConfig) -> int:
    store = _need_store(args)
    archive = ForecastArchive(args.archive)
    constituents = tuple(c.strip() for c in args.constituents.split(","))
    if len(constituents) != 3:
        raise SystemExit("error: --constituents needs exactly 3 method ids")
    written = run_ensemble(
        store,
        archive,
        origins=_dates(args.origins),
        horizons=_ints(args.horizons),
        constituents=constituents,
        hyper=ForestHyper(tree_count=args.trees),
        seed=args.seed,
        models_dir=args.models_dir,
        include_mean=not args.no_mean,
    )
    print(f"archived {len(written)} ensemble forecast file(s)")
    return 0


def _cmd_report(args, config: HarnessConfig) -> int:
    text = summarize_reports(args.reports)
    out = args.out or (args.reports / SUMMARY_FILENAME)
    Path(out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def _cmd_sensitivity(args, config: HarnessConfig) -> int:
    store = _need_store(args)
    if args.mode == "smoothing":
        archive = ForecastArchive(args.archive)
        origins = _dates(args.origins) if args.origins else None
        horizons = _ints(args.horizons) if args.horizons else None
        rows, summary = sensitivity_smoothing(store, archive, origins, horizons)
        write_smoothing_table(rows, summary, args.out)
        print(f"wrote {len(rows)} origin row(s); mean |MAE7 - MAE14| = {summary:.4f}")
        return 0
    variants = {d.method_id: (d, c) for d, c in configured_variants(config)}
    if args.method not in variants:
        raise SystemExit(f"error: unknown bundled method {args.method!r}")
    desc, cfg = variants[args.method]
    per_day, summaries = sensitivity_day_of_week(
        store, desc, cfg, args.start, args.end, horizons=_ints(args.horizons)
    )
    write_weekday_table(summaries, args.out)
    print(f"scored {len(per_day)} origin day(s) across 7 weekday groups -> {args.out}")
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "synth": _cmd_synth,
    "run": _cmd_run,
    "evaluate": _cmd_evaluate,
    "ensemble": _cmd_ensemble,
    "report": _cmd_report,
    "sensitivity": _cmd_sensitivity,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config)
        return _COMMANDS[args.command](args, config)
    except SystemExit:
        raise
    except Exception as exc:  # surface domain errors as clean diagnostics
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
