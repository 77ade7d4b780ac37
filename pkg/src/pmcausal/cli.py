"""Command line front end.

Exit codes: 0 success, 2 input validation failure, 3 estimation impossible
on the given data, 4 service bind failure. Stdout carries only the summary
table; diagnostics and errors go to stderr.
"""
from __future__ import annotations

import argparse
import json
import socket
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    DataError,
    EstimationError,
    SchemaError,
    load_study,
    read_cohort_csv,
    restrict_eligible,
)
from .estimators import ESTIMANDS, METHODS, EstimandSpec, MethodSpec, estimate_report, report_to_json
from .modeling import ModelConfig
from .simulation import (
    default_method_specs,
    load_scenario,
    result_to_json,
    run_experiment,
    save_result,
)

EXIT_VALIDATION = 2
EXIT_ESTIMATION = 3
EXIT_BIND = 4

__all__ = ["main"]


def _fail(code: int, message: str) -> int:
    print(message, file=sys.stderr)
    return code


def _parse_names(raw: str | None, allowed, what: str):
    if raw is None:
        return list(allowed)
    names = [x.strip() for x in raw.split(",") if x.strip()]
    bad = [x for x in names if x not in allowed]
    if bad:
        raise SchemaError(f"unknown {what}: {bad} (choose from {', '.join(allowed)})")
    return names


def _method_specs_from_study(models_doc, method_names, **options):
    models_doc = models_doc or {}
    outcome = ModelConfig.from_json(models_doc.get("outcome"))
    treatment = ModelConfig.from_json(models_doc.get("treatment"), ModelConfig(formula=("main",)))
    return default_method_specs(
        methods=method_names, outcome_model=outcome, treatment_model=treatment, **options
    )


def _print_table(header: list[str], rows: list[list[str]]):
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    line = "  ".join(str(h).ljust(w) for h, w in zip(header, widths))
    print(line)
    print("-" * len(line))
    for row in rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))


def cmd_simulate(args) -> int:
    from dataclasses import replace

    try:
        scenario = load_scenario(args.scenario)
        overrides = {
            key: value
            for key, value in (
                ("master_seed", args.seed),
                ("n_replicates", args.replicates),
                ("cohort_size", args.cohort),
            )
            if value is not None
        }
        if overrides:
            scenario = replace(scenario, **overrides)
        method_names = _parse_names(args.methods, METHODS, "methods")
        estimand_names = _parse_names(args.estimands, ESTIMANDS, "estimands")
    except (SchemaError, FileNotFoundError) as err:
        return _fail(EXIT_VALIDATION, f"invalid scenario: {err}")
    methods = _method_specs_from_study(scenario.study.models, method_names)
    estimands = [EstimandSpec(kind=e) for e in estimand_names]
    try:
        result = run_experiment(scenario, methods=methods, estimands=estimands, workers=args.workers)
    except (EstimationError, DataError) as err:
        return _fail(EXIT_ESTIMATION, f"estimation failed: {err}")
    json_path, csv_path = save_result(result, args.out)
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    payload = result_to_json(result)
    rows = []
    for e in result.estimands:
        row = [e, f"{result.truth_value(e):.4f}"]
        for m in result.methods:
            v = payload["mae"][e][m]
            row.append("n/a" if v is None else f"{v:.4f}")
        rows.append(row)
    _print_table(["estimand", "truth", *[f"mae[{m}]" for m in result.methods]], rows)
    print(f"wrote {json_path} and {csv_path}", file=sys.stderr)
    return 0


def cmd_estimate(args) -> int:
    try:
        study = load_study(args.study)
        cohort = read_cohort_csv(args.cohort, study)
        method_names = _parse_names(args.methods, METHODS, "methods")
        estimand_names = _parse_names(args.estimands, ESTIMANDS, "estimands")
    except (SchemaError, FileNotFoundError) as err:
        return _fail(EXIT_VALIDATION, f"invalid input: {err}")
    if args.methods is None and cohort.counterfactuals is None:
        method_names = [m for m in method_names if m != "true"]
    if "true" in method_names and cohort.counterfactuals is None:
        return _fail(
            EXIT_ESTIMATION,
            "oracle method requested but the cohort has no counterfactual columns",
        )
    try:
        eligible = restrict_eligible(cohort, study.algorithm)
    except EstimationError as err:
        return _fail(EXIT_ESTIMATION, str(err))
    methods = _method_specs_from_study(study.models, method_names)
    estimands = [EstimandSpec(kind=e) for e in estimand_names]
    report = estimate_report(eligible, estimands, methods, study.algorithm)
    failures = {k: v for k, v in report.items() if isinstance(v, Exception)}
    if len(failures) == len(report):
        return _fail(EXIT_ESTIMATION, "every estimate failed: " + str(next(iter(failures.values()))))
    payload = report_to_json(report)
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
    rows = []
    for e in estimand_names:
        for m in method_names:
            cell = payload[e][m]
            if "error" in cell:
                rows.append([e, m, "failed", "", ""])
            else:
                rows.append(
                    [e, m, f"{cell['effect']:.4f}", f"{cell['pm_mean']:.4f}", f"{cell['control_mean']:.4f}"]
                )
    _print_table(["estimand", "method", "effect", "pm_mean", "control_mean"], rows)
    print(f"wrote {out}", file=sys.stderr)
    return 0


def cmd_pdx(args) -> int:
    from .pdx import default_pdx_method_specs, load_pdx, run_pdx_experiment

    try:
        records = load_pdx(
            args.models,
            responses_csv=args.responses,
            volumes_csv=args.volumes,
            baseline_denominator=args.baseline_denominator,
        )
        method_names = _parse_names(args.methods, METHODS, "methods")
        estimand_names = _parse_names(args.estimands, ESTIMANDS, "estimands")
    except (SchemaError, DataError, FileNotFoundError) as err:
        return _fail(EXIT_VALIDATION, f"invalid input: {err}")
    methods = default_pdx_method_specs(
        methods=method_names, n_trees=args.trees, truncation_percentile=99.0
    )
    estimands = [EstimandSpec(kind=e) for e in estimand_names]
    try:
        result = run_pdx_experiment(
            records,
            n_replicates=args.reps,
            cohort_size=args.cohort,
            seed=args.seed,
            methods=methods,
            estimands=estimands,
            outcome_kind=args.outcome,
            workers=args.workers,
        )
    except (EstimationError, DataError) as err:
        return _fail(EXIT_ESTIMATION, str(err))
    json_path, csv_path = save_result(result, args.out)
    payload = result_to_json(result)
    rows = []
    for e in result.estimands:
        row = [e, f"{result.truth_value(e):.4f}"]
        for m in result.methods:
            v = payload["mae"][e][m]
            row.append("n/a" if v is None else f"{v:.4f}")
        rows.append(row)
    _print_table(["estimand", "truth", *[f"mae[{m}]" for m in result.methods]], rows)
    print(f"wrote {json_path} and {csv_path}", file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    try:
        probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((args.host, args.port))
        probe.close()
    except OSError as err:
        return _fail(EXIT_BIND, f"cannot bind {args.host}:{args.port}: {err}")
    import uvicorn

    from .service import create_app

    app = create_app(
        persist_dir=args.persist_dir,
        ui_dir=args.ui_dir,
        queue_capacity=args.queue_capacity,
        run_workers=args.workers,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmcausal",
        description="Causal evaluation of treatment-assignment algorithms: "
        "simulation experiments, single-cohort estimation, xenograft emulation, HTTP service.",
    )
    parser.add_argument("--version", action="version", version=f"pmcausal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario experiment end to end")
    p.add_argument("scenario", help="scenario JSON (study + simulation block)")
    p.add_argument("--out", default="out", help="output directory for result.json/result.csv")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--replicates", type=int, default=None, help="override replicate count")
    p.add_argument("--cohort", type=int, default=None, help="override cohort size")
    p.add_argument("--methods", default=None, help=f"comma list from: {','.join(METHODS)}")
    p.add_argument("--estimands", default=None, help=f"comma list from: {','.join(ESTIMANDS)}")
    p.add_argument("--workers", type=int, default=1, help="replicate worker processes")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate effects on one cohort file")
    p.add_argument("cohort", help="cohort CSV")
    p.add_argument("study", help="study JSON")
    p.add_argument("--out", default="report.json", help="report output path")
    p.add_argument("--methods", default=None, help=f"comma list from: {','.join(METHODS)}")
    p.add_argument("--estimands", default=None, help=f"comma list from: {','.join(ESTIMANDS)}")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("pdx", help="xenograft-screen emulation experiment")
    p.add_argument("models", help="models CSV (mutation flags per model)")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--responses", default=None, help="precomputed responses CSV")
    group.add_argument("--volumes", default=None, help="volume series CSV")
    p.add_argument("--reps", type=int, default=1000, help="replicate count")
    p.add_argument("--cohort", type=int, default=70, help="models sampled per replicate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outcome", choices=("continuous", "binary"), default="continuous")
    p.add_argument("--trees", type=int, default=200, help="trees per forest model")
    p.add_argument("--methods", default=None, help=f"comma list from: {','.join(METHODS)}")
    p.add_argument("--estimands", default=None, help=f"comma list from: {','.join(ESTIMANDS)}")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument(
        "--baseline-denominator",
        action="store_true",
        help="divide volume change by the day-0 volume instead of the day-t volume",
    )
    p.set_defaults(func=cmd_pdx)

    p = sub.add_parser("serve", help="serve the HTTP API (and web UI when built)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--workers", type=int, default=1, help="replicate worker processes per run")
    p.add_argument("--persist-dir", default=None, help="append-only scenario/result JSON store")
    p.add_argument("--ui-dir", default=None, help="built web client to serve at /")
    p.add_argument("--queue-capacity", type=int, default=16)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
