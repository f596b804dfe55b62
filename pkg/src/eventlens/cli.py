"""Command-line front end.

Thin client over the session service: `run` streams a CSV through an
in-process session (or a remote server with --server) and writes the report
artifacts, `generate` emits a synthetic labelled stream, `evaluate` scores a
report file against labels, `bench` times the engine, and `serve` starts the
REST service.

Exit codes: 0 on success, 2 on schema/configuration errors, 3 on numeric
failures.  Set EVENTLENS_LOG=debug|info|warning to control log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
from pathlib import Path

from .client import HttpClient, LocalClient, config_payload
from .errors import ConfigurationError, EventLensError, NumericError, SchemaError
from .ingestion import ColumnRoles, iter_csv_records
from .evaluation import DEFAULT_RECORD_THRESHOLD, evaluate_reports
from .runconfig import build_run_settings, parse_kv_file
from .synth import SynthSpec, generate_stream, write_stream_csv

log = logging.getLogger(__name__)

# The frozen per-line schema of reports.jsonl.  wall_ms is deliberately not
# in this list: it varies run to run, and reports.jsonl must be reproducible
# byte for byte.  Timings go to timings.csv instead.
REPORT_KEYS = (
    "window",
    "t_start",
    "t_end",
    "n_records",
    "score",
    "dof",
    "p_value",
    "anomalous",
    "component_mass",
)

DEFAULT_BATCH = 2000


def _setup_logging() -> None:
    name = os.environ.get("EVENTLENS_LOG", "warning").strip().lower()
    level = getattr(logging, name.upper(), None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def _write_reports_jsonl(path: Path, reports: list[dict]) -> None:
    with open(path, "w") as fh:
        for rep in reports:
            fh.write(json.dumps({k: rep[k] for k in REPORT_KEYS}) + "\n")


def _write_timings_csv(path: Path, reports: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window", "wall_ms"])
        for rep in reports:
            writer.writerow([rep["window"], rep["wall_ms"]])


def _write_dynamics_csv(path: Path, reports: list[dict]) -> None:
    k = len(reports[0]["weights"][0])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window", "timestamp"] + [f"weight_{j}" for j in range(k)])
        for rep in reports:
            for ts, row in zip(rep["timestamps"], rep["weights"]):
                writer.writerow([rep["window"], ts, *row])


def _write_unit_summary_csv(path: Path, rankings: list[dict], cat_names) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["attribute", "component", "rank", "unit", "probability"])
        for entry in rankings:
            name = cat_names[entry["attribute"]]
            for rank, (unit, prob) in enumerate(entry["units"]):
                writer.writerow([name, entry["component"], rank, unit, prob])


def _write_density_csvs(out_dir: Path, curves: list[dict], cont_names) -> list[Path]:
    by_attr: dict[int, list[dict]] = {}
    for curve in curves:
        by_attr.setdefault(curve["attribute"], []).append(curve)
    paths = []
    for m, group in sorted(by_attr.items()):
        group = sorted(group, key=lambda c: c["component"])
        path = out_dir / f"density_{_safe_name(cont_names[m])}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["center"] + [f"component_{c['component']}" for c in group])
            for i, center in enumerate(group[0]["centers"]):
                writer.writerow([center] + [c["density"][i] for c in group])
        paths.append(path)
    return paths


def cmd_run(args: argparse.Namespace) -> int:
    settings = build_run_settings(parse_kv_file(args.config))
    client = HttpClient(args.server) if args.server else LocalClient()
    try:
        session_id = client.create_session(config_payload(settings.config))
        reports: list[dict] = []
        batch: list[dict] = []
        for rec in iter_csv_records(str(settings.input), settings.roles):
            batch.append(
                {
                    "timestamp": rec.timestamp,
                    "categorical": list(rec.cat),
                    "continuous": list(rec.cont),
                    "label": rec.label,
                }
            )
            if len(batch) >= args.batch_size:
                reports.extend(client.add_records(session_id, batch))
                batch = []
        if batch:
            reports.extend(client.add_records(session_id, batch))
        reports.extend(client.flush(session_id))
        if not reports:
            raise SchemaError(f"{settings.input}: not enough records for one window")

        summaries = client.summaries(session_id, top=args.top)
        model = client.model(session_id)
        stats = client.stats(session_id)
        client.delete(session_id)
    finally:
        if args.server:
            client.close()

    out = settings.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_reports_jsonl(out / "reports.jsonl", reports)
    _write_timings_csv(out / "timings.csv", reports)
    _write_dynamics_csv(out / "dynamics.csv", reports)
    if settings.roles.categorical:
        _write_unit_summary_csv(
            out / "summary_units.csv", summaries["top_units"], settings.roles.categorical
        )
    if settings.roles.continuous:
        _write_density_csvs(out, summaries["densities"], settings.roles.continuous)
    with open(out / "model.json", "w") as fh:
        json.dump(model, fh, sort_keys=True)
        fh.write("\n")

    n_anom = sum(1 for rep in reports if rep["anomalous"])
    print(
        f"processed {len(reports)} windows ({stats['normal_records']} records kept "
        f"as normal), {n_anom} anomalous -> {out}"
    )
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    spec = SynthSpec.from_mapping(parse_kv_file(args.spec))
    stream = generate_stream(spec)
    write_stream_csv(stream, args.out)
    n_burst = sum(1 for r in stream.records if r.label)
    print(
        f"wrote {len(stream.records)} records over {spec.windows} windows to "
        f"{args.out} (burst windows: {sorted(stream.burst_windows)}, "
        f"{n_burst} burst records)"
    )
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    reports = []
    with open(args.reports) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                reports.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{args.reports}:{lineno}: bad JSON line: {exc}") from None

    roles = ColumnRoles(timestamp=args.timestamp_column, label=args.label_column)
    times = []
    labels = []
    for rec in iter_csv_records(args.data, roles):
        times.append(rec.timestamp)
        labels.append(rec.label or 0)
    result = evaluate_reports(reports, times, labels, threshold_records=args.threshold)
    print(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    from .bench import build_bench_settings, run_bench, write_bench_csvs

    spec, config, sweep = build_bench_settings(parse_kv_file(args.spec))
    result = run_bench(spec, config, sweep)
    windows_path, sweep_path = write_bench_csvs(result, args.out)
    print(json.dumps(result.summary(), indent=2, sort_keys=True))
    print(f"per-window timings -> {windows_path}")
    print(f"rate sweep -> {sweep_path}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eventlens",
        description="Streaming event-group summaries with window anomaly flags.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="process a CSV stream and write reports")
    p_run.add_argument("--config", required=True, help="key=value run configuration file")
    p_run.add_argument("--server", default=None, help="base URL of a running service")
    p_run.add_argument("--batch-size", type=int, default=DEFAULT_BATCH)
    p_run.add_argument("--top", type=int, default=10, help="units per component summary")
    p_run.set_defaults(fn=cmd_run)

    p_gen = sub.add_parser("generate", help="write a synthetic labelled stream")
    p_gen.add_argument("--spec", required=True, help="key=value stream spec file")
    p_gen.add_argument("--out", required=True, help="output CSV path")
    p_gen.set_defaults(fn=cmd_generate)

    p_eval = sub.add_parser("evaluate", help="score reports against labels")
    p_eval.add_argument("--reports", required=True, help="reports.jsonl from a run")
    p_eval.add_argument("--data", required=True, help="labelled input CSV")
    p_eval.add_argument("--threshold", type=int, default=DEFAULT_RECORD_THRESHOLD)
    p_eval.add_argument("--timestamp-column", default="timestamp")
    p_eval.add_argument("--label-column", default="label")
    p_eval.set_defaults(fn=cmd_evaluate)

    p_bench = sub.add_parser("bench", help="time the engine on synthetic streams")
    p_bench.add_argument("--spec", required=True, help="key=value bench spec file")
    p_bench.add_argument("--out", default=".", help="directory for timing CSVs")
    p_bench.set_defaults(fn=cmd_bench)

    p_serve = sub.add_parser("serve", help="start the REST service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.set_defaults(fn=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (SchemaError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EventLensError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
