"""Command line interface.

Four subcommands: run-trial simulates a closed-loop cohort trial and writes
trajectories plus a summary; report renders figures and delimited exports
from a finished run directory; clarke turns reference/predicted pairs into
an error-grid CSV; serve starts the HTTP service.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import sys
from dataclasses import replace
from pathlib import Path

from .cohort import (
    CohortConfig,
    TrialConfig,
    generate_cohort,
    run_trial,
    write_trial_outputs,
)
from .controller import ControllerConfig
from .errors import IngestError, OnlcError
from .evaluation import render_zone_csv, zone_report
from .plots import (
    monthly_trends,
    render_clarke_scatter,
    render_trend_panels,
    render_weight_lines,
    trends_csv,
)
from .records import parse_records
from .service import ServiceConfig, create_app
from .twin import TwinConfig


def _load_doc(path: str | None) -> dict:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise IngestError(f"config {path!r} must hold a JSON object")
    return doc


def _overrides(cls, doc: dict):
    # User configs may give only the keys they want to change.
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
    return cls(**kwargs)


def _cohort_config(doc: dict) -> CohortConfig:
    return _overrides(CohortConfig, doc)


def _trial_config(doc: dict, seed: int | None) -> TrialConfig:
    kwargs = dict(doc)
    if "start_date" in kwargs:
        kwargs["start_date"] = dt.date.fromisoformat(kwargs["start_date"])
    if "twin" in kwargs:
        kwargs["twin"] = _overrides(TwinConfig, kwargs["twin"])
    if "controller" in kwargs:
        kwargs["controller"] = _overrides(ControllerConfig, kwargs["controller"])
    config = TrialConfig(**kwargs)
    if seed is not None:
        config = replace(config, seed=seed)
    return config


def _cmd_run_trial(args) -> int:
    doc = _load_doc(args.config)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    months = args.months if args.months is not None else doc.get("months", 6)
    cohort = generate_cohort(doc.get("patients", 20), seed=seed,
                             config=_cohort_config(doc.get("cohort", {})))
    result = run_trial(cohort, months=months, config=_trial_config(doc.get("trial", {}), seed))
    written = write_trial_outputs(result, args.out)
    for path in written:
        print(path)
    for arm, summary in sorted(result.summaries().items()):
        print(f"{arm}: n={summary.n} "
              f"weight_change={summary.mean_weight_change:+.2f} "
              f"glucose_in_range={summary.glucose_in_range:.3f} "
              f"zone_a={summary.zone_a:.3f}")
    return 0


def _read_prediction_pairs(path: Path) -> list:
    """predictions.csv rows -> (observed, predicted) pairs."""
    pairs = []
    lines = path.read_text().splitlines()
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise IngestError(f"{path.name}:{n}: expected four columns")
        pairs.append((float(parts[3]), float(parts[2])))
    return pairs


def _cmd_report(args) -> int:
    run_dir = Path(args.run)
    summary_path = run_dir / "summary.json"
    if not summary_path.exists():
        raise IngestError(f"{run_dir} has no summary.json; is it a run directory?")
    summary = json.loads(summary_path.read_text())
    arms = {pid: info["arm"] for pid, info in summary["per_patient"].items()}
    trajectories = {
        pid: parse_records((run_dir / f"{pid}.csv").read_text()) for pid in arms
    }
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)

    trends = monthly_trends(trajectories, arms, summary["month_days"])
    written = [out / "trends.csv"]
    written[0].write_text(trends_csv(trends))
    observation_months = summary["observation_days"] // summary["month_days"]
    written.append(render_trend_panels(trends, observation_months, out / "trends.png"))
    written.append(render_weight_lines(trajectories, arms, out / "weights.png"))

    predictions = run_dir / "predictions.csv"
    if predictions.exists():
        pairs = _read_prediction_pairs(predictions)
        zones = out / "zones.csv"
        zones.write_text(render_zone_csv(pairs))
        written.append(zones)
        written.append(render_clarke_scatter(pairs, out / "clarke.png"))
        print(zone_report(pairs).render_text())
    for path in written:
        print(path)
    return 0


def _parse_reference_pairs(text: str) -> list:
    pairs = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) < 2:
            raise IngestError(f"line {n}: expected reference,predicted")
        try:
            pairs.append((float(parts[0]), float(parts[1])))
        except ValueError:
            if n == 1:
                continue  # header row
            raise IngestError(f"line {n}: malformed pair {line!r}")
    if not pairs:
        raise IngestError("no reference/predicted pairs found")
    return pairs


def _cmd_clarke(args) -> int:
    pairs = _parse_reference_pairs(Path(args.pairs).read_text())
    csv_text = render_zone_csv(pairs)
    if args.out:
        Path(args.out).write_text(csv_text)
        print(zone_report(pairs).render_text())
    else:
        sys.stdout.write(csv_text)
        print(zone_report(pairs).render_text(), file=sys.stderr)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    config = ServiceConfig.load(args.config) if args.config else ServiceConfig()
    uvicorn.run(create_app(config), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="onlc",
        description="Closed-loop lifestyle control: trials, reports, serving.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run-trial", help="simulate a closed-loop cohort trial")
    run.add_argument("--config", help="trial config JSON")
    run.add_argument("--seed", type=int, default=None, help="cohort and trial seed")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--months", type=int, default=None, help="trial length override")
    run.set_defaults(func=_cmd_run_trial)

    report = sub.add_parser("report", help="render figures and CSV exports for a run")
    report.add_argument("--run", required=True, help="run-trial output directory")
    report.add_argument("--out", help="where to write (default: the run directory)")
    report.set_defaults(func=_cmd_report)

    clarke = sub.add_parser("clarke", help="zone-classify reference,predicted pairs")
    clarke.add_argument("--pairs", required=True, help="CSV of reference,predicted")
    clarke.add_argument("--out", help="write the zone CSV here instead of stdout")
    clarke.set_defaults(func=_cmd_clarke)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--config", help="service config JSON")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--host", default="127.0.0.1")
    serve.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OnlcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
