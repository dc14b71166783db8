"""Command line interface: run experiments, compare runs, audit, report."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import POLICIES, load_config_file
from .harness import (
    ExperimentError,
    comparison_csv,
    export_run,
    load_run_dir,
    run_experiment,
    summarize_loaded,
)
from .selector import end_of_training_audit

__all__ = ["main"]


def _cmd_run(args) -> int:
    config = load_config_file(args.config)
    overrides = {}
    if args.policy is not None:
        overrides["policy"] = args.policy
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    if overrides:
        config = dataclasses.replace(config, **overrides)

    out_root = Path(args.out)
    multi = len(config.seeds) > 1
    for seed in config.seeds:
        log = run_experiment(config, seed)
        out_dir = out_root / f"seed_{seed}" if multi else out_root
        export_run(log, out_dir)
        last = log.reports[-1]
        print(
            f"{config.policy} seed={seed}: {len(log.reports)} rounds, "
            f"accuracy={last.accuracy:.4f}, loss={last.loss:.4f}, "
            f"jfi={log.jfi:.4f}, wall={log.wall_seconds:.1f}s -> {out_dir}"
        )
    return 0


def _cmd_compare(args) -> int:
    runs = [load_run_dir(d) for d in args.runs]
    rows = summarize_loaded(runs)
    text = comparison_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def _cmd_audit(args) -> int:
    run = load_run_dir(args.run)
    report = end_of_training_audit(
        run.tracker, run.config.selection, run.config.total_rounds
    )
    bounds = (run.config.selection.min_selections, run.config.selection.max_selections)
    print(f"participation bounds [{bounds[0]}, {bounds[1]}] over {report.total_rounds} rounds")
    for entry in report.entries:
        if entry.below_min or entry.above_max:
            kind = "below minimum" if entry.below_min else "above maximum"
            print(
                f"  client {entry.client_id}: selected {entry.times_selected} "
                f"times ({kind}, attribution: {entry.attribution})"
            )
    print(
        f"{report.lower_violations} lower-bound and "
        f"{report.upper_violations} upper-bound violations "
        f"across {len(report.entries)} clients"
    )
    return 0


def _cmd_report(args) -> int:
    from .plots import render_report_figures

    runs = [load_run_dir(d) for d in args.runs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = summarize_loaded(runs) if len(runs) > 1 else None
    if rows is None:
        run = runs[0]
        target = run.config.accuracy_target
        from .metrics import rounds_to_accuracy, time_to_accuracy

        rows = [
            {
                "policy": run.config.policy,
                "seed": run.seed,
                "jfi": run.jfi,
                "max_accuracy": max(run.record.accuracy),
                "rounds_to_target": rounds_to_accuracy(run.record, target),
                "time_to_target": time_to_accuracy(run.record, target),
                "final_loss": run.record.loss[-1],
            }
        ]
    summary_path = out / "report_summary.csv"
    summary_path.write_text(comparison_csv(rows), encoding="utf-8")

    figures = render_report_figures(runs, out)
    for path in [summary_path, *figures]:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedequity",
        description=(
            "Federated-learning simulation with equalized client scheduling, "
            "outlier suspension, and fairness metrics."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute an experiment from a config file")
    run_p.add_argument("--config", required=True, help="flat key=value config file")
    run_p.add_argument("--out", required=True, help="output directory for run artifacts")
    run_p.add_argument("--seed", type=int, help="override the config's seed list")
    run_p.add_argument("--policy", choices=POLICIES, help="override the config's policy")
    run_p.set_defaults(func=_cmd_run)

    cmp_p = sub.add_parser("compare", help="tabulate exported runs side by side")
    cmp_p.add_argument("--runs", nargs="+", required=True, help="run directories")
    cmp_p.add_argument("--out", help="write the comparison CSV here instead of stdout")
    cmp_p.set_defaults(func=_cmd_compare)

    audit_p = sub.add_parser("audit", help="check participation bounds of a finished run")
    audit_p.add_argument("--run", required=True, help="run directory")
    audit_p.set_defaults(func=_cmd_audit)

    rep_p = sub.add_parser(
        "report", help="render figures and a summary CSV from exported runs"
    )
    rep_p.add_argument("--runs", nargs="+", required=True, help="run directories")
    rep_p.add_argument("--out", default="report", help="figure output directory")
    rep_p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
