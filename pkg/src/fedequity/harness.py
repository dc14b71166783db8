"""Experiment orchestration: the round loop, run exports, and comparisons.

Each round goes availability draw, selection (policy-dependent), local
training with poisoning behavior applied, aggregation, evaluation,
outlier bookkeeping, tracker update, metrics append. Every stage failure
is rewrapped so the caller learns which module broke in which round.
"""

from __future__ import annotations

import dataclasses
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data_fabric, fl_engine, metrics, outlier_guard, selector
from .config import ExperimentConfig, canonical_text, config_fingerprint

__all__ = [
    "ExperimentError",
    "RoundReport",
    "RunLog",
    "LoadedRun",
    "run_experiment",
    "summarize_run",
    "compare",
    "comparison_csv",
    "COMPARISON_COLUMNS",
    "export_run",
    "load_run_dir",
    "summarize_loaded",
]

COMPARISON_COLUMNS = (
    "policy",
    "seed",
    "jfi",
    "max_accuracy",
    "rounds_to_target",
    "time_to_target",
    "final_loss",
)


class ExperimentError(RuntimeError):
    """A module failed mid-run; carries the module name and round number."""

    def __init__(self, module: str, round_k: int, message: str):
        super().__init__(f"module '{module}' failed at round {round_k}: {message}")
        self.module = module
        self.round_k = round_k


@dataclass(frozen=True)
class RoundReport:
    round_k: int
    accuracy: float
    loss: float
    elapsed: float
    plan: selector.RoundPlan
    newly_suspended: tuple[int, ...]
    n_suspended: int


@dataclass(frozen=True)
class RunLog:
    """Complete record of one seeded run."""

    config: ExperimentConfig
    seed: int
    fingerprint: str
    reports: tuple[RoundReport, ...]
    tracker: tuple[selector.ClientTrackerRecord, ...]
    ledger: outlier_guard.SuspicionLedger
    fairness: tuple[metrics.FairnessInput, ...]
    jfi: float
    events: tuple[tuple[int, str, int, str], ...]
    wall_seconds: float

    def convergence(self) -> metrics.ConvergenceRecord:
        return metrics.ConvergenceRecord(
            elapsed=tuple(r.elapsed for r in self.reports),
            accuracy=tuple(r.accuracy for r in self.reports),
            loss=tuple(r.loss for r in self.reports),
        )

    @property
    def final_loss(self) -> float:
        return self.reports[-1].loss

    @property
    def max_accuracy(self) -> float:
        return max(r.accuracy for r in self.reports)


def _mix_seed(a: int, b: int) -> int:
    return (a * 1_000_003 + b) % (2**31)


def _random_plan(
    records: list[selector.ClientTrackerRecord],
    per_round: int,
    round_k: int,
    rng: np.random.Generator,
) -> selector.RoundPlan:
    # Baseline policy: available clients only, uniform without
    # replacement, no tracker or suspension constraints.
    pool = sorted(r.client_id for r in records if r.available)
    if per_round >= len(pool):
        picked = pool
    else:
        picks = rng.choice(len(pool), size=per_round, replace=False)
        picked = [pool[i] for i in picks]
    return selector.RoundPlan(
        round_k=round_k,
        selected=tuple(picked),
        forced_unutilized=(),
        forced_overlooked=(),
        random_fill=tuple(picked),
        underfilled=len(picked) < per_round,
    )


def _build_clients(config: ExperimentConfig, run_seed: int):
    spec = dataclasses.replace(config.data, seed=_mix_seed(config.data.seed, run_seed))
    total = config.selection.total_clients
    clients = data_fabric.generate(spec, total)

    setup_rng = np.random.default_rng([spec.seed, 11])
    poisoned_ids: list[int] = []
    if config.num_poisoned > 0:
        poisoned_ids = sorted(
            setup_rng.choice(total, size=config.num_poisoned, replace=False).tolist()
        )
    noisy_ids: list[int] = []
    n_noisy = int(round(config.noisy_fraction * total))
    if n_noisy > 0:
        eligible = [i for i in range(total) if i not in set(poisoned_ids)]
        n_noisy = min(n_noisy, len(eligible))
        picks = setup_rng.choice(len(eligible), size=n_noisy, replace=False)
        noisy_ids = sorted(eligible[i] for i in picks)

    for cid in noisy_ids:
        clients[cid] = data_fabric.inject_label_noise(
            clients[cid], config.noise_level, [spec.seed, 12, cid]
        )
    for cid in poisoned_ids:
        clients[cid] = data_fabric.mark_poisoned(
            clients[cid], config.poison_mode, [spec.seed, 14, cid]
        )

    latencies = config.latency * (
        1.0 + config.latency_spread * np.random.default_rng([spec.seed, 13]).random(total)
    )
    test_features, test_labels = data_fabric.generate_test_set(
        spec, config.test_samples_per_class
    )
    return clients, latencies, test_features, test_labels


def run_experiment(config: ExperimentConfig, seed: int | None = None) -> RunLog:
    """Execute one seeded run and return its full log. Deterministic per seed."""
    run_seed = config.seeds[0] if seed is None else seed
    if run_seed < 0:
        raise ValueError("seed must be non-negative")
    effective = dataclasses.replace(config, seeds=(run_seed,))
    fingerprint = config_fingerprint(effective)
    started = time.perf_counter()

    sel_cfg = config.selection
    total = sel_cfg.total_clients
    try:
        clients, latencies, test_features, test_labels = _build_clients(config, run_seed)
    except ExperimentError:
        raise
    except Exception as exc:
        raise ExperimentError("data_fabric", 0, str(exc)) from exc

    records = selector.make_tracker(total)
    ledger = outlier_guard.SuspicionLedger(range(total))
    params = fl_engine.ModelParams.zeros(config.data.num_classes, config.data.num_features)

    avail_rng = np.random.default_rng([run_seed, 2])
    select_rng = np.random.default_rng([run_seed, 3])

    reports: list[RoundReport] = []
    events: list[tuple[int, str, int, str]] = []
    elapsed = 0.0
    prev_accuracy: float | None = None
    prev_loss: float | None = None

    for round_k in range(1, config.total_rounds + 1):
        if config.availability < 1.0:
            up = avail_rng.random(total) < config.availability
            for rec in records:
                rec.available = bool(up[rec.client_id])

        try:
            if config.policy == "fairequity":
                plan = selector.select_round(records, sel_cfg, round_k, select_rng)
            else:
                plan = _random_plan(records, sel_cfg.per_round, round_k, select_rng)
        except Exception as exc:
            raise ExperimentError("selector", round_k, str(exc)) from exc

        for cid in plan.forced_unutilized:
            events.append((round_k, "SELECT", cid, "unutilized"))
        for cid in plan.forced_overlooked:
            events.append((round_k, "SELECT", cid, "overlooked"))
        for cid in plan.random_fill:
            events.append((round_k, "SELECT", cid, "random"))
        if plan.underfilled:
            events.append((round_k, "UNDERFILLED", -1, "pool_exhausted"))

        try:
            updates = [
                fl_engine.local_train(
                    params,
                    clients[cid],
                    config.train,
                    [config.train.seed, run_seed, round_k, cid],
                )
                for cid in plan.selected
            ]
            if updates:
                params = fl_engine.aggregate(params, updates, config.train.global_lr)
            accuracy, loss = fl_engine.evaluate(params, test_features, test_labels)
        except Exception as exc:
            raise ExperimentError("fl_engine", round_k, str(exc)) from exc

        if plan.selected:
            elapsed += float(max(latencies[cid] for cid in plan.selected))
        else:
            elapsed += config.latency

        newly_suspended: tuple[int, ...] = ()
        if prev_accuracy is not None:
            event = outlier_guard.PerformanceEvent(
                round_k=round_k,
                accuracy_delta=accuracy - prev_accuracy,
                loss_delta=loss - prev_loss,
                prev_accuracy=prev_accuracy,
                prev_loss=prev_loss,
                participants=plan.selected,
            )
            try:
                newly_suspended = tuple(
                    outlier_guard.record_round(ledger, event, config.guard)
                )
            except Exception as exc:
                raise ExperimentError("outlier_guard", round_k, str(exc)) from exc
            for cid in newly_suspended:
                state = ledger.client(cid)
                records[cid].suspended_until = state.suspension_end
                events.append((round_k, "SUSPEND", cid, state.flag_history[-1][1]))

        try:
            records = selector.update_tracker(
                records, plan, sel_cfg if config.policy == "fairequity" else None
            )
        except Exception as exc:
            raise ExperimentError("selector", round_k, str(exc)) from exc

        n_suspended = sum(
            1
            for state in ledger.clients.values()
            if state.suspension_end is not None and state.suspension_end >= round_k
        )
        reports.append(
            RoundReport(
                round_k=round_k,
                accuracy=accuracy,
                loss=loss,
                elapsed=elapsed,
                plan=plan,
                newly_suspended=newly_suspended,
                n_suspended=n_suspended,
            )
        )
        prev_accuracy, prev_loss = accuracy, loss

    try:
        fairness = tuple(
            metrics.FairnessInput(
                client_id=rec.client_id,
                participation=rec.times_selected,
                quality=metrics.data_quality(
                    clients[rec.client_id].true_n_class,
                    clients[rec.client_id].true_p_noisy,
                    config.data.num_classes,
                ),
            )
            for rec in records
        )
        # A run where nobody ever participated has an undefined index;
        # keep the completed log and record NaN instead of aborting.
        if any(f.participation > 0 for f in fairness):
            jfi = metrics.jain_fairness_index(fairness)
        else:
            jfi = float("nan")
    except Exception as exc:
        raise ExperimentError("metrics", config.total_rounds, str(exc)) from exc

    return RunLog(
        config=effective,
        seed=run_seed,
        fingerprint=fingerprint,
        reports=tuple(reports),
        tracker=tuple(records),
        ledger=ledger,
        fairness=fairness,
        jfi=jfi,
        events=tuple(events),
        wall_seconds=time.perf_counter() - started,
    )


def summarize_run(log: RunLog) -> dict:
    record = log.convergence()
    target = log.config.accuracy_target
    return {
        "policy": log.config.policy,
        "seed": log.seed,
        "jfi": log.jfi,
        "max_accuracy": log.max_accuracy,
        "rounds_to_target": metrics.rounds_to_accuracy(record, target),
        "time_to_target": metrics.time_to_accuracy(record, target),
        "final_loss": log.final_loss,
    }


def _check_comparable(configs: list[ExperimentConfig]) -> None:
    if len(configs) < 2:
        raise ValueError("need at least two configs to compare")
    normalized = {
        canonical_text(dataclasses.replace(c, policy="fairequity", seeds=(0,)))
        for c in configs
    }
    if len(normalized) != 1:
        raise ValueError(
            "configs must differ only in policy or seeds (dataset and "
            "training settings must match for an apples-to-apples comparison)"
        )


def _median_rows(rows: list[dict]) -> list[dict]:
    out = []
    for policy in sorted({r["policy"] for r in rows}):
        group = [r for r in rows if r["policy"] == policy]
        medians: dict = {"policy": policy, "seed": "median"}
        for column in COMPARISON_COLUMNS[2:]:
            values = [
                float("inf") if r[column] is None else r[column] for r in group
            ]
            value = statistics.median(values)
            medians[column] = None if value == float("inf") else value
        out.append(medians)
    return out


def compare(configs: list[ExperimentConfig]) -> list[dict]:
    """Run every (config, seed) pair and tabulate the outcomes.

    Returns per-run rows followed by per-policy median rows, in the
    fixed ``COMPARISON_COLUMNS`` order.
    """
    _check_comparable(configs)
    rows = [
        summarize_run(run_experiment(config, seed))
        for config in configs
        for seed in config.seeds
    ]
    return rows + _median_rows(rows)


def comparison_csv(rows: list[dict]) -> str:
    lines = [",".join(COMPARISON_COLUMNS)]
    for row in rows:
        rendered = []
        for column in COMPARISON_COLUMNS:
            value = row[column]
            if value is None:
                rendered.append("")
            elif isinstance(value, float):
                rendered.append(format(value, ".10g"))
            else:
                rendered.append(str(value))
        lines.append(",".join(rendered))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Run directory export / import

_TRACKER_COLUMNS = (
    "client_id",
    "times_selected",
    "gap",
    "ever_selected",
    "suspended_until",
    "available",
)


def export_run(log: RunLog, out_dir) -> Path:
    """Write metrics.csv, fairness.json, events.log, tracker.csv and the
    fingerprinted canonical config into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    (out / "config.txt").write_text(canonical_text(log.config), encoding="utf-8")
    (out / "config.fingerprint").write_text(log.fingerprint + "\n", encoding="utf-8")

    metrics.write_metrics_csv(
        out / "metrics.csv",
        [
            (r.round_k, r.accuracy, r.loss, r.elapsed, len(r.plan.selected), r.n_suspended)
            for r in log.reports
        ],
    )
    metrics.write_fairness_json(out / "fairness.json", log.fairness, log.jfi)

    with open(out / "events.log", "w", encoding="utf-8") as handle:
        for round_k, kind, cid, reason in log.events:
            handle.write(f"{round_k},{kind},{cid},{reason}\n")

    with open(out / "tracker.csv", "w", encoding="utf-8") as handle:
        handle.write(",".join(_TRACKER_COLUMNS) + "\n")
        for rec in log.tracker:
            handle.write(
                f"{rec.client_id},{rec.times_selected},{rec.gap},"
                f"{int(rec.ever_selected)},{rec.suspended_until},{int(rec.available)}\n"
            )
    return out


@dataclass(frozen=True)
class LoadedRun:
    """A run directory read back for comparison, audit or reporting."""

    path: Path
    config: ExperimentConfig
    seed: int
    record: metrics.ConvergenceRecord
    metric_rows: list[dict]
    jfi: float
    fairness: list[metrics.FairnessInput]
    tracker: list[selector.ClientTrackerRecord]
    events: list[tuple[int, str, int, str]]

    @property
    def label(self) -> str:
        return f"{self.config.policy}/seed{self.seed}"


def load_run_dir(path) -> LoadedRun:
    from .config import load_config_file

    run_dir = Path(path)
    config = load_config_file(run_dir / "config.txt")
    record, rows = metrics.read_metrics_csv(run_dir / "metrics.csv")
    jfi, fairness = metrics.read_fairness_json(run_dir / "fairness.json")

    tracker = []
    with open(run_dir / "tracker.csv", encoding="utf-8") as handle:
        next(handle)
        for line in handle:
            cid, times, gap, ever, susp, avail = line.strip().split(",")
            tracker.append(
                selector.ClientTrackerRecord(
                    client_id=int(cid),
                    times_selected=int(times),
                    gap=int(gap),
                    ever_selected=bool(int(ever)),
                    suspended_until=int(susp),
                    available=bool(int(avail)),
                )
            )

    events = []
    events_path = run_dir / "events.log"
    if events_path.exists():
        with open(events_path, encoding="utf-8") as handle:
            for line in handle:
                round_k, kind, cid, reason = line.strip().split(",", 3)
                events.append((int(round_k), kind, int(cid), reason))

    return LoadedRun(
        path=run_dir,
        config=config,
        seed=config.seeds[0],
        record=record,
        metric_rows=rows,
        jfi=jfi,
        fairness=fairness,
        tracker=tracker,
        events=events,
    )


def summarize_loaded(runs: list[LoadedRun]) -> list[dict]:
    """Comparison rows (plus medians) from already-exported run dirs."""
    _check_comparable([r.config for r in runs])
    rows = []
    for run in runs:
        target = run.config.accuracy_target
        rows.append(
            {
                "policy": run.config.policy,
                "seed": run.seed,
                "jfi": run.jfi,
                "max_accuracy": max(run.record.accuracy),
                "rounds_to_target": metrics.rounds_to_accuracy(run.record, target),
                "time_to_target": metrics.time_to_accuracy(run.record, target),
                "final_loss": run.record.loss[-1],
            }
        )
    return rows + _median_rows(rows)
