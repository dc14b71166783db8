"""Fairness and convergence metrics over completed runs.

Fairness is Jain's index over per-client ratios of participation count
to data quality; quality combines class diversity with the clean-label
fraction and is normalized onto (0, 1] with a small floor so the ratios
stay finite for very poor clients.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "QUALITY_FLOOR",
    "METRICS_COLUMNS",
    "FairnessInput",
    "ConvergenceRecord",
    "data_quality",
    "jain_fairness_index",
    "rounds_to_accuracy",
    "time_to_accuracy",
    "write_metrics_csv",
    "read_metrics_csv",
    "write_fairness_json",
    "read_fairness_json",
]

QUALITY_FLOOR = 0.01

METRICS_COLUMNS = ("round", "accuracy", "loss", "elapsed_s", "n_selected", "n_suspended")


@dataclass(frozen=True)
class FairnessInput:
    """Per-client participation count and quality score."""

    client_id: int
    participation: int
    quality: float


def data_quality(n_class: int, p_noisy: float, num_classes_total: int) -> float:
    """Quality score in (0, 1] from class diversity and label noise.

    The raw product of class count and clean fraction is scaled by the
    total class count, then mapped affinely from [0.5, 1] onto [0, 1]
    and floored at ``QUALITY_FLOOR``.
    """
    if not 1 <= n_class <= num_classes_total:
        raise ValueError(f"n_class {n_class} outside [1, {num_classes_total}]")
    if not 0.0 <= p_noisy <= 1.0:
        raise ValueError("p_noisy must be in [0, 1]")
    scaled = n_class * (1.0 - p_noisy) / num_classes_total
    return float(min(max((scaled - 0.5) / 0.5, QUALITY_FLOOR), 1.0))


def jain_fairness_index(inputs: Sequence[FairnessInput]) -> float:
    """Jain's index over participation/quality ratios.

    1 means perfectly even ratios, 1/n maximal concentration. Ratios are
    normalized by their maximum before squaring, which keeps the
    boundary cases exact and the sums well scaled.
    """
    if not inputs:
        raise ValueError("need at least one client")
    counts = np.array([f.participation for f in inputs], dtype=float)
    quality = np.array([f.quality for f in inputs], dtype=float)
    if np.any(counts < 0):
        raise ValueError("participation counts must be >= 0")
    if np.any(quality <= 0):
        raise ValueError("quality scores must be positive")
    if not np.any(counts > 0):
        raise ValueError("all participation counts are zero; the index is undefined")
    ratios = counts / quality
    ratios = ratios / ratios.max()
    n = len(inputs)
    return float(ratios.sum() ** 2 / (n * float(ratios @ ratios)))


@dataclass(frozen=True)
class ConvergenceRecord:
    """Per-round cumulative time, accuracy and loss series."""

    elapsed: tuple[float, ...]
    accuracy: tuple[float, ...]
    loss: tuple[float, ...]

    def __post_init__(self):
        if not len(self.elapsed) == len(self.accuracy) == len(self.loss):
            raise ValueError("series lengths differ")
        if any(b < a for a, b in zip(self.elapsed, self.elapsed[1:])):
            raise ValueError("elapsed time must be nondecreasing")


def rounds_to_accuracy(record: ConvergenceRecord, target: float) -> int | None:
    """First round (1-based) whose accuracy reaches the target, if any."""
    if not 0.0 < target <= 1.0:
        raise ValueError("target accuracy must be in (0, 1]")
    for i, acc in enumerate(record.accuracy):
        if acc >= target:
            return i + 1
    return None


def time_to_accuracy(record: ConvergenceRecord, target: float) -> float | None:
    """Elapsed time at the first round whose accuracy reaches the target."""
    round_k = rounds_to_accuracy(record, target)
    if round_k is None:
        return None
    return record.elapsed[round_k - 1]


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def write_metrics_csv(path, rows: Sequence[Sequence]) -> None:
    """Rows of (round, accuracy, loss, elapsed_s, n_selected, n_suspended)."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(",".join(METRICS_COLUMNS) + "\n")
        for row in rows:
            handle.write(",".join(_fmt(v) for v in row) + "\n")


def read_metrics_csv(path) -> tuple[ConvergenceRecord, list[dict]]:
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        raw = list(reader)
    record = ConvergenceRecord(
        elapsed=tuple(float(r["elapsed_s"]) for r in raw),
        accuracy=tuple(float(r["accuracy"]) for r in raw),
        loss=tuple(float(r["loss"]) for r in raw),
    )
    return record, raw


def write_fairness_json(path, inputs: Sequence[FairnessInput], jfi: float) -> None:
    payload = {
        "jfi": jfi,
        "clients": [
            {
                "client_id": f.client_id,
                "participation": f.participation,
                "quality": f.quality,
                "ratio": f.participation / f.quality,
            }
            for f in sorted(inputs, key=lambda f: f.client_id)
        ],
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def read_fairness_json(path) -> tuple[float, list[FairnessInput]]:
    with open(path, encoding="utf-8") as handle:
        payload = json.load(handle)
    inputs = [
        FairnessInput(c["client_id"], c["participation"], c["quality"])
        for c in payload["clients"]
    ]
    return payload["jfi"], inputs
