"""Round-based client scheduling under equalized-participation constraints.

The scheduler keeps one tracker record per client (selection count, gap
since last selection) and builds each round's plan in four stages:
periodic injection of never-utilized clients, forced inclusion of
long-overlooked clients, gap/cap/suspension filtering, and uniform
random fill of the remaining slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ClientTrackerRecord",
    "SelectionConfig",
    "RoundPlan",
    "AuditEntry",
    "AuditReport",
    "make_tracker",
    "slots_available",
    "select_round",
    "update_tracker",
    "end_of_training_audit",
]


@dataclass(slots=True)
class ClientTrackerRecord:
    """Participation history of a single client.

    ``gap`` counts consecutive non-selected rounds since the last
    selection (or since round 0 if the client was never selected).
    ``suspended_until`` is the last round of an active suspension,
    0 meaning not suspended. ``available`` is the per-round
    availability flag, refreshed by the caller before each round.
    """

    client_id: int
    times_selected: int = 0
    gap: int = 0
    ever_selected: bool = False
    suspended_until: int = 0
    available: bool = True


@dataclass(frozen=True, slots=True)
class SelectionConfig:
    """Scheduling knobs for the equalized selection policy.

    ``slots_fraction`` bounds the per-round budget shared by the two
    forced-inclusion paths, refreshed every round as
    ``ceil(slots_fraction * per_round)``.
    """

    total_clients: int
    per_round: int
    max_selections: int
    min_selections: int = 1
    gap_min: int = 1
    gap_max: int = 10
    unutilized_interval: int = 5
    unutilized_cap: int = 3
    overlooked_cap: int = 4
    slots_fraction: float = 0.5

    def __post_init__(self):
        if self.total_clients < 1:
            raise ValueError("total_clients must be >= 1")
        if not 1 <= self.per_round <= self.total_clients:
            raise ValueError("per_round must be in [1, total_clients]")
        if not 1 <= self.min_selections <= self.max_selections:
            raise ValueError("need 1 <= min_selections <= max_selections")
        if self.gap_min < 1:
            raise ValueError("gap_min must be >= 1")
        if self.gap_max <= self.gap_min:
            raise ValueError("gap_max must be greater than gap_min")
        if self.unutilized_interval < 1:
            raise ValueError("unutilized_interval must be >= 1")
        if self.unutilized_cap < 0 or self.overlooked_cap < 0:
            raise ValueError("forced-inclusion caps must be >= 0")
        if self.unutilized_cap + self.overlooked_cap > self.per_round:
            raise ValueError("unutilized_cap + overlooked_cap must not exceed per_round")
        if not 0.0 <= self.slots_fraction <= 1.0:
            raise ValueError("slots_fraction must be in [0, 1]")


@dataclass(frozen=True, slots=True)
class RoundPlan:
    """Outcome of one selection round.

    ``selected`` is the ordered union of the three disjoint subsets.
    ``underfilled`` is set when the eligible pool could not fill all
    ``per_round`` slots; this signals an over-constrained configuration
    rather than an error.
    """

    round_k: int
    selected: tuple[int, ...]
    forced_unutilized: tuple[int, ...]
    forced_overlooked: tuple[int, ...]
    random_fill: tuple[int, ...]
    underfilled: bool = False


def make_tracker(total_clients: int) -> list[ClientTrackerRecord]:
    """Fresh tracker records for clients 0..total_clients-1."""
    return [ClientTrackerRecord(client_id=i) for i in range(total_clients)]


def slots_available(cfg: SelectionConfig, round_k: int) -> int:
    """Per-round forced-inclusion budget, refreshed every round."""
    return math.ceil(cfg.slots_fraction * cfg.per_round)


def _selectable(rec: ClientTrackerRecord, cfg: SelectionConfig, round_k: int) -> bool:
    return (
        rec.available
        and rec.suspended_until < round_k
        and rec.times_selected < cfg.max_selections
    )


def select_round(
    records: list[ClientTrackerRecord],
    cfg: SelectionConfig,
    round_k: int,
    rng: np.random.Generator,
) -> RoundPlan:
    """Build the selection plan for ``round_k``.

    Stages, in order: (1) on every ``unutilized_interval``-th round,
    inject up to ``min(unutilized_cap, slots)`` never-selected clients,
    ascending id; (2) force-include up to ``min(overlooked_cap,
    remaining slots)`` clients whose gap reached ``gap_max``, in
    descending gap order (ties broken by ascending id); (3) filter the
    rest to gap >= ``gap_min`` (never-selected clients are exempt),
    selection count below cap, available and not suspended; (4) fill
    the remaining slots uniformly at random without replacement.
    Suspended or unavailable clients never appear in the plan.
    Deterministic given records, config, round and rng state.
    """
    if len(records) != cfg.total_clients:
        raise ValueError(
            f"expected {cfg.total_clients} tracker records, got {len(records)}"
        )
    if round_k < 1:
        raise ValueError("round_k must be >= 1")

    slots = slots_available(cfg, round_k)
    chosen: set[int] = set()

    forced_unutilized: list[int] = []
    if round_k % cfg.unutilized_interval == 0:
        cap = min(cfg.unutilized_cap, slots)
        if cap > 0:
            pool = sorted(
                r.client_id
                for r in records
                if not r.ever_selected and _selectable(r, cfg, round_k)
            )
            forced_unutilized = pool[:cap]
            chosen.update(forced_unutilized)
        slots -= len(forced_unutilized)

    forced_overlooked: list[int] = []
    cap = min(cfg.overlooked_cap, slots)
    if cap > 0:
        overdue = [
            r
            for r in records
            if r.client_id not in chosen
            and r.gap >= cfg.gap_max
            and _selectable(r, cfg, round_k)
        ]
        overdue.sort(key=lambda r: (-r.gap, r.client_id))
        forced_overlooked = [r.client_id for r in overdue[:cap]]
        chosen.update(forced_overlooked)

    # The reselection gap only binds clients with a selection history; a
    # never-selected client has no gap to honor.
    pool = [
        r.client_id
        for r in records
        if r.client_id not in chosen
        and (not r.ever_selected or r.gap >= cfg.gap_min)
        and _selectable(r, cfg, round_k)
    ]
    pool.sort()

    need = cfg.per_round - len(chosen)
    if need >= len(pool):
        random_fill = pool
    else:
        picks = rng.choice(len(pool), size=need, replace=False)
        random_fill = [pool[i] for i in picks]

    selected = tuple(forced_unutilized + forced_overlooked + random_fill)
    return RoundPlan(
        round_k=round_k,
        selected=selected,
        forced_unutilized=tuple(forced_unutilized),
        forced_overlooked=tuple(forced_overlooked),
        random_fill=tuple(random_fill),
        underfilled=len(selected) < cfg.per_round,
    )


def update_tracker(
    records: list[ClientTrackerRecord],
    plan: RoundPlan,
    cfg: SelectionConfig | None = None,
) -> list[ClientTrackerRecord]:
    """Recompute counts and gaps after a round; returns new records.

    Selected clients get ``times_selected += 1`` and ``gap = 0``; every
    other client's gap grows by one. When ``cfg`` is given, selecting a
    client already at ``max_selections`` is rejected as a contract
    violation (pass ``None`` for plans not produced by this scheduler,
    e.g. an unconstrained baseline policy).
    """
    selected = set(plan.selected)
    cap = cfg.max_selections if cfg is not None else None
    out: list[ClientTrackerRecord] = []
    for r in records:
        if r.client_id in selected:
            if cap is not None and r.times_selected >= cap:
                raise ValueError(
                    f"plan selects client {r.client_id} already at the "
                    f"selection cap {cap}"
                )
            out.append(
                ClientTrackerRecord(
                    r.client_id,
                    r.times_selected + 1,
                    0,
                    True,
                    r.suspended_until,
                    r.available,
                )
            )
        else:
            out.append(
                ClientTrackerRecord(
                    r.client_id,
                    r.times_selected,
                    r.gap + 1,
                    r.ever_selected,
                    r.suspended_until,
                    r.available,
                )
            )
    return out


@dataclass(frozen=True, slots=True)
class AuditEntry:
    client_id: int
    times_selected: int
    below_min: bool
    above_max: bool
    attribution: str  # "suspension", "unavailability" or "none"


@dataclass(frozen=True, slots=True)
class AuditReport:
    entries: tuple[AuditEntry, ...]
    lower_violations: int
    upper_violations: int
    total_rounds: int


def end_of_training_audit(
    records: list[ClientTrackerRecord],
    cfg: SelectionConfig,
    total_rounds: int,
) -> AuditReport:
    """Check per-client participation bounds after a finished run.

    The upper bound is enforced during selection, so upper violations
    indicate external tampering. Lower-bound misses are attributed to
    suspension or unavailability when the record shows either; the
    scheduler itself never causes them.
    """
    entries = []
    lower = upper = 0
    for r in records:
        below = r.times_selected < cfg.min_selections
        above = r.times_selected > cfg.max_selections
        if below or above:
            if r.suspended_until > 0:
                attribution = "suspension"
            elif not r.available:
                attribution = "unavailability"
            else:
                attribution = "none"
        else:
            attribution = "none"
        lower += below
        upper += above
        entries.append(
            AuditEntry(r.client_id, r.times_selected, below, above, attribution)
        )
    return AuditReport(
        entries=tuple(entries),
        lower_violations=lower,
        upper_violations=upper,
        total_rounds=total_rounds,
    )
