"""Performance-based outlier flagging and temporary suspension.

Whenever global accuracy drops, or global loss rises, by more than a
configured relative percentage between consecutive rounds, every
participant of that round collects one strike. Clients whose strike
count reaches the configured limit are suspended for a fixed number of
rounds. Clients repeatedly present in degraded rounds accumulate
strikes quickly; incidental co-participants rarely recur.
"""

from __future__ import annotations

from dataclasses import dataclass, field

__all__ = [
    "GuardConfig",
    "PerformanceEvent",
    "ClientSuspicion",
    "SuspicionLedger",
    "record_round",
    "is_suspended",
    "REASON_ACCURACY",
    "REASON_LOSS",
]

REASON_ACCURACY = "ACC_TH"
REASON_LOSS = "LOSS_TH"


@dataclass(frozen=True, slots=True)
class GuardConfig:
    """Thresholds (relative percentages) and suspension policy.

    ``decay_on_clean`` optionally forgives one strike per clean
    (non-degraded) round a client participates in; off by default.
    """

    acc_drop_pct: float = 5.0
    loss_rise_pct: float = 5.0
    strikes_to_suspend: int = 3
    suspension_rounds: int = 10
    decay_on_clean: bool = False

    def __post_init__(self):
        if self.acc_drop_pct <= 0 or self.loss_rise_pct <= 0:
            raise ValueError("degradation thresholds must be positive")
        if self.strikes_to_suspend < 1:
            raise ValueError("strikes_to_suspend must be >= 1")
        if self.suspension_rounds < 1:
            raise ValueError("suspension_rounds must be >= 1")


@dataclass(frozen=True, slots=True)
class PerformanceEvent:
    """Round-over-round change in global metrics plus the participants.

    Deltas are current minus previous. The previous absolute values are
    carried so the relative thresholds can be applied.
    """

    round_k: int
    accuracy_delta: float
    loss_delta: float
    prev_accuracy: float
    prev_loss: float
    participants: tuple[int, ...]


@dataclass(slots=True)
class ClientSuspicion:
    strikes: int = 0
    suspension_end: int | None = None
    flag_history: list[tuple[int, str]] = field(default_factory=list)


class SuspicionLedger:
    """Per-client strike counts and suspension state.

    Events must be applied in round order; reads are safe at any time.
    """

    def __init__(self, client_ids):
        self.clients: dict[int, ClientSuspicion] = {
            cid: ClientSuspicion() for cid in client_ids
        }
        self.last_round = 0

    def client(self, client_id: int) -> ClientSuspicion:
        try:
            return self.clients[client_id]
        except KeyError:
            raise KeyError(f"client {client_id} not registered with the guard") from None

    def ever_flagged(self, client_id: int) -> bool:
        return bool(self.client(client_id).flag_history)


def _degradation_reason(event: PerformanceEvent, cfg: GuardConfig) -> str | None:
    if event.prev_accuracy > 0:
        if event.accuracy_delta / event.prev_accuracy <= -cfg.acc_drop_pct / 100.0:
            return REASON_ACCURACY
    if event.prev_loss > 0:
        if event.loss_delta / event.prev_loss >= cfg.loss_rise_pct / 100.0:
            return REASON_LOSS
    return None


def record_round(
    ledger: SuspicionLedger,
    event: PerformanceEvent,
    cfg: GuardConfig,
) -> list[int]:
    """Apply one round's metrics; returns the newly suspended client ids.

    Round 1 establishes the baseline and produces no event, so the first
    acceptable event is for round 2. On a degraded round every
    participant's strike count goes up by one; whoever reaches the limit
    is suspended through ``round_k + suspension_rounds`` and has its
    count reset.
    """
    if event.round_k < 2:
        raise ValueError("round 1 is the baseline; events start at round 2")
    if event.round_k <= ledger.last_round:
        raise ValueError(
            f"event for round {event.round_k} arrived after round {ledger.last_round}"
        )

    newly_suspended: list[int] = []
    reason = _degradation_reason(event, cfg)
    if reason is not None:
        for cid in event.participants:
            state = ledger.client(cid)
            state.strikes += 1
            if state.strikes >= cfg.strikes_to_suspend:
                state.suspension_end = event.round_k + cfg.suspension_rounds
                state.strikes = 0
                state.flag_history.append((event.round_k, reason))
                newly_suspended.append(cid)
    elif cfg.decay_on_clean:
        for cid in event.participants:
            state = ledger.client(cid)
            if state.strikes > 0:
                state.strikes -= 1

    ledger.last_round = event.round_k
    return newly_suspended


def is_suspended(ledger: SuspicionLedger, client_id: int, round_k: int) -> bool:
    """True iff the client is barred from participating at ``round_k``."""
    state = ledger.client(client_id)
    return state.suspension_end is not None and round_k <= state.suspension_end
