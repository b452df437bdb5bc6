"""Declarative persistence: callers only add keys to the desired set and the
reconciler drives the store toward it, retrying failed writes with bounded
exponential backoff."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

from .keys import CheckpointKey
from .store import BaseStore, StoreUnavailable

log = logging.getLogger(__name__)

ALERT_AFTER_FAILURES = 5


@dataclass
class PersistQueue:
    desired: dict[CheckpointKey, None] = field(default_factory=dict)
    in_flight: set[CheckpointKey] = field(default_factory=set)
    persisted: set[CheckpointKey] = field(default_factory=set)
    failures: dict[CheckpointKey, int] = field(default_factory=dict)
    next_attempt: dict[CheckpointKey, float] = field(default_factory=dict)
    alerts: list[tuple[float, CheckpointKey, int]] = field(default_factory=list)
    base_backoff: float = 1.0
    max_backoff: float = 60.0

    def enqueue(self, key: CheckpointKey) -> None:
        # a re-save makes the stored copy stale, so the key is desired again
        self.persisted.discard(key)
        self.desired[key] = None
        self.failures.pop(key, None)
        self.next_attempt.pop(key, None)

    def discard(self, key: CheckpointKey) -> None:
        self.desired.pop(key, None)
        self.in_flight.discard(key)
        self.failures.pop(key, None)
        self.next_attempt.pop(key, None)

    def mark_persisted(self, key: CheckpointKey) -> None:
        self.discard(key)
        self.persisted.add(key)

    def check(self) -> None:
        assert not (self.desired.keys() & self.persisted)


@dataclass(frozen=True)
class PersistOutcome:
    key: CheckpointKey
    ok: bool
    nbytes: int
    duration: float


def reconcile(
    queue: PersistQueue,
    store: BaseStore,
    payload_of: Callable[[CheckpointKey], bytes | None],
    now: float = 0.0,
    bandwidth: float | None = None,
) -> list[PersistOutcome]:
    """One reconciliation pass; idempotent once ``desired`` is empty.

    ``payload_of`` returns the current bytes for a key, or None if no copy is
    left anywhere, in which case the key is dropped from the desired set.
    """
    outcomes = []
    for key in sorted(queue.desired):
        if queue.next_attempt.get(key, float("-inf")) > now:
            continue
        payload = payload_of(key)
        if payload is None:
            log.warning("dropping %s from persist queue: no copy left", key.name)
            queue.discard(key)
            continue
        queue.in_flight.add(key)
        duration = len(payload) / bandwidth if bandwidth else 0.0
        try:
            store.write(key, payload)
        except StoreUnavailable:
            queue.in_flight.discard(key)
            n = queue.failures.get(key, 0) + 1
            queue.failures[key] = n
            queue.next_attempt[key] = now + min(queue.base_backoff * 2 ** (n - 1),
                                                queue.max_backoff)
            if n >= ALERT_AFTER_FAILURES:
                queue.alerts.append((now, key, n))
            outcomes.append(PersistOutcome(key, False, len(payload), 0.0))
            continue
        queue.mark_persisted(key)
        outcomes.append(PersistOutcome(key, True, len(payload), duration))
    return outcomes
