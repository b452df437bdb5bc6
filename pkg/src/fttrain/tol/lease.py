"""Lease-based leader election against a server that keeps only an in-memory map.

Clients carry their last lease on every request, which lets a restarted server
re-grant it without any persistent state. After a restart the server refuses
new holders for one lease duration so that a lease granted before the restart
cannot overlap with a fresh one.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from ..core import ValidationError


@dataclass(frozen=True)
class Lease:
    job: str
    holder: int
    epoch: int
    expires_at: float

    def valid_at(self, now: float) -> bool:
        return now < self.expires_at


@dataclass(frozen=True)
class LeaseRequest:
    job: str
    candidate: int
    carried: Lease | None
    now: float


class ElectionPending(RuntimeError):
    """No launcher holds a valid lease yet."""


class LeaseServer:
    def __init__(self, lease_duration: float = 30.0):
        if lease_duration <= 0:
            raise ValidationError("lease_duration must be positive")
        self.lease_duration = lease_duration
        self._leases: dict[str, Lease] = {}
        self._grace_until = float("-inf")
        self.abnormal_nodes: dict[str, set[int]] = {}
        self._lock = threading.Lock()

    def restart(self, now: float) -> None:
        """Simulate a crash and restart: all in-memory state is lost."""
        with self._lock:
            self._leases.clear()
            self.abnormal_nodes.clear()
            self._grace_until = now + self.lease_duration

    def current(self, job: str, now: float) -> Lease | None:
        with self._lock:
            lease = self._leases.get(job)
            return lease if lease is not None and lease.valid_at(now) else None

    def acquire_or_renew(self, req: LeaseRequest) -> Lease | None:
        """Grant, renew or re-grant a lease; None means the request lost."""
        if not req.job or req.candidate is None or req.candidate < 0:
            raise ValidationError(f"malformed lease request {req!r}")
        if req.carried is not None and req.carried.job != req.job:
            raise ValidationError("carried lease belongs to another job")
        with self._lock:
            now = req.now
            held = self._leases.get(req.job)
            expires = now + self.lease_duration
            if held is not None and held.valid_at(now):
                if held.holder != req.candidate:
                    return None
                lease = Lease(req.job, req.candidate, held.epoch, expires)
            elif held is None and req.carried is not None:
                if req.carried.holder == req.candidate:
                    # server lost its map; trust the client's record
                    lease = Lease(req.job, req.candidate, req.carried.epoch, expires)
                elif now < self._grace_until:
                    return None
                else:
                    lease = Lease(req.job, req.candidate, req.carried.epoch + 1, expires)
            else:
                if now < self._grace_until:
                    return None
                epoch = held.epoch + 1 if held is not None else 1
                lease = Lease(req.job, req.candidate, epoch, expires)
            self._leases[req.job] = lease
            return lease

    def report_abnormal(self, job: str, nodes) -> None:
        with self._lock:
            self.abnormal_nodes.setdefault(job, set()).update(nodes)


def run_election(server: LeaseServer, job: str, contenders, now: float,
                 carried: dict[int, Lease] | None = None) -> Lease | None:
    """Contenders request in ascending id order within one tick."""
    carried = carried or {}
    winner = None
    for cand in sorted(contenders):
        lease = server.acquire_or_renew(LeaseRequest(job, cand, carried.get(cand), now))
        if lease is not None and winner is None:
            winner = lease
    return winner


def elect_roles(launchers, server: LeaseServer, job: str, now: float):
    """Return ``(master, workers)``; every launcher, master included, is a worker."""
    launchers = set(launchers)
    if not launchers:
        raise ValidationError("launcher set is empty")
    lease = server.current(job, now)
    if lease is None or lease.holder not in launchers:
        raise ElectionPending(f"no valid lease for job {job} at t={now}")
    return lease.holder, launchers
