"""Tasks the master hands to workers, and their simulated execution."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ..core import ValidationError
from .lease import LeaseServer


class TaskKind(enum.Enum):
    WARMUP = "warmup"
    USER_TRAINING = "user_training"
    ERROR_CHECK = "error_check"

    @property
    def subtasks(self) -> tuple[str, ...]:
        return _SUBTASKS[self]


_SUBTASKS = {
    TaskKind.WARMUP: ("disk_check", "gpu_burn", "connectivity_check"),
    TaskKind.USER_TRAINING: ("train",),
    TaskKind.ERROR_CHECK: ("disk_check", "gpu_burn", "comm_test", "anomaly_query"),
}

DEFAULT_DURATIONS = {
    "disk_check": 30.0,
    "gpu_burn": 120.0,
    "connectivity_check": 30.0,
    "comm_test": 90.0,
    "anomaly_query": 5.0,
    "train": 0.0,
}


@dataclass
class NodeHealth:
    """Ground truth about nodes, used to decide sub-task outcomes.

    ``failing`` maps a node to the sub-tasks it fails; ``hung`` nodes never
    answer and run into the task timeout.
    """

    failing: dict[int, set[str]] = field(default_factory=dict)
    hung: set[int] = field(default_factory=set)

    def fails(self, node: int, subtask: str) -> bool:
        return subtask in self.failing.get(node, ())

    def clear(self, node: int) -> None:
        self.failing.pop(node, None)
        self.hung.discard(node)


@dataclass(frozen=True)
class TaskResult:
    worker: int
    passed: bool
    failed_subtasks: tuple[str, ...]
    duration: float
    timed_out: bool = False

    @property
    def suspect(self) -> bool:
        return self.timed_out


@dataclass(frozen=True)
class DispatchOutcome:
    task: TaskKind
    results: dict[int, TaskResult]
    barrier_time: float

    @property
    def failed_workers(self) -> set[int]:
        return {w for w, r in self.results.items() if not r.passed}


class NotMaster(RuntimeError):
    pass


def dispatch_and_collect(
    master: int,
    task: TaskKind,
    workers,
    health: NodeHealth | None = None,
    *,
    job: str = "job",
    server: LeaseServer | None = None,
    now: float = 0.0,
    durations: dict[str, float] | None = None,
    timeout: float = 300.0,
) -> DispatchOutcome:
    """Run ``task`` on every worker and wait at a barrier for all results.

    Sub-tasks run sequentially on each worker; a worker still busy at
    ``timeout`` is marked as failing (timeouts point at sick nodes).
    """
    if server is not None:
        lease = server.current(job, now)
        if lease is None or lease.holder != master:
            raise NotMaster(f"launcher {master} does not hold the lease for {job}")
    workers = sorted(set(workers))
    if not workers:
        raise ValidationError("no workers to dispatch to")
    health = health or NodeHealth()
    durations = {**DEFAULT_DURATIONS, **(durations or {})}
    results = {}
    for w in workers:
        if w in health.hung:
            results[w] = TaskResult(w, False, task.subtasks, timeout, timed_out=True)
            continue
        elapsed = 0.0
        failed = []
        for sub in task.subtasks:
            elapsed += durations[sub]
            if health.fails(w, sub):
                failed.append(sub)
        if elapsed > timeout:
            results[w] = TaskResult(w, False, tuple(failed) or ("timeout",), timeout,
                                    timed_out=True)
        else:
            results[w] = TaskResult(w, not failed, tuple(failed), elapsed)
    barrier = max(r.duration for r in results.values())
    return DispatchOutcome(task, results, barrier)
