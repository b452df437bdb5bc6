"""Per-job launcher lifecycle, error checking and recovery decisions."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

from ..core import ValidationError
from .lease import ElectionPending, Lease, LeaseServer, elect_roles, run_election
from .states import IllegalTransition, LauncherState, Transition, TransitionLog, is_legal
from .tasks import DispatchOutcome, NodeHealth, TaskKind, dispatch_and_collect

log = logging.getLogger(__name__)
S = LauncherState


class RecoveryAction(enum.Enum):
    LOCAL_RESTART = "LocalRestart"
    EVICT_AND_RESCHEDULE = "EvictAndReschedule"


@dataclass(frozen=True)
class RecoveryDecision:
    abnormal_nodes: frozenset[int]
    action: RecoveryAction
    anti_affinity: frozenset[int]
    replacements: tuple[int, ...] = ()
    waiting_capacity: bool = False


class DetectionUnavailable(RuntimeError):
    pass


class InsufficientCapacity(RuntimeError):
    pass


class NodePool:
    """Free nodes the operator may place replacement launchers on."""

    def __init__(self, nodes=()):
        self.free = sorted(set(nodes))

    def allocate(self, count: int, exclude) -> list[int]:
        exclude = set(exclude)
        usable = [n for n in self.free if n not in exclude]
        if len(usable) < count:
            raise InsufficientCapacity(f"need {count} nodes, {len(usable)} usable")
        chosen = usable[:count]
        self.free = [n for n in self.free if n not in chosen]
        return chosen


@dataclass
class Launcher:
    id: int
    state: LauncherState = S.LAUNCH
    lease: Lease | None = None

    @property
    def node(self) -> int:
        return self.id


@dataclass
class Job:
    """Launchers of one training job plus the master's bookkeeping.

    Launcher ids equal the node they run on; a replacement launcher gets the
    id of its fresh node.
    """

    job_id: str
    nodes: list[int]
    server: LeaseServer = field(default_factory=LeaseServer)
    pool: NodePool = field(default_factory=NodePool)
    durations: dict[str, float] | None = None
    task_timeout: float = 300.0
    transitions: TransitionLog = field(default_factory=TransitionLog)
    anti_affinity: set[int] = field(default_factory=set)
    condition: str = "OK"
    degraded_polls: int = 0
    master: int | None = None
    pending_replacements: int = 0
    last_lease: Lease | None = None

    def __post_init__(self):
        if not self.nodes:
            raise ValidationError("a job needs at least one node")
        self.launchers: dict[int, Launcher] = {n: Launcher(n) for n in self.nodes}
        self.retired: dict[int, Launcher] = {}

    # -- state machine ----------------------------------------------------------

    def transition(self, lid: int, dst: LauncherState, now: float, cause: str) -> None:
        launcher = self.launchers[lid]
        src = launcher.state
        if not is_legal(src, dst):
            raise IllegalTransition(f"launcher {lid}: {src.value} -> {dst.value}")
        launcher.state = dst
        self.transitions.append(Transition(now, self.job_id, lid, src, dst, cause))
        if dst is S.TERMINATED:
            self.retired[lid] = self.launchers.pop(lid)

    def transition_all(self, dst: LauncherState, now: float, cause: str,
                       ids=None) -> None:
        for lid in sorted(self.launchers if ids is None else ids):
            self.transition(lid, dst, now, cause)

    def status(self) -> dict[int, LauncherState]:
        out = {lid: l.state for lid, l in self.retired.items()}
        out.update({lid: l.state for lid, l in self.launchers.items()})
        return dict(sorted(out.items()))

    @property
    def states(self) -> set[LauncherState]:
        return {l.state for l in self.launchers.values()}

    # -- roles ------------------------------------------------------------------

    def elect(self, now: float) -> int:
        # every launcher carries the newest lease it has seen so epochs survive
        # a server restart even when the old holder is gone
        carried = {lid: l.lease or self.last_lease for lid, l in self.launchers.items()}
        carried = {lid: v for lid, v in carried.items() if v is not None}
        lease = run_election(self.server, self.job_id, self.launchers, now, carried)
        current = self.server.current(self.job_id, now)
        if current is not None:
            self.last_lease = current
        if current is not None and current.holder in self.launchers:
            self.launchers[current.holder].lease = current
        elif lease is None:
            raise ElectionPending(self.job_id)
        self.master, _ = elect_roles(self.launchers, self.server, self.job_id, now)
        return self.master

    def election_delay(self, now: float) -> float:
        """Time until a live launcher can win the lease."""
        current = self.server.current(self.job_id, now)
        if current is None or current.holder in self.launchers:
            return 0.0
        return current.expires_at - now

    def dispatch(self, task: TaskKind, health: NodeHealth | None, now: float) -> DispatchOutcome:
        return dispatch_and_collect(
            self.master, task, self.launchers, health, job=self.job_id, server=self.server,
            now=now, durations=self.durations, timeout=self.task_timeout,
        )

    # -- lifecycle --------------------------------------------------------------

    def start(self, now: float, health: NodeHealth | None = None) -> float:
        """Warm up every launcher in LAUNCH and enter EXECUTION. Returns elapsed time."""
        if not self.launchers:
            raise IllegalTransition(f"job {self.job_id} is terminated")
        launching = [lid for lid, l in self.launchers.items() if l.state is S.LAUNCH]
        if not launching:
            raise IllegalTransition(f"job {self.job_id} has no launcher in LAUNCH")
        self.transition_all(S.WARMUP, now, "start", launching)
        delay = self.election_delay(now)
        self.elect(now + delay)
        outcome = self.dispatch(TaskKind.WARMUP, health, now + delay)
        t = now + delay + outcome.barrier_time
        bad = outcome.failed_workers
        if bad:
            log.info("warm-up failed on %s", sorted(bad))
            self.anti_affinity |= bad
            self.server.report_abnormal(self.job_id, bad)
            try:
                fresh = self.pool.allocate(len(bad), self.anti_affinity | set(self.launchers))
            except InsufficientCapacity:
                self.condition = "WAITING_CAPACITY"
                return t - now
            self.transition_all(S.TERMINATED, t, "warmup_failed", bad)
            for n in fresh:
                self.launchers[n] = Launcher(n)
            return t - now + self.start(t, health)
        self.transition_all(S.EXECUTION, t, "warmup_passed",
                            [lid for lid, l in self.launchers.items() if l.state is S.WARMUP])
        return t - now

    def stop(self, now: float, cause: str = "user_stop") -> None:
        self.transition_all(S.TERMINATED, now, cause)

    def poll_anomaly(self, detection_service, window_end: float) -> str:
        """Ask the detection service about the latest window.

        On an anomaly every launcher moves to CHECKING; an unreachable service
        leaves the job running and counts a degraded poll.
        """
        if S.EXECUTION not in self.states:
            raise IllegalTransition("polling requires a job in EXECUTION")
        try:
            verdict = detection_service(window_end)
        except DetectionUnavailable:
            self.degraded_polls += 1
            log.warning("detection service unavailable (%d)", self.degraded_polls)
            return "normal"
        anomalous = getattr(verdict, "anomalous", verdict)
        if not anomalous:
            return "normal"
        self.transition_all(S.CHECKING, window_end, "anomaly_detected")
        return "anomalous"

    def error_check(self, health: NodeHealth | None, now: float) -> DispatchOutcome:
        if S.CHECKING not in self.states:
            raise IllegalTransition("error check is only dispatched from CHECKING")
        return self.dispatch(TaskKind.ERROR_CHECK, health, now)

    def decide_recovery(self, check: DispatchOutcome, located_nodes, now: float
                        ) -> RecoveryDecision:
        if any(l.state is not S.CHECKING for l in self.launchers.values()):
            raise IllegalTransition("recovery is decided from CHECKING")
        abnormal = set(check.failed_workers) | (set(located_nodes) & set(self.launchers))
        if not abnormal:
            self.transition_all(S.RECOVER_LOCAL, now, "no_abnormal_nodes")
            return RecoveryDecision(frozenset(), RecoveryAction.LOCAL_RESTART,
                                    frozenset(self.anti_affinity))

        self.anti_affinity |= abnormal
        self.server.report_abnormal(self.job_id, abnormal)
        healthy = [lid for lid in self.launchers if lid not in abnormal]
        self.transition_all(S.TERMINATED, now, "evicted", abnormal)
        self.transition_all(S.RECOVER_RESCHEDULE, now, "reschedule", healthy)
        try:
            fresh = self.pool.allocate(len(abnormal), self.anti_affinity | set(self.launchers))
        except InsufficientCapacity:
            self.condition = "WAITING_CAPACITY"
            self.pending_replacements = len(abnormal)
            log.warning("job %s waiting for capacity", self.job_id)
            return RecoveryDecision(frozenset(abnormal), RecoveryAction.EVICT_AND_RESCHEDULE,
                                    frozenset(self.anti_affinity), (), True)
        self.transition_all(S.LAUNCH, now, "relaunch", healthy)
        for n in fresh:
            self.launchers[n] = Launcher(n)
        self.condition = "OK"
        return RecoveryDecision(frozenset(abnormal), RecoveryAction.EVICT_AND_RESCHEDULE,
                                frozenset(self.anti_affinity), tuple(fresh))

    def retry_allocation(self, now: float) -> tuple[int, ...]:
        """Place replacements once capacity appears; raises if still short."""
        if self.condition != "WAITING_CAPACITY":
            return ()
        fresh = self.pool.allocate(self.pending_replacements,
                                   self.anti_affinity | set(self.launchers))
        waiting = [lid for lid, l in self.launchers.items() if l.state is S.RECOVER_RESCHEDULE]
        self.transition_all(S.LAUNCH, now, "relaunch", waiting)
        for n in fresh:
            self.launchers[n] = Launcher(n)
        self.condition = "OK"
        self.pending_replacements = 0
        return tuple(fresh)

    def resume_local(self, now: float) -> None:
        self.transition_all(S.EXECUTION, now, "local_restart")

    # -- persistence for the CLI session ------------------------------------------

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "nodes": self.nodes,
            "free_nodes": self.pool.free,
            "launchers": {str(k): v.value for k, v in self.status().items()},
            "anti_affinity": sorted(self.anti_affinity),
            "condition": self.condition,
            "transitions": [
                [t.time, t.job, t.launcher, t.src.value, t.dst.value, t.cause]
                for t in self.transitions
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Job":
        job = cls(doc["job_id"], list(doc["nodes"]), pool=NodePool(doc.get("free_nodes", ())))
        job.launchers, job.retired = {}, {}
        for k, v in doc["launchers"].items():
            target = job.retired if v == S.TERMINATED.value else job.launchers
            target[int(k)] = Launcher(int(k), S(v))
        job.anti_affinity = set(doc.get("anti_affinity", ()))
        job.condition = doc.get("condition", "OK")
        job.transitions = TransitionLog(
            Transition(t[0], t[1], t[2], S(t[3]), S(t[4]), t[5]) for t in doc["transitions"]
        )
        return job
