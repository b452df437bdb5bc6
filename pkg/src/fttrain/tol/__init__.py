"""Launcher lifecycle, leader election and recovery decisions."""

from .job import (DetectionUnavailable, InsufficientCapacity, Job, Launcher, NodePool,
                  RecoveryAction, RecoveryDecision)
from .lease import ElectionPending, Lease, LeaseRequest, LeaseServer, elect_roles, run_election
from .states import (LEGAL_TRANSITIONS, IllegalTransition, LauncherState, Transition,
                     TransitionLog, is_legal)
from .tasks import (DEFAULT_DURATIONS, DispatchOutcome, NodeHealth, NotMaster, TaskKind,
                    TaskResult, dispatch_and_collect)

__all__ = [
    "DEFAULT_DURATIONS", "DetectionUnavailable", "DispatchOutcome", "ElectionPending",
    "IllegalTransition", "InsufficientCapacity", "Job", "LEGAL_TRANSITIONS", "Launcher",
    "LauncherState", "Lease", "LeaseRequest", "LeaseServer", "NodeHealth", "NodePool",
    "NotMaster", "RecoveryAction", "RecoveryDecision", "TaskKind", "TaskResult", "Transition",
    "TransitionLog", "dispatch_and_collect", "elect_roles", "is_legal", "run_election",
]
