from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass


class LauncherState(enum.Enum):
    LAUNCH = "LAUNCH"
    WARMUP = "WARMUP"
    EXECUTION = "EXECUTION"
    CHECKING = "CHECKING"
    RECOVER_LOCAL = "RECOVER_LOCAL"
    RECOVER_RESCHEDULE = "RECOVER_RESCHEDULE"
    TERMINATED = "TERMINATED"


S = LauncherState

LEGAL_TRANSITIONS: dict[LauncherState, frozenset[LauncherState]] = {
    S.LAUNCH: frozenset({S.WARMUP, S.TERMINATED}),
    S.WARMUP: frozenset({S.EXECUTION, S.TERMINATED}),
    S.EXECUTION: frozenset({S.CHECKING, S.TERMINATED}),
    S.CHECKING: frozenset({S.RECOVER_LOCAL, S.RECOVER_RESCHEDULE, S.TERMINATED}),
    S.RECOVER_LOCAL: frozenset({S.EXECUTION, S.TERMINATED}),
    S.RECOVER_RESCHEDULE: frozenset({S.LAUNCH, S.TERMINATED}),
    S.TERMINATED: frozenset(),
}


class IllegalTransition(RuntimeError):
    pass


def is_legal(src: LauncherState, dst: LauncherState) -> bool:
    return dst in LEGAL_TRANSITIONS[src]


@dataclass(frozen=True)
class Transition:
    time: float
    job: str
    launcher: int
    src: LauncherState
    dst: LauncherState
    cause: str


class TransitionLog(list):
    """Append-only record of launcher state changes."""

    FIELDS = ("time", "job", "launcher", "from_state", "to_state", "cause")

    def replay_ok(self) -> bool:
        last: dict[tuple[str, int], LauncherState] = {}
        for t in self:
            prev = last.get((t.job, t.launcher), t.src)
            if prev != t.src or not is_legal(t.src, t.dst):
                return False
            last[(t.job, t.launcher)] = t.dst
        return True

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.FIELDS)
        for t in self:
            w.writerow([f"{t.time:.6f}", t.job, t.launcher, t.src.value, t.dst.value, t.cause])
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())

    @classmethod
    def from_csv(cls, path) -> "TransitionLog":
        out = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                out.append(Transition(float(row["time"]), row["job"], int(row["launcher"]),
                                      S(row["from_state"]), S(row["to_state"]), row["cause"]))
        return out
