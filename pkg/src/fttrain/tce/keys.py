from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

from ..core import ValidationError

_JOB_RE = re.compile(r"^[A-Za-z0-9_]+$")


class ShardKind(enum.Enum):
    # values sort in the same order as the members are declared
    OPTIMIZER_STATE = "optim"
    WEIGHTS = "weights"


@dataclass(frozen=True, order=True)
class CheckpointKey:
    """Identity of one rank's checkpoint shard at one training step.

    ``name`` is zero padded so that lexicographic order of names equals the
    tuple order of ``(job, step, rank, kind)``.
    """

    job: str
    step: int
    rank: int
    kind: ShardKind = field(compare=False)
    _kind_order: str = field(init=False, repr=False)

    def __post_init__(self):
        if not _JOB_RE.match(self.job):
            raise ValidationError(f"job id must match [A-Za-z0-9_]+, got {self.job!r}")
        if self.step < 0 or self.rank < 0:
            raise ValidationError("step and rank must be non-negative")
        object.__setattr__(self, "_kind_order", self.kind.value)

    @property
    def name(self) -> str:
        return f"{self.job}/{self.step:012d}/{self.rank:06d}/{self.kind.value}"

    @property
    def relpath(self) -> str:
        return f"{self.job}/{self.step}/{self.rank}-{self.kind.value}"

    @classmethod
    def from_name(cls, name: str) -> "CheckpointKey":
        try:
            job, step, rank, kind = name.split("/")
            return cls(job, int(step), int(rank), ShardKind(kind))
        except ValueError as exc:
            raise ValidationError(f"malformed checkpoint name {name!r}") from exc
