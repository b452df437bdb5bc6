"""Shared domain vocabulary: model and parallelism parameters, bandwidths,
identifiers and the fault taxonomy."""

from __future__ import annotations

import enum
import operator
from dataclasses import dataclass

GiB = 1024**3
MB = 10**6


class ValidationError(ValueError):
    """Raised when an input violates a documented contract."""


class ConfigError(ValidationError):
    """Raised for configurations that cannot be executed."""


@dataclass(frozen=True)
class ModelSpec:
    param_count: float
    weight_bytes_per_param: float = 2.0
    optimizer_bytes_per_param: float = 12.0

    def __post_init__(self):
        if not self.param_count > 0:
            raise ValidationError(f"param_count must be positive, got {self.param_count}")
        if not (self.weight_bytes_per_param > 0 and self.optimizer_bytes_per_param > 0):
            raise ValidationError("byte factors must be positive")


@dataclass(frozen=True)
class ParallelismConfig:
    tp: int
    pp: int
    dp: int
    nodes: int
    gpus_per_node: int = 8

    def __post_init__(self):
        for name in ("tp", "pp", "dp", "nodes", "gpus_per_node"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValidationError(f"{name} must be an integer >= 1, got {value!r}")
        if self.dp * self.pp * self.tp != self.world_size:
            raise ValidationError(
                f"dp*pp*tp = {self.dp * self.pp * self.tp} does not equal "
                f"gpus_per_node*nodes = {self.world_size}"
            )
        if self.dp > self.gpus_per_node and self.dp % self.gpus_per_node:
            raise ValidationError(
                f"dp={self.dp} exceeds gpus_per_node={self.gpus_per_node} "
                "and is not a multiple of it"
            )

    @property
    def world_size(self) -> int:
        return self.nodes * self.gpus_per_node


@dataclass(frozen=True)
class BandwidthConfig:
    """Bytes/second. ``b_mem`` and ``b_nas`` are per rank, ``b_rdma`` per node."""

    b_mem: float = 20 * GiB
    b_nas: float = 71.1 * MB
    b_rdma: float = 25e9

    def __post_init__(self):
        if not (self.b_mem > 0 and self.b_nas > 0 and self.b_rdma > 0):
            raise ValidationError("bandwidths must be strictly positive")

    def scaled(self, factor: float) -> "BandwidthConfig":
        return BandwidthConfig(self.b_mem * factor, self.b_nas * factor, self.b_rdma * factor)


class FaultCategory(enum.Enum):
    STORAGE_IO = "StorageIO"
    NETWORK_COMM = "NetworkComm"
    NODE_HW_SW = "NodeHardwareSoftware"
    USER_CODE_ENV = "UserCodeEnv"
    OTHER = "Other"

    @property
    def cause(self) -> str:
        return _CAUSES[self]

    @property
    def node_attributable(self) -> bool:
        return self in (FaultCategory.STORAGE_IO, FaultCategory.NETWORK_COMM,
                        FaultCategory.NODE_HW_SW)

    @property
    def weight(self) -> int:
        """Number of affected tasks observed over one quarter."""
        return _WEIGHTS[self]


_CAUSES = {
    FaultCategory.STORAGE_IO: "socket timeout while waiting on storage",
    FaultCategory.NETWORK_COMM: "NET/IB: Got completion from peer with error",
    FaultCategory.NODE_HW_SW: "GPU ECC error",
    FaultCategory.USER_CODE_ENV: "torch.cuda.OutOfMemoryError",
    FaultCategory.OTHER: "system hang without error output",
}

_WEIGHTS = {
    FaultCategory.STORAGE_IO: 34,
    FaultCategory.NETWORK_COMM: 43,
    FaultCategory.NODE_HW_SW: 66,
    FaultCategory.USER_CODE_ENV: 179,
    FaultCategory.OTHER: 55,
}


def category_proportions() -> dict[FaultCategory, float]:
    total = sum(_WEIGHTS.values())
    return {cat: w / total for cat, w in _WEIGHTS.items()}


def rank_to_node(rank: int, cfg: ParallelismConfig) -> int:
    try:
        rank = operator.index(rank)
    except TypeError:
        raise ValidationError(f"rank must be an integer, got {rank!r}") from None
    if not 0 <= rank < cfg.world_size:
        raise ValidationError(f"rank {rank} outside [0, {cfg.world_size})")
    return rank // cfg.gpus_per_node


def node_ranks(node: int, gpus_per_node: int) -> range:
    return range(node * gpus_per_node, (node + 1) * gpus_per_node)
