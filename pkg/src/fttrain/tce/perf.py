"""Analytical checkpoint cost model.

All byte counts are per rank. Arithmetic is carried out in exact rationals and
rounded once, so closed-form and general-form evaluations agree bit-for-bit
whenever the true value is representable.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from ..core import BandwidthConfig, ModelSpec, ParallelismConfig


@dataclass(frozen=True)
class PerfModelInputs:
    model: ModelSpec
    parallelism: ParallelismConfig
    bandwidths: BandwidthConfig


def _q(x) -> Fraction:
    return Fraction(x)


def _save_size_exact(inp: PerfModelInputs) -> Fraction:
    P = _q(inp.model.param_count)
    w = _q(inp.model.weight_bytes_per_param)
    o = _q(inp.model.optimizer_bytes_per_param)
    dp, n = inp.parallelism.dp, inp.parallelism.nodes
    gpn = inp.parallelism.gpus_per_node
    # weights are sharded over (gpn*N)/DP ranks, optimizer state over all gpn*N ranks
    return w * P * dp / (gpn * n) + o * P / (gpn * n)


def max_save_size(inp: PerfModelInputs) -> float:
    """Largest checkpoint shard written by one rank, in bytes.

    With the default factors (2 bytes/param weights, 12 bytes/param optimizer
    state) this reduces to ``(DP + 6) * P / (4 * N)``.
    """
    return float(_save_size_exact(inp))


def save_gain(inp: PerfModelInputs) -> float:
    return inp.bandwidths.b_mem / inp.bandwidths.b_nas


def load_latency(inp: PerfModelInputs) -> float:
    """Seconds for one rank to reload its shard through the cache.

    For ``DP <= 8`` (one node's worth of GPUs) every shard is local and the
    cost is the shard size over memory bandwidth. Beyond that the optimizer
    share is still local while the weights owned by other nodes arrive over the
    fabric; the two branches are kept exactly as derived and are not
    continuous at ``DP == 8``.
    """
    b = inp.bandwidths
    dp, n = inp.parallelism.dp, inp.parallelism.nodes
    g = inp.parallelism.gpus_per_node
    if dp <= g:
        return float(_save_size_exact(inp) / _q(b.b_mem))
    P = _q(inp.model.param_count)
    w = _q(inp.model.weight_bytes_per_param)
    o = _q(inp.model.optimizer_bytes_per_param)
    local = o * P / (g * n * _q(b.b_mem))
    remote = w * (dp - g) * dp * P / (g * g * n * _q(b.b_rdma))
    return float(local + remote)


def direct_save_latency(inp: PerfModelInputs) -> float:
    """Synchronous write of one shard straight to network storage."""
    return float(_save_size_exact(inp) / _q(inp.bandwidths.b_nas))


def node_restore_latency(inp: PerfModelInputs) -> float:
    """Seconds for a replacement node to pull its ranks' shards from the ring peer."""
    gpn = inp.parallelism.gpus_per_node
    return float(_save_size_exact(inp) * gpn / _q(inp.bandwidths.b_rdma))


def cached_save_latency(inp: PerfModelInputs) -> float:
    """Acknowledgement time of a save into host memory; persistence happens later."""
    return float(_save_size_exact(inp) / _q(inp.bandwidths.b_mem))
