"""Checkpoint benchmark: run saves and loads through the cache simulation and
compare the simulated latencies with the analytical model.

Real shards are tens of gigabytes, so the payload is shrunk by a factor and
every bandwidth is shrunk by the same factor. Simulated latencies are then
unchanged while the bytes actually copied stay small.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..core import BandwidthConfig, ModelSpec, ParallelismConfig
from .cache import TCECluster
from .keys import CheckpointKey, ShardKind
from .perf import (PerfModelInputs, cached_save_latency, direct_save_latency,
                   load_latency, max_save_size, save_gain)
from .store import MemoryStore

DEFAULT_MAX_PAYLOAD = 4 << 20


@dataclass(frozen=True)
class BenchRow:
    config: str
    metric: str
    measured: float
    predicted: float

    @property
    def rel_error(self) -> float:
        if self.predicted == 0:
            return 0.0 if self.measured == 0 else float("inf")
        return abs(self.measured - self.predicted) / abs(self.predicted)


def _payload(nbytes: int, tag: int) -> bytes:
    return bytes((tag + i) % 251 for i in range(min(nbytes, 251))) * (nbytes // 251 + 1)


def bench_checkpoint(inp: PerfModelInputs, name: str = "config",
                     max_payload: int = DEFAULT_MAX_PAYLOAD) -> list[BenchRow]:
    shard = max_save_size(inp)
    scale = min(1.0, max_payload / shard)
    bw = inp.bandwidths.scaled(scale)
    g = inp.parallelism.gpus_per_node
    dp, n = inp.parallelism.dp, inp.parallelism.nodes

    tce = TCECluster([0, 1], bw, MemoryStore())
    if dp <= g:
        parts = [(ShardKind.OPTIMIZER_STATE, shard, 0)]
    else:
        # optimizer share stays local, weights owned elsewhere come from a peer
        P, o, w = inp.model.param_count, inp.model.optimizer_bytes_per_param, \
            inp.model.weight_bytes_per_param
        parts = [(ShardKind.OPTIMIZER_STATE, o * P / (g * n), 0),
                 (ShardKind.WEIGHTS, w * (dp - g) * dp * P / (g * g * n), 1)]

    save_ack = persist = load = 0.0
    saved_bytes = 0
    for kind, size, owner in parts:
        nbytes = max(1, round(size * scale))
        key = CheckpointKey("bench", 1, 0, kind)
        save_ack += tce.save(owner, key, _payload(nbytes, owner)[:nbytes])
        saved_bytes += nbytes
    for out in tce.reconcile():
        persist += out.duration
    for kind, _, _ in parts:
        load += tce.load(0, CheckpointKey("bench", 1, 0, kind)).latency

    measured_size = saved_bytes / scale
    rows = [
        BenchRow(name, "shard_bytes", measured_size, shard),
        BenchRow(name, "cached_save_s", save_ack, cached_save_latency(inp)),
        BenchRow(name, "direct_save_s", persist, direct_save_latency(inp)),
        BenchRow(name, "load_s", load, load_latency(inp)),
        BenchRow(name, "save_speedup", persist / save_ack, save_gain(inp)),
    ]
    return rows


def default_bench_configs() -> dict[str, PerfModelInputs]:
    bw = BandwidthConfig()
    return {
        "gpt175b_128r_dp8": PerfModelInputs(ModelSpec(175e9), ParallelismConfig(8, 2, 8, 16), bw),
        "toy_1m_1n": PerfModelInputs(ModelSpec(1e6), ParallelismConfig(8, 1, 1, 1), bw),
    }

