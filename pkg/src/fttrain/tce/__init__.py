"""Checkpoint engine: in-memory cache, ring backup, asynchronous persistence
and the analytical cost model."""

from .bench import BenchRow, bench_checkpoint, default_bench_configs
from .cache import (AdmissionError, CacheEntry, LoadResult, NodeDown, RestoreImpossible,
                    RingTopology, TCECluster, Transfer)
from .copy import CopyPlan, chunked_staged_copy
from .keys import CheckpointKey, ShardKind
from .perf import (PerfModelInputs, cached_save_latency, direct_save_latency, load_latency,
                   max_save_size, node_restore_latency, save_gain)
from .reconcile import PersistQueue, reconcile
from .store import (CheckpointNotFound, DirectoryStore, MemoryStore, StoreUnavailable,
                    sha256)

__all__ = [
    "AdmissionError", "BenchRow", "CacheEntry", "CheckpointKey", "CheckpointNotFound",
    "CopyPlan", "DirectoryStore", "LoadResult", "MemoryStore", "NodeDown", "PerfModelInputs",
    "PersistQueue", "RestoreImpossible", "RingTopology", "ShardKind", "StoreUnavailable",
    "TCECluster", "Transfer", "bench_checkpoint", "cached_save_latency", "chunked_staged_copy",
    "default_bench_configs", "direct_save_latency", "load_latency", "max_save_size",
    "node_restore_latency", "reconcile", "save_gain", "sha256",
]
