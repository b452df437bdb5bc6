"""In-memory checkpoint cache replicated around a ring of nodes.

Every node runs a cache server. Saves are acknowledged once the shard sits in
local memory; a backup tick later copies it to the successor node and a
reconciler persists it to the store in the background. Loads are served from
the local cache, then from whichever peer holds the shard or its backup, and
only then from the store.

Time is simulated: each operation takes ``now`` and returns the latency it
would have cost under the configured bandwidths.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field

from ..core import BandwidthConfig, ValidationError
from .copy import CopyPlan, chunked_staged_copy
from .keys import CheckpointKey
from .reconcile import PersistQueue, reconcile
from .store import BaseStore, CheckpointNotFound, MemoryStore, StoreUnavailable, sha256

log = logging.getLogger(__name__)


class AdmissionError(RuntimeError):
    """The cache cannot hold the entry even after eviction."""


class RestoreImpossible(RuntimeError):
    """The successor of a failed node is gone, so its backups are gone too."""


class NodeDown(RuntimeError):
    pass


@dataclass
class CacheEntry:
    key: CheckpointKey
    payload: bytes
    created_at: float
    digest: str
    persisted: bool = False
    backed_up: bool = False

    @property
    def size(self) -> int:
        return len(self.payload)


@dataclass
class BackupEntry:
    owner_pos: int
    payload: bytes
    digest: str
    created_at: float


@dataclass(frozen=True)
class Transfer:
    kind: str
    src: int | None
    dst: int | None
    key: CheckpointKey
    nbytes: int
    duration: float
    at: float


@dataclass(frozen=True)
class LoadResult:
    payload: bytes
    source: str
    latency: float
    joined: bool = False


class RingTopology:
    def __init__(self, nodes):
        self.nodes = list(nodes)
        if len(set(self.nodes)) != len(self.nodes) or not self.nodes:
            raise ValidationError("ring needs a nonempty list of distinct nodes")

    def __len__(self):
        return len(self.nodes)

    def position(self, node: int) -> int:
        return self.nodes.index(node)

    def successor(self, node: int) -> int:
        i = self.position(node)
        return self.nodes[(i + 1) % len(self.nodes)]

    def predecessor(self, node: int) -> int:
        i = self.position(node)
        return self.nodes[(i - 1 + len(self.nodes)) % len(self.nodes)]

    @property
    def backup_enabled(self) -> bool:
        return len(self.nodes) >= 2

    def replace(self, old: int, new: int) -> None:
        if new in self.nodes:
            raise ValidationError(f"node {new} already in ring")
        self.nodes[self.position(old)] = new


@dataclass
class CacheServer:
    node: int
    memory_limit: int | None = None
    max_cycles: int | None = None
    alive: bool = True
    entries: dict[CheckpointKey, CacheEntry] = field(default_factory=dict)
    backups: dict[CheckpointKey, BackupEntry] = field(default_factory=dict)
    queue: PersistQueue = field(default_factory=PersistQueue)

    @property
    def usage(self) -> int:
        return sum(e.size for e in self.entries.values())

    def steps_by_age(self) -> list[int]:
        first_seen: dict[int, float] = {}
        for e in self.entries.values():
            t = first_seen.get(e.key.step)
            if t is None or e.created_at < t:
                first_seen[e.key.step] = e.created_at
        return sorted(first_seen, key=lambda s: (first_seen[s], s))


class TCECluster:
    """Cache servers for one job plus the shared persistent store."""

    def __init__(
        self,
        nodes,
        bandwidths: BandwidthConfig | None = None,
        store: BaseStore | None = None,
        memory_limit: int | None = None,
        max_cycles: int | None = None,
        copy_threads: int = 1,
        copy_chunk: int = 1 << 20,
    ):
        self.ring = RingTopology(nodes)
        self.bandwidths = bandwidths or BandwidthConfig()
        self.store = store if store is not None else MemoryStore()
        self.memory_limit = memory_limit
        self.max_cycles = max_cycles
        self.copy_threads = copy_threads
        self.copy_chunk = copy_chunk
        self.servers: dict[int, CacheServer] = {
            n: self._new_server(n) for n in self.ring.nodes
        }
        self.latest_digest: dict[CheckpointKey, str] = {}
        self.transfers: list[Transfer] = []
        self.ops: list[tuple[str, int, str, int, float, str]] = []
        self._in_flight: dict[tuple[int, CheckpointKey], tuple[float, str]] = {}
        self.source_counts: Counter[str] = Counter()

    def _new_server(self, node):
        return CacheServer(node, self.memory_limit, self.max_cycles)

    def server(self, node: int) -> CacheServer:
        srv = self.servers.get(node)
        if srv is None:
            raise ValidationError(f"node {node} is not part of the ring")
        if not srv.alive:
            raise NodeDown(f"node {node} is down")
        return srv

    # -- save ---------------------------------------------------------------

    def save(self, node: int, key: CheckpointKey, payload, now: float = 0.0) -> float:
        """Cache ``payload`` on ``node`` and return the acknowledgment latency."""
        srv = self.server(node)
        if not len(payload):
            raise ValidationError("payload must be nonempty")
        if self.memory_limit is not None and len(payload) > self.memory_limit:
            raise AdmissionError(
                f"{key.name}: {len(payload)} bytes exceeds memory limit {self.memory_limit}"
            )
        plan = CopyPlan(len(payload), self.copy_threads, self.copy_chunk)
        data = chunked_staged_copy(payload, plan)
        digest = sha256(data)
        previous = srv.entries.get(key)
        srv.entries[key] = CacheEntry(key, data, now, digest)
        self.evict(node, now, protect_step=key.step)
        if self.memory_limit is not None and srv.usage > self.memory_limit:
            if previous is None:
                del srv.entries[key]
            else:
                srv.entries[key] = previous
            raise AdmissionError(f"{key.name}: no room even after eviction")

        self.latest_digest[key] = digest
        srv.queue.enqueue(key)
        if self.ring.backup_enabled:
            # control message: the successor's copy of the old version is stale
            succ = self.servers[self.ring.successor(node)]
            if succ.alive:
                succ.backups.pop(key, None)
        latency = len(data) / self.bandwidths.b_mem
        self._record("save", node, key, len(data), latency, "cache")
        return latency

    # -- load ---------------------------------------------------------------

    def _fresh(self, key, digest):
        return digest == self.latest_digest.get(key)

    def _peer_holding(self, node: int, key: CheckpointKey):
        for other in self.ring.nodes:
            if other == node:
                continue
            srv = self.servers[other]
            if not srv.alive:
                continue
            e = srv.entries.get(key)
            if e is not None and self._fresh(key, e.digest):
                return other, e.payload
        for other in self.ring.nodes:
            srv = self.servers[other]
            if not srv.alive or other == node:
                continue
            b = srv.backups.get(key)
            if b is not None and self._fresh(key, b.digest):
                return other, b.payload
        return None, None

    def load(self, node: int, key: CheckpointKey, now: float = 0.0) -> LoadResult:
        srv = self.server(node)
        e = srv.entries.get(key)
        if e is not None and self._fresh(key, e.digest):
            latency = e.size / self.bandwidths.b_mem
            self.source_counts["cache"] += 1
            self._record("load", node, key, e.size, latency, "cache")
            return LoadResult(e.payload, "cache", latency)
        b = srv.backups.get(key)
        if b is not None and self._fresh(key, b.digest):
            latency = len(b.payload) / self.bandwidths.b_mem
            self.source_counts["cache"] += 1
            self._record("load", node, key, len(b.payload), latency, "cache")
            return LoadResult(b.payload, "cache", latency)

        pending = self._in_flight.get((node, key))
        if pending is not None and pending[0] > now:
            done_at, source = pending
            payload = self._remote_payload(node, key, source)
            if payload is not None:
                self.source_counts[source] += 1
                self._record("load", node, key, len(payload), done_at - now, source)
                return LoadResult(payload, source, done_at - now, joined=True)

        peer, payload = self._peer_holding(node, key)
        if payload is not None:
            source, latency = "peer", len(payload) / self.bandwidths.b_rdma
        else:
            if self.store.digest(key) is None or (
                key in self.latest_digest and not self._fresh(key, self.store.digest(key))
            ):
                raise CheckpointNotFound(key.name)
            payload = self.store.read(key)
            peer, source, latency = None, "store", len(payload) / self.bandwidths.b_nas
        self._in_flight[(node, key)] = (now + latency, source)
        self.transfers.append(Transfer("load_" + source, peer, node, key, len(payload),
                                       latency, now))
        self.source_counts[source] += 1
        self._record("load", node, key, len(payload), latency, source)
        return LoadResult(payload, source, latency)

    def _remote_payload(self, node, key, source):
        if source == "peer":
            return self._peer_holding(node, key)[1]
        if self.store.contains(key) and self._fresh(key, self.store.digest(key)):
            return self.store.read(key)
        return None

    @property
    def remote_transfer_count(self) -> int:
        return sum(1 for t in self.transfers if t.kind.startswith("load_"))

    # -- ring backup ----------------------------------------------------------

    def backup_tick(self, now: float = 0.0) -> list[Transfer]:
        events = []
        if not self.ring.backup_enabled:
            return events
        for node in self.ring.nodes:
            srv = self.servers[node]
            if not srv.alive:
                continue
            succ = self.servers[self.ring.successor(node)]
            if not succ.alive:
                log.info("successor of node %d unreachable; backup deferred", node)
                continue
            pos = self.ring.position(node)
            for key in sorted(srv.entries):
                e = srv.entries[key]
                if e.backed_up:
                    continue
                succ.backups[key] = BackupEntry(pos, e.payload, e.digest, e.created_at)
                e.backed_up = True
                t = Transfer("backup", node, succ.node, key, e.size,
                             e.size / self.bandwidths.b_rdma, now)
                events.append(t)
        self.transfers.extend(events)
        return events

    # -- failures -------------------------------------------------------------

    def fail_node(self, node: int) -> None:
        srv = self.servers[node]
        srv.alive = False
        srv.entries.clear()
        srv.backups.clear()
        srv.queue = PersistQueue()
        if self.ring.backup_enabled:
            pred = self.servers[self.ring.predecessor(node)]
            for e in pred.entries.values():
                e.backed_up = False
        self._in_flight = {k: v for k, v in self._in_flight.items() if k[0] != node}

    def recover_node(self, failed: int, replacement: int, now: float = 0.0,
                     restore: bool = True) -> list[CheckpointKey]:
        """Bring ``replacement`` into ``failed``'s ring slot and rebuild its cache.

        The replacement pulls the failed node's backups from the successor,
        then the predecessor re-sends its own entries so the new node again
        holds its backups. Returns the restored keys.
        """
        if self.servers[failed].alive:
            raise ValidationError(f"node {failed} has not failed")
        pos = self.ring.position(failed)
        succ_node = self.ring.successor(failed)
        succ_ok = succ_node != failed and self.servers[succ_node].alive
        if restore and self.ring.backup_enabled and not succ_ok:
            raise RestoreImpossible(
                f"successor {succ_node} of failed node {failed} is also down"
            )
        self.ring.replace(failed, replacement)
        del self.servers[failed]
        new = self._new_server(replacement)
        self.servers[replacement] = new

        restored = []
        if restore and self.ring.backup_enabled:
            succ = self.servers[succ_node]
            for key in sorted(succ.backups):
                b = succ.backups[key]
                if b.owner_pos != pos or not self._fresh(key, b.digest):
                    continue
                persisted = self.store.digest(key) == b.digest
                new.entries[key] = CacheEntry(key, b.payload, b.created_at, b.digest,
                                              persisted=persisted, backed_up=True)
                if not persisted:
                    new.queue.enqueue(key)
                self.transfers.append(Transfer("restore", succ_node, replacement, key,
                                               len(b.payload),
                                               len(b.payload) / self.bandwidths.b_rdma, now))
                restored.append(key)

        pred = self.servers[self.ring.predecessor(replacement)]
        if self.ring.backup_enabled and pred.alive and pred.node != replacement:
            ppos = self.ring.position(pred.node)
            for key in sorted(pred.entries):
                e = pred.entries[key]
                new.backups[key] = BackupEntry(ppos, e.payload, e.digest, e.created_at)
                e.backed_up = True
                self.transfers.append(Transfer("rebackup", pred.node, replacement, key,
                                               e.size, e.size / self.bandwidths.b_rdma, now))
        self.evict(replacement, now)
        return restored

    # -- eviction ---------------------------------------------------------------

    def _sync_persist(self, srv: CacheServer, e: CacheEntry) -> bool:
        try:
            self.store.write(e.key, e.payload)
        except StoreUnavailable:
            return False
        e.persisted = True
        srv.queue.mark_persisted(e.key)
        self._record("sync_persist", srv.node, e.key, e.size,
                     e.size / self.bandwidths.b_nas, "store")
        return True

    def _drop(self, srv: CacheServer, step: int) -> list[CheckpointKey]:
        gone = sorted(k for k in srv.entries if k.step == step)
        succ = None
        if self.ring.backup_enabled:
            succ = self.servers[self.ring.successor(srv.node)]
        for k in gone:
            e = srv.entries.pop(k)
            # persisted shards no longer need an in-memory backup
            if e.persisted and succ is not None and succ.alive:
                succ.backups.pop(k, None)
        return gone

    def evict(self, node: int, now: float = 0.0, protect_step: int | None = None
              ) -> list[CheckpointKey]:
        """Apply the retention policy on ``node``; oldest whole steps go first.

        Entries that exist nowhere else are only evicted under memory pressure,
        and only after being written synchronously to the store.
        """
        srv = self.server(node)
        evicted: list[CheckpointKey] = []
        if srv.max_cycles is not None:
            steps = srv.steps_by_age()
            excess = len(steps) - srv.max_cycles
            for step in steps[:max(excess, 0)]:
                if step == protect_step:
                    continue
                if all(e.persisted or e.backed_up
                       for e in srv.entries.values() if e.key.step == step):
                    evicted += self._drop(srv, step)
        if srv.memory_limit is not None:
            for step in srv.steps_by_age():
                if srv.usage <= srv.memory_limit:
                    break
                if step == protect_step:
                    continue
                unsafe = [e for e in srv.entries.values()
                          if e.key.step == step and not (e.persisted or e.backed_up)]
                if all(self._sync_persist(srv, e) for e in unsafe):
                    evicted += self._drop(srv, step)
        for k in evicted:
            self._record("evict", node, k, 0, 0.0, "cache")
        return evicted

    # -- persistence ----------------------------------------------------------

    def _payload_for(self, srv: CacheServer):
        def lookup(key):
            e = srv.entries.get(key)
            if e is not None and self._fresh(key, e.digest):
                return e.payload
            if self.ring.backup_enabled:
                succ = self.servers[self.ring.successor(srv.node)]
                b = succ.backups.get(key) if succ.alive else None
                if b is not None and self._fresh(key, b.digest):
                    return b.payload
            return None
        return lookup

    def reconcile(self, now: float = 0.0):
        outcomes = []
        for node in self.ring.nodes:
            srv = self.servers[node]
            if not srv.alive:
                continue
            results = reconcile(srv.queue, self.store, self._payload_for(srv), now,
                                self.bandwidths.b_nas)
            for r in results:
                if not r.ok:
                    continue
                e = srv.entries.get(r.key)
                if e is not None:
                    e.persisted = True
                elif self.ring.backup_enabled:
                    succ = self.servers[self.ring.successor(node)]
                    if succ.alive:
                        succ.backups.pop(r.key, None)
                self._record("persist", node, r.key, r.nbytes, r.duration, "store")
            outcomes += results
        return outcomes

    # -- introspection --------------------------------------------------------

    def cached_keys(self) -> set[CheckpointKey]:
        """Keys whose latest version sits in some live cache or backup."""
        out = set()
        for srv in self.servers.values():
            if not srv.alive:
                continue
            for k, e in srv.entries.items():
                if self._fresh(k, e.digest):
                    out.add(k)
            for k, b in srv.backups.items():
                if self._fresh(k, b.digest):
                    out.add(k)
        return out

    def holders(self, key: CheckpointKey) -> set[str | int]:
        """Every location holding the latest version: node ids and/or ``"store"``."""
        where: set[str | int] = set()
        for srv in self.servers.values():
            if not srv.alive:
                continue
            e = srv.entries.get(key)
            if e is not None and self._fresh(key, e.digest):
                where.add(srv.node)
            b = srv.backups.get(key)
            if b is not None and self._fresh(key, b.digest):
                where.add(srv.node)
        if self.store.digest(key) is not None and self._fresh(key, self.store.digest(key)):
            where.add("store")
        return where

    def _record(self, op, node, key, nbytes, latency, source):
        self.ops.append((op, node, key.name, nbytes, latency, source))

    def export_metrics(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["op", "node", "key", "bytes", "latency_s", "source"])
            w.writerows(self.ops)
