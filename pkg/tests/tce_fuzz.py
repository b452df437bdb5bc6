"""Randomised operation schedules against the checkpoint cache, with the
expected outcome tracked by a model that only remembers the last bytes saved
for each key."""

from __future__ import annotations

import hashlib
import random

from fttrain.core import BandwidthConfig
from fttrain.tce import (CheckpointKey, CheckpointNotFound, MemoryStore, ShardKind, TCECluster)


def _digest(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def _payload(rnd: random.Random) -> bytes:
    return rnd.randbytes(rnd.randint(1, 64))


def integrity_schedule(seed: int, n_ops: int = 60) -> dict:
    """Every successful load must return the last bytes saved for that key."""
    rnd = random.Random(seed)
    n = rnd.randint(2, 5)
    store = MemoryStore()
    tce = TCECluster(list(range(n)), BandwidthConfig(), store,
                     memory_limit=rnd.choice([None, 200, 400]),
                     max_cycles=rnd.choice([None, 1, 2, 3]))
    latest: dict[CheckpointKey, str] = {}
    next_node = n
    loads = mismatches = 0
    t = 0.0
    for _ in range(n_ops):
        t += 1.0
        op = rnd.choice(["save", "save", "tick", "fail", "evict", "reconcile", "load", "load"])
        alive = [x for x in tce.ring.nodes if tce.servers[x].alive]
        if op == "save":
            node = rnd.choice(alive)
            k = CheckpointKey("fz", rnd.randint(1, 4), tce.ring.position(node),
                              rnd.choice(list(ShardKind)))
            data = _payload(rnd)
            try:
                tce.save(node, k, data, now=t)
            except Exception:  # admission refused: nothing changed
                continue
            latest[k] = _digest(data)
        elif op == "tick":
            tce.backup_tick(now=t)
        elif op == "fail":
            victim = rnd.choice(alive)
            tce.fail_node(victim)
            tce.recover_node(victim, next_node, now=t)
            next_node += 1
        elif op == "evict":
            tce.evict(rnd.choice(alive), now=t)
        elif op == "reconcile":
            store.down = rnd.random() < 0.2
            tce.reconcile(now=t)
            store.down = False
        elif op == "load" and latest:
            k = rnd.choice(sorted(latest))
            try:
                res = tce.load(rnd.choice(alive), k, now=t)
            except CheckpointNotFound:
                continue
            loads += 1
            mismatches += _digest(res.payload) != latest[k]
    return {"loads": loads, "mismatches": mismatches}


def durability_schedule(seed: int) -> dict:
    """Single failure at least one backup tick after the last save."""
    rnd = random.Random(seed)
    n = rnd.randint(2, 6)
    store = MemoryStore()
    tce = TCECluster(list(range(n)), BandwidthConfig(), store)
    owner: dict[CheckpointKey, int] = {}
    latest: dict[CheckpointKey, str] = {}
    t = 0.0
    for _ in range(rnd.randint(1, 30)):
        t += 1.0
        op = rnd.choice(["save", "save", "save", "tick", "reconcile"])
        if op == "save":
            pos = rnd.randrange(n)
            node = tce.ring.nodes[pos]
            k = CheckpointKey("dur", rnd.randint(1, 3), pos, rnd.choice(list(ShardKind)))
            data = _payload(rnd)
            tce.save(node, k, data, now=t)
            owner[k], latest[k] = pos, _digest(data)
        elif op == "tick":
            tce.backup_tick(now=t)
        else:
            tce.reconcile(now=t)
    for _ in range(rnd.randint(1, 3)):
        t += 1.0
        tce.backup_tick(now=t)
    victim = rnd.choice(tce.ring.nodes)
    tce.fail_node(victim)
    tce.recover_node(victim, 100 + victim, now=t)
    from_store = mismatches = 0
    for k in sorted(latest):
        node = tce.ring.nodes[owner[k]]
        res = tce.load(node, k, now=t + 1.0)
        from_store += res.source == "store"
        mismatches += _digest(res.payload) != latest[k]
    return {"loads": len(latest), "from_store": from_store, "mismatches": mismatches}


def _fresh_locations(tce: TCECluster, latest: dict) -> dict:
    """Where each key's latest bytes physically sit: node ids and/or 'store'."""
    where = {k: set() for k in latest}
    for node, srv in tce.servers.items():
        if not srv.alive:
            continue
        for k, e in srv.entries.items():
            if k in latest and _digest(e.payload) == latest[k]:
                where[k].add(node)
        for k, b in srv.backups.items():
            if k in latest and _digest(b.payload) == latest[k]:
                where[k].add(node)
    for k in latest:
        if tce.store.contains(k) and _digest(tce.store.read(k)) == latest[k]:
            where[k].add("store")
    return where


def adjacent_failure_schedule(seed: int) -> dict:
    """Two neighbours fail together; exactly the unprotected entries disappear."""
    rnd = random.Random(seed)
    n = rnd.randint(3, 6)
    store = MemoryStore()
    tce = TCECluster(list(range(n)), BandwidthConfig(), store)
    latest: dict[CheckpointKey, str] = {}
    t = 0.0
    for _ in range(rnd.randint(2, 30)):
        t += 1.0
        op = rnd.choice(["save", "save", "tick", "reconcile"])
        if op == "save":
            pos = rnd.randrange(n)
            k = CheckpointKey("adj", rnd.randint(1, 3), pos, rnd.choice(list(ShardKind)))
            data = _payload(rnd)
            tce.save(pos, k, data, now=t)
            latest[k] = _digest(data)
        elif op == "tick":
            tce.backup_tick(now=t)
        else:
            tce.reconcile(now=t)
    first = rnd.randrange(n)
    second = tce.ring.successor(first)
    # expected loss from entry flags alone: an entry survives if it was
    # persisted, or backed up to a node that stays alive
    expected = set()
    for node in (first, second):
        srv = tce.servers[node]
        for k, e in srv.entries.items():
            if _digest(e.payload) != latest[k]:
                continue
            safe_backup = e.backed_up and tce.ring.successor(node) not in (first, second)
            if not e.persisted and not safe_backup:
                expected.add(k)
    expected = {k for k in expected
                if not any(loc not in (first, second)
                           for loc in _fresh_locations(tce, latest)[k])}
    tce.fail_node(first)
    tce.fail_node(second)
    lost = {k for k, locs in _fresh_locations(tce, latest).items() if not locs}
    unloadable = set()
    survivor = next(x for x in tce.ring.nodes if x not in (first, second))
    for k in latest:
        try:
            res = tce.load(survivor, k, now=t + 1.0)
            assert _digest(res.payload) == latest[k]
        except CheckpointNotFound:
            unloadable.add(k)
    return {"expected": expected, "lost": lost, "unloadable": unloadable}


def run_all(n: int = 1000, seed: int = 0) -> dict:
    totals = {"schedules": 0, "loads": 0, "mismatches": 0, "store_fallthrough": 0,
              "adjacent_exact": 0}
    for i in range(n):
        s = seed * 1_000_003 + i
        a = integrity_schedule(s)
        b = durability_schedule(s)
        c = adjacent_failure_schedule(s)
        totals["schedules"] += 1
        totals["loads"] += a["loads"] + b["loads"]
        totals["mismatches"] += a["mismatches"] + b["mismatches"]
        totals["store_fallthrough"] += b["from_store"]
        totals["adjacent_exact"] += c["expected"] == c["lost"] == c["unloadable"]
    return totals
