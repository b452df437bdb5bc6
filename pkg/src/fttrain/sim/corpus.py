"""Labelled trace corpora for detector training and evaluation."""

from __future__ import annotations

import numpy as np

from ..core import FaultCategory
from .schedule import FaultEvent
from .traces import generate_traces

# anomaly categories for an 11-trace corpus, every category represented
ANOMALY_MIX = (
    FaultCategory.STORAGE_IO, FaultCategory.NETWORK_COMM, FaultCategory.NODE_HW_SW,
    FaultCategory.USER_CODE_ENV, FaultCategory.OTHER,
    FaultCategory.STORAGE_IO, FaultCategory.NETWORK_COMM, FaultCategory.NODE_HW_SW,
    FaultCategory.USER_CODE_ENV, FaultCategory.USER_CODE_ENV, FaultCategory.OTHER,
)


def normal_traces(scn, count: int, *, duration: float = 3 * 3600.0, seed: int = 0) -> list:
    return [generate_traces(scn, (), start=0.0, end=duration, nodes=(0, 1), seed=seed + i,
                            label="normal")
            for i in range(count)]


def anomalous_traces(scn, count: int, *, duration: float = 3 * 3600.0, seed: int = 0,
                     window: float = 1800.0) -> list:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xBAD]))
    out = []
    for i in range(count):
        cat = ANOMALY_MIX[i % len(ANOMALY_MIX)]
        lo = scn.trace.init_prefix + window + 600.0
        at = float(rng.uniform(lo, duration - 1200.0))
        node = int(rng.integers(2)) if cat.node_attributable else None
        ev = FaultEvent(at, cat, node)
        out.append(generate_traces(scn, [ev], start=0.0, end=duration, nodes=(0, 1),
                                   seed=seed + 1000 + i, label=f"anomalous:{cat.value}"))
    return out


def detection_corpus(scn, n_normal: int = 13, n_anomalous: int = 11, *, seed: int = 0,
                     duration: float = 3 * 3600.0):
    """``(normal, anomalous)`` trace lists drawn from disjoint seeds."""
    return (normal_traces(scn, n_normal, duration=duration, seed=seed),
            anomalous_traces(scn, n_anomalous, duration=duration, seed=seed))
