"""Fault injection: independent exponential arrival processes per category."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from itertools import takewhile
from typing import Iterator

import numpy as np

from ..core import FaultCategory, ValidationError

LOG_BURST = "log_burst"
METRIC_FLATLINE = "metric_flatline"
METRIC_DROP = "metric_drop"

SIGNATURES = {
    FaultCategory.STORAGE_IO: frozenset({LOG_BURST, METRIC_DROP}),
    FaultCategory.NETWORK_COMM: frozenset({LOG_BURST, METRIC_DROP}),
    FaultCategory.NODE_HW_SW: frozenset({LOG_BURST, METRIC_FLATLINE}),
    FaultCategory.USER_CODE_ENV: frozenset({LOG_BURST, METRIC_FLATLINE}),
    FaultCategory.OTHER: frozenset({METRIC_FLATLINE}),
}


@dataclass(frozen=True)
class FaultEvent:
    at: float
    category: FaultCategory
    node: int | None = None
    detectable_by: frozenset = frozenset()

    def __post_init__(self):
        if (self.node is not None) != self.category.node_attributable:
            raise ValidationError(
                f"{self.category.value} fault must {'' if self.category.node_attributable else 'not '}"
                "name a node"
            )
        if not self.detectable_by:
            object.__setattr__(self, "detectable_by", SIGNATURES[self.category])

    def __lt__(self, other):
        return (self.at, _ORDER[self.category]) < (other.at, _ORDER[other.category])


_ORDER = {cat: i for i, cat in enumerate(FaultCategory)}


def mtbf_from_weights(overall_mtbf: float) -> dict[FaultCategory, float]:
    """Per-category MTBF so that the categories mix in the observed proportions."""
    total = sum(c.weight for c in FaultCategory)
    return {c: overall_mtbf * total / c.weight for c in FaultCategory}


def _category_stream(cat: FaultCategory, mtbf: float, nodes: int, seed_seq) -> Iterator[FaultEvent]:
    rng = np.random.default_rng(seed_seq)
    t = 0.0
    while True:
        t += rng.exponential(mtbf)
        node = int(rng.integers(nodes)) if cat.node_attributable else None
        yield FaultEvent(t, cat, node)


def iter_faults(scn) -> Iterator[FaultEvent]:
    """Unbounded, time-ordered fault stream for ``scn``.

    Each category draws from its own child seed, so adding or disabling one
    category leaves the others' arrivals untouched.
    """
    children = np.random.SeedSequence([scn.rng_seed, 0xFA17]).spawn(len(FaultCategory))
    streams = []
    for cat, child in zip(FaultCategory, children):
        mtbf = scn.fault_mtbf.get(cat, math.inf)
        if math.isfinite(mtbf):
            streams.append(_category_stream(cat, mtbf, scn.parallelism.nodes, child))
    return heapq.merge(*streams)


def build_schedule(scn, horizon: float | None = None, max_events: int | None = None
                   ) -> list[FaultEvent]:
    horizon = scn.schedule_horizon if horizon is None else horizon
    events = takewhile(lambda e: e.at < horizon, iter_faults(scn))
    out = []
    for e in events:
        out.append(e)
        if max_events is not None and len(out) >= max_events:
            break
    return out
