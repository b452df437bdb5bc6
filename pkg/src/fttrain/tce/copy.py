"""Chunked, staged memory copy.

Each worker owns a disjoint region of the source and moves it through its own
bounded staging buffer one chunk at a time, standing in for a pinned host
buffer sitting between device and host memory.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from ..core import ValidationError


@dataclass(frozen=True)
class CopyPlan:
    total_bytes: int
    threads: int = 1
    chunk: int = 4 << 20

    def __post_init__(self):
        if self.total_bytes < 0:
            raise ValidationError("total_bytes must be non-negative")
        if self.threads < 1 or self.chunk < 1:
            raise ValidationError("threads and chunk must be >= 1")

    def regions(self) -> list[tuple[int, int]]:
        """Half-open byte ranges per worker; the remainder goes to the last one."""
        per = self.total_bytes // self.threads
        bounds = [(per * i, per * (i + 1)) for i in range(self.threads)]
        bounds[-1] = (bounds[-1][0], self.total_bytes)
        return bounds


def _copy_region(src: memoryview, dst: memoryview, beg: int, end: int, chunk: int) -> int:
    staging = bytearray(chunk)
    stage = memoryview(staging)
    pos = beg
    while pos < end:
        n = min(chunk, end - pos)
        stage[:n] = src[pos:pos + n]
        dst[pos:pos + n] = stage[:n]
        pos += n
    return end - beg


def chunked_staged_copy(src, plan: CopyPlan | None = None) -> bytes:
    src = memoryview(src).cast("B")
    if plan is None:
        plan = CopyPlan(len(src))
    if plan.total_bytes != len(src):
        raise ValidationError(
            f"plan covers {plan.total_bytes} bytes but source has {len(src)}"
        )
    if not len(src):
        return b""
    out = bytearray(len(src))
    dst = memoryview(out)
    regions = plan.regions()
    if plan.threads == 1:
        _copy_region(src, dst, 0, len(src), plan.chunk)
    else:
        with ThreadPoolExecutor(max_workers=plan.threads) as pool:
            copied = sum(pool.map(lambda r: _copy_region(src, dst, r[0], r[1], plan.chunk),
                                  regions))
        assert copied == len(src)
    return bytes(out)
