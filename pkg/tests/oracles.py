"""Brute-force reference implementations, written straight from the textbook
definitions in plain Python loops. They share no code with the package."""

from __future__ import annotations

import math
from fractions import Fraction

REACH_FLOOR = 1e-12


def _dist(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def lof(points, k):
    pts = [tuple(map(float, p)) for p in points]
    n = len(pts)
    dist = [[_dist(pts[i], pts[j]) for j in range(n)] for i in range(n)]

    kdist, nbrs = [], []
    for i in range(n):
        others = sorted(dist[i][j] for j in range(n) if j != i)
        kd = others[k - 1]
        kdist.append(kd)
        nbrs.append([j for j in range(n) if j != i and dist[i][j] <= kd])

    lrd = []
    for i in range(n):
        total = sum(max(dist[i][j], kdist[j], REACH_FLOOR) for j in nbrs[i])
        lrd.append(len(nbrs[i]) / total)

    return [sum(lrd[j] for j in nbrs[i]) / len(nbrs[i]) / lrd[i] for i in range(n)]


def lof_novelty(reference, queries, k):
    """LOF of unseen query points against a fixed reference set."""
    ref = [tuple(map(float, p)) for p in reference]
    n = len(ref)
    rd = [[_dist(ref[i], ref[j]) for j in range(n)] for i in range(n)]
    kdist, rlrd = [], []
    for i in range(n):
        kdist.append(sorted(rd[i][j] for j in range(n) if j != i)[k - 1])
    for i in range(n):
        nb = [j for j in range(n) if j != i and rd[i][j] <= kdist[i]]
        rlrd.append(len(nb) / sum(max(rd[i][j], kdist[j], REACH_FLOOR) for j in nb))
    out = []
    for q in queries:
        dq = [_dist(q, r) for r in ref]
        kd = sorted(dq)[k - 1]
        nb = [j for j in range(n) if dq[j] <= kd]
        lrd_q = len(nb) / sum(max(dq[j], kdist[j], REACH_FLOOR) for j in nb)
        out.append(sum(rlrd[j] for j in nb) / len(nb) / lrd_q)
    return out


def _znorm(sub):
    m = len(sub)
    mu = sum(sub) / m
    sd = math.sqrt(sum((v - mu) ** 2 for v in sub) / m)
    if sd <= 1e-10 * max(abs(mu), 1.0):
        return [0.0] * m
    return [(v - mu) / sd for v in sub]


def neighbor_profile(series, m, k):
    x = [float(v) for v in series]
    subs = [_znorm(x[i:i + m]) for i in range(len(x) - m + 1)]
    excl = math.ceil(m / 2)
    out = []
    for i, a in enumerate(subs):
        ds = sorted(_dist(a, b) for j, b in enumerate(subs) if abs(i - j) >= excl)
        out.append(ds[min(k, len(ds)) - 1])
    return out


def dtw(a, b):
    n, m = len(a), len(b)
    inf = float("inf")
    D = [[inf] * (m + 1) for _ in range(n + 1)]
    D[0][0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            D[i][j] = abs(a[i - 1] - b[j - 1]) + min(D[i - 1][j - 1], D[i - 1][j], D[i][j - 1])
    return D[n][m]


def sliding_median(x, width):
    """Centred median with boundary samples repeated."""
    h = width // 2
    n = len(x)
    out = []
    for i in range(n):
        win = [x[min(max(j, 0), n - 1)] for j in range(i - h, i + h + 1)]
        out.append(sorted(win)[h])
    return out


def trailing_median(x, width):
    """Median of each sample and the ``width - 1`` before it, first sample repeated."""
    out = []
    for i in range(len(x)):
        win = [x[max(j, 0)] for j in range(i - width + 1, i + 1)]
        out.append(sorted(win)[width // 2])
    return out


def exact_save_size(P, dp, n, w=2, o=12, gpn=8):
    """Exact bytes per rank: weights over gpn*N/DP ranks, optimizer over all ranks."""
    P = Fraction(P)
    return Fraction(w) * P * dp / (gpn * n) + Fraction(o) * P / (gpn * n)


def exact_load_latency(P, dp, n, b_mem, b_rdma):
    P, b_mem, b_rdma = Fraction(P), Fraction(b_mem), Fraction(b_rdma)
    if dp <= 8:
        return (dp + 6) * P / (4 * n * b_mem)
    return 3 * P / (2 * n * b_mem) + (dp - 8) * dp * P / (32 * n * b_rdma)
