"""Dynamic time warping and peer-consistency clustering of ranks."""

from __future__ import annotations

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..core import ValidationError


@njit(cache=True)
def _dtw(a, b):
    n, m = a.shape[0], b.shape[0]
    prev = np.full(m + 1, np.inf)
    cur = np.empty(m + 1)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur[0] = np.inf
        for j in range(1, m + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = abs(a[i - 1] - b[j - 1]) + best
        prev, cur = cur, prev
    return prev[m]


def dtw_distance(a, b) -> float:
    """Classic DTW with absolute-difference cost and match/insert/delete steps."""
    a = np.ascontiguousarray(a, dtype=np.float64).ravel()
    b = np.ascontiguousarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValidationError("DTW needs nonempty series")
    return float(_dtw(a, b))


def pairwise_dtw(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = _dtw(X[i], X[j])
    return out


def peer_scores(X, k: int) -> np.ndarray:
    """Mean DTW distance from each series to its ``k`` nearest peers."""
    d = pairwise_dtw(X)
    n = d.shape[0]
    if n < 2:
        raise ValidationError("need at least two series to compare peers")
    k = min(k, n - 1)
    np.fill_diagonal(d, np.inf)
    return np.sort(d, axis=1)[:, :k].mean(axis=1)


class DTWPeerCluster(OutlierMixin, BaseEstimator):
    """Flags ranks whose behaviour drifts away from their nearest peers.

    ``fit`` takes a list of healthy windows (each ranks x samples) and sets
    the threshold to ``margin`` times the largest peer score seen, never below
    ``min_threshold``.
    """

    def __init__(self, n_neighbors: int = 3, margin: float = 1.5, min_threshold: float = 1e-6):
        self.n_neighbors = n_neighbors
        self.margin = margin
        self.min_threshold = min_threshold

    def fit(self, windows, y=None):
        worst = 0.0
        for w in windows:
            w = check_array(w, dtype=np.float64)
            worst = max(worst, float(peer_scores(w, self.n_neighbors).max()))
        self.threshold_ = max(self.margin * worst, self.min_threshold)
        return self

    def score_samples(self, X) -> np.ndarray:
        return peer_scores(check_array(X, dtype=np.float64), self.n_neighbors)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "threshold_")
        return np.where(self.score_samples(X) > self.threshold_, -1, 1)
