"""k-nearest-neighbour matrix profile ("neighbor profile").

For every subsequence of length ``m`` the profile holds the z-normalised
Euclidean distance to its k-th nearest neighbour, skipping trivial matches
that start within ``ceil(m / 2)`` samples of it. Large values mark discords.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..core import ValidationError

# subsequences whose std falls below this (relative to their scale) are constant
FLAT_TOL = 1e-10


def exclusion_radius(m: int) -> int:
    return math.ceil(m / 2)


def znormalize(subs: np.ndarray) -> np.ndarray:
    mu = subs.mean(axis=1, keepdims=True)
    sd = subs.std(axis=1, keepdims=True)
    scale = np.maximum(np.abs(mu), 1.0)
    flat = sd <= FLAT_TOL * scale
    out = np.where(flat, 0.0, (subs - mu) / np.where(flat, 1.0, sd))
    return out


def neighbor_profile(series, subseq_len: int, k: int = 1) -> np.ndarray:
    """Profile values, one per subsequence start.

    When fewer than ``k`` non-trivial neighbours exist the farthest available
    one is used.
    """
    x = np.asarray(series, dtype=np.float64).ravel()
    m = int(subseq_len)
    if m < 2 or x.size < 2 * m:
        raise ValidationError(f"series of length {x.size} too short for subseq_len={m}")
    if k < 1:
        raise ValidationError("k must be >= 1")
    z = znormalize(sliding_window_view(x, m))
    d = cdist(z, z)
    n = d.shape[0]
    idx = np.arange(n)
    d[np.abs(idx[:, None] - idx[None, :]) < exclusion_radius(m)] = np.inf
    d.sort(axis=1)
    avail = np.isfinite(d).sum(axis=1)
    col = np.minimum(k, avail) - 1
    return d[idx, col]


class NeighborProfile(OutlierMixin, BaseEstimator):
    """Flags series whose largest profile value exceeds ``threshold``.

    ``X`` is a 2-D array with one series per row (e.g. one rank's metric
    column over a detection window).
    """

    def __init__(self, subseq_len: int = 12, k: int = 2, threshold: float = 3.0):
        self.subseq_len = subseq_len
        self.k = k
        self.threshold = threshold

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        self.train_max_ = float(self.transform(X).max()) if len(X) else 0.0
        return self

    def transform(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float64)
        return np.vstack([neighbor_profile(row, self.subseq_len, self.k) for row in X])

    def score_samples(self, X) -> np.ndarray:
        return self.transform(X).max(axis=1)

    def argmax_location(self, X) -> np.ndarray:
        return self.transform(X).argmax(axis=1)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "n_features_in_")
        return np.where(self.score_samples(X) > self.threshold, -1, 1)
