"""Local Outlier Factor.

Neighbourhoods are tie-inclusive: every point at distance <= k-distance is a
neighbour. Reachability distances are floored at ``EPS`` so that duplicated
points never divide by zero; a cluster of identical points therefore scores
exactly 1.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..core import ValidationError

EPS = 1e-12


def _kdist(d: np.ndarray, k: int) -> np.ndarray:
    return np.partition(d, k - 1, axis=1)[:, k - 1]


def _lrd(d: np.ndarray, kdist_ref: np.ndarray, kdist_self: np.ndarray) -> np.ndarray:
    """Local reachability density for rows of ``d`` (query x reference)."""
    mask = d <= kdist_self[:, None]
    reach = np.maximum(np.maximum(d, kdist_ref[None, :]), EPS)
    mean_reach = np.where(mask, reach, 0.0).sum(axis=1) / mask.sum(axis=1)
    return 1.0 / mean_reach


def lof_scores(points, k: int) -> np.ndarray:
    """LOF of every point within the set ``points`` (n x d)."""
    X = check_array(points, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k < n:
        raise ValidationError(f"need 1 <= k < n, got k={k}, n={n}")
    d = cdist(X, X)
    np.fill_diagonal(d, np.inf)
    kd = _kdist(d, k)
    lrd = _lrd(d, kd, kd)
    mask = d <= kd[:, None]
    return (np.where(mask, lrd[None, :], 0.0).sum(axis=1) / mask.sum(axis=1)) / lrd


class LocalOutlierFactor(OutlierMixin, BaseEstimator):
    """Novelty-mode LOF: fit on normal points, score unseen ones.

    ``score_samples`` returns the raw LOF (around 1 for inliers, larger for
    outliers); ``predict`` follows the sklearn convention of -1 for outliers.
    """

    def __init__(self, n_neighbors: int = 10, threshold: float = 1.5):
        self.n_neighbors = n_neighbors
        self.threshold = threshold

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if X.shape[0] <= self.n_neighbors:
            raise ValidationError(
                f"need more than {self.n_neighbors} reference points, got {X.shape[0]}"
            )
        d = cdist(X, X)
        np.fill_diagonal(d, np.inf)
        self.reference_ = X
        self.kdist_ = _kdist(d, self.n_neighbors)
        self.lrd_ = _lrd(d, self.kdist_, self.kdist_)
        self.n_features_in_ = X.shape[1]
        return self

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self, "reference_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        d = cdist(X, self.reference_)
        kd = _kdist(d, self.n_neighbors)
        lrd_q = _lrd(d, self.kdist_, kd)
        mask = d <= kd[:, None]
        mean_nbr = np.where(mask, self.lrd_[None, :], 0.0).sum(axis=1) / mask.sum(axis=1)
        return mean_nbr / lrd_q

    def decision_function(self, X) -> np.ndarray:
        return self.threshold - self.score_samples(X)

    def predict(self, X) -> np.ndarray:
        return np.where(self.score_samples(X) > self.threshold, -1, 1)
