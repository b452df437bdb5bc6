"""Turning raw traces into normalised metric windows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import median_filter as _ndi_median
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.preprocessing import MinMaxScaler

from ..core import ValidationError
from .config import DetectionConfig


def median_filter(x, width: int, axis: int = -1, causal: bool = False) -> np.ndarray:
    """Sliding median along ``axis``.

    The centred form repeats boundary samples at both edges. The causal form
    takes the median of each sample and the ``width - 1`` before it, so the
    newest value never depends on data that hasn't arrived yet.
    """
    x = np.asarray(x, dtype=np.float64)
    if width < 1 or width % 2 == 0:
        raise ValidationError("median filter width must be a positive odd number")
    if x.shape[axis] < width:
        raise ValidationError(f"{x.shape[axis]} samples is shorter than filter width {width}")
    if not causal:
        size = [1] * x.ndim
        size[axis] = width
        return _ndi_median(x, size=size, mode="nearest")
    moved = np.moveaxis(x, axis, -1)
    pad = [(0, 0)] * (moved.ndim - 1) + [(width - 1, 0)]
    padded = np.pad(moved, pad, mode="edge")
    out = np.median(sliding_window_view(padded, width, axis=-1), axis=-1)
    return np.moveaxis(out, -1, axis)


class CorrelationPruner(TransformerMixin, BaseEstimator):
    """Drops columns that are near-duplicates (|r| > limit) of an earlier column."""

    def __init__(self, limit: float = 0.95):
        self.limit = limit

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        keep = []
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.corrcoef(X, rowvar=False) if X.shape[1] > 1 else np.ones((1, 1))
        r = np.atleast_2d(r)
        for j in range(X.shape[1]):
            if all(not np.abs(r[i, j]) > self.limit for i in keep):
                keep.append(j)
        self.keep_ = np.array(keep, dtype=int)
        return self

    def transform(self, X):
        return np.asarray(X, dtype=np.float64)[:, self.keep_]


@dataclass
class MetricWindow:
    start: float
    end: float
    times: np.ndarray
    values: np.ndarray       # ranks x samples x kept columns, normalised
    columns: tuple
    rank_nodes: tuple        # node of each rank

    @property
    def points(self) -> np.ndarray:
        return self.values.reshape(-1, self.values.shape[-1])

    def series(self, column: str) -> np.ndarray:
        return self.values[:, :, self.columns.index(column)]


class Preprocessor:
    """Fitted on healthy training traces, then applied unchanged online."""

    def __init__(self, cfg: DetectionConfig):
        self.cfg = cfg

    # raw -> filtered feature cube, no normalisation
    def _features(self, trace, mask=None) -> np.ndarray:
        cols = [trace.metric_names.index(c) for c in self.cfg.feature_columns]
        cube = trace.metrics[:, :, cols] if mask is None else trace.metrics[:, mask][:, :, cols]
        cube = cube.astype(np.float64, copy=True)
        for j, name in enumerate(self.cfg.feature_columns):
            if name in self.cfg.filtered_columns:
                cube[:, :, j] = median_filter(cube[:, :, j], self.cfg.median_filter_width,
                                              axis=1, causal=True)
        return cube

    def fit(self, traces) -> "Preprocessor":
        blocks = []
        for tr in traces:
            keep = tr.times >= tr.init_end
            if keep.sum() < self.cfg.median_filter_width:
                continue
            cube = self._features(tr, keep)
            blocks.append(cube.reshape(-1, cube.shape[-1]))
        if not blocks:
            raise ValidationError("no usable training samples after dropping initialisation")
        X = np.vstack(blocks)
        self.pruner_ = CorrelationPruner(self.cfg.correlation_limit).fit(X)
        self.columns_ = tuple(self.cfg.feature_columns[j] for j in self.pruner_.keep_)
        if self.cfg.profile_column not in self.columns_:
            raise ValidationError(f"profile column {self.cfg.profile_column} was pruned")
        self.scaler_ = MinMaxScaler(clip=False).fit(self.pruner_.transform(X))
        return self

    def window(self, trace, end: float) -> MetricWindow:
        """Normalised samples in ``[end - W, end]``, filtered causally.

        Up to ``width - 1`` earlier samples prime the filter so that the first
        samples of the window see the same history as during training.
        """
        start = end - self.cfg.window_W
        live = trace.times >= trace.init_end
        inside = live & (trace.times >= start - 1e-9) & (trace.times <= end + 1e-9)
        n_in = int(inside.sum())
        if n_in < self.cfg.median_filter_width:
            raise ValidationError(
                f"window ending at {end} holds {n_in} samples, fewer than the "
                f"median filter width {self.cfg.median_filter_width}"
            )
        first = int(np.flatnonzero(inside)[0])
        lead = 0
        while lead < self.cfg.median_filter_width - 1 and first - lead - 1 >= 0 \
                and live[first - lead - 1]:
            lead += 1
        sel = np.zeros_like(inside)
        sel[first - lead:first + n_in] = True
        cube = self._features(trace, sel)[:, lead:]
        sel = inside
        R, S, _ = cube.shape
        flat = self.pruner_.transform(cube.reshape(-1, cube.shape[-1]))
        vals = self.scaler_.transform(flat).reshape(R, S, -1)
        return MetricWindow(start, end, trace.times[sel], vals, self.columns_,
                            tuple(int(n) for n in trace.node_of_ranks()))

    # -- persistence ------------------------------------------------------------

    def state(self) -> dict:
        return {
            "kept_columns": list(self.columns_),
            "kept_index": self.pruner_.keep_.tolist(),
            "data_min": self.scaler_.data_min_.tolist(),
            "data_max": self.scaler_.data_max_.tolist(),
        }

    @classmethod
    def from_state(cls, cfg: DetectionConfig, state: dict) -> "Preprocessor":
        pre = cls(cfg)
        pre.pruner_ = CorrelationPruner(cfg.correlation_limit)
        pre.pruner_.keep_ = np.array(state["kept_index"], dtype=int)
        pre.columns_ = tuple(state["kept_columns"])
        lo, hi = np.array(state["data_min"]), np.array(state["data_max"])
        pre.scaler_ = MinMaxScaler(clip=False).fit(np.vstack([lo, hi]))
        return pre
