"""Windowed detection: per-detector verdicts, aggregation and localisation."""

from __future__ import annotations

import csv
import io
import json
import threading
from dataclasses import dataclass, field

import numpy as np

from ..core import ConfigError, ValidationError
from .config import Aggregation, DetectionConfig, Detector
from .logs import LineClassifier, LogWindow, log_window
from .preprocess import MetricWindow

LOG_SOURCE = "LogDetector"


@dataclass(frozen=True)
class DetectorVerdict:
    source: str
    anomalous: bool
    score: float | None
    implicated_ranks: frozenset = frozenset()


def aggregate(flags, mode: Aggregation) -> bool:
    flags = list(flags)
    if not flags:
        raise ConfigError("no detectors enabled")
    if Aggregation(mode) is Aggregation.ANY:
        return any(flags)
    return sum(bool(f) for f in flags) > len(flags) / 2


def log_detection(lt: LogWindow, thd: int) -> DetectorVerdict:
    cnt = lt.err_cnt
    anomalous = cnt > thd
    ranks = frozenset()
    if anomalous and lt.first_error_node is not None:
        ranks = frozenset(r for r, n in enumerate(lt.rank_nodes) if n == lt.first_error_node)
    return DetectorVerdict(LOG_SOURCE, anomalous, float(cnt), ranks)


def _lof_verdict(mt: MetricWindow, models) -> DetectorVerdict:
    R, S, D = mt.values.shape
    scores = models.lof.score_samples(mt.points).reshape(R, S)
    per_rank = scores.max(axis=1)
    thr = models.lof.threshold
    flagged = frozenset(int(r) for r in np.flatnonzero(per_rank > thr))
    return DetectorVerdict(Detector.LOF.value, bool(flagged), float(per_rank.max()), flagged)


def _np_verdict(mt: MetricWindow, models, cfg: DetectionConfig) -> DetectorVerdict:
    series = mt.series(cfg.profile_column)
    per_rank = models.nprofile.score_samples(series)
    flagged = frozenset(int(r) for r in np.flatnonzero(per_rank > models.nprofile.threshold))
    return DetectorVerdict(Detector.NPROFILE.value, bool(flagged), float(per_rank.max()), flagged)


def _dtw_verdict(mt: MetricWindow, models, cfg: DetectionConfig) -> DetectorVerdict:
    series = mt.series(cfg.profile_column)
    per_rank = models.dtw.score_samples(series)
    flagged = frozenset(int(r) for r in np.flatnonzero(per_rank > models.dtw.threshold_))
    return DetectorVerdict(Detector.DTW_CLUSTER.value, bool(flagged), float(per_rank.max()), flagged)


def detector_verdicts(mt: MetricWindow, models, cfg: DetectionConfig) -> list[DetectorVerdict]:
    if not cfg.enabled_detectors:
        raise ConfigError("no detectors enabled")
    if mt.values.shape[-1] != len(models.preprocessor.columns_):
        raise ValidationError("window dimensions do not match the model")
    out = []
    for det in sorted(cfg.enabled_detectors, key=lambda d: d.value):
        if det is Detector.LOF:
            out.append(_lof_verdict(mt, models))
        elif det is Detector.NPROFILE:
            out.append(_np_verdict(mt, models, cfg))
        else:
            out.append(_dtw_verdict(mt, models, cfg))
    return out


def metric_detection(mt: MetricWindow, models, cfg: DetectionConfig,
                     verdicts: list[DetectorVerdict] | None = None) -> DetectorVerdict:
    verdicts = detector_verdicts(mt, models, cfg) if verdicts is None else verdicts
    anomalous = aggregate((v.anomalous for v in verdicts), cfg.aggregation)
    ranks = frozenset().union(*(v.implicated_ranks for v in verdicts if v.anomalous))
    score = float(sum(v.anomalous for v in verdicts))
    return DetectorVerdict("Metric", anomalous, score, ranks if anomalous else frozenset())


@dataclass(frozen=True)
class DetectionResult:
    window_end: float
    anomalous: bool
    log: DetectorVerdict
    metric: DetectorVerdict
    detectors: tuple
    implicated_nodes: frozenset = frozenset()
    job: str = "job"

    def row(self) -> dict:
        row = {
            "window_end_time": self.window_end,
            "job": self.job,
            "verdict": "anomalous" if self.anomalous else "normal",
            "log_err_cnt": self.log.score,
        }
        for v in self.detectors:
            row[f"{v.source}_score"] = v.score
            row[f"{v.source}_flag"] = v.anomalous
        row["implicated_nodes"] = " ".join(str(n) for n in sorted(self.implicated_nodes))
        return row


def localize(lt: LogWindow, log_v: DetectorVerdict, metric_v: DetectorVerdict,
             rank_nodes, lead: float) -> frozenset:
    """Nodes blamed for an anomaly.

    The node that logged errors first is trusted when it leads every other
    erroring node by at least ``lead`` seconds; near-simultaneous errors
    everywhere point at the job itself, not a node. Otherwise nodes named by
    the metric detectors are used when they are a strict minority.
    """
    firsts = lt.first_error_by_node()
    if log_v.anomalous and firsts:
        first = lt.first_error_node
        others = [t for n, t in firsts.items() if n != first]
        if all(t - firsts[first] >= lead for t in others):
            return frozenset({first})
    all_nodes = set(rank_nodes)
    nodes = {rank_nodes[r] for r in metric_v.implicated_ranks}
    if metric_v.anomalous and nodes and len(nodes) < len(all_nodes) / 2:
        return frozenset(nodes)
    return frozenset()


def detect_window(lt: LogWindow, mt: MetricWindow, models, cfg: DetectionConfig,
                  history: "DetectionHistory | None" = None, job: str = "job") -> DetectionResult:
    if abs(lt.end - mt.end) > 1e-6 or abs(lt.start - mt.start) > 1e-6:
        raise ValidationError("log and metric windows cover different intervals")
    log_v = log_detection(lt, cfg.log_threshold_thd)
    verdicts = detector_verdicts(mt, models, cfg)
    metric_v = metric_detection(mt, models, cfg, verdicts)
    anomalous = log_v.anomalous or metric_v.anomalous
    nodes = localize(lt, log_v, metric_v, mt.rank_nodes, cfg.localization_lead) if anomalous \
        else frozenset()
    result = DetectionResult(mt.end, anomalous, log_v, metric_v, tuple(verdicts), nodes, job)
    if history is not None:
        history.append(result)
    return result


class DetectionHistory:
    """Append-only series of detection results."""

    def __init__(self):
        self._rows: list[DetectionResult] = []
        self._lock = threading.Lock()

    def append(self, result: DetectionResult) -> None:
        with self._lock:
            if self._rows and result.window_end < self._rows[-1].window_end \
                    and result.job == self._rows[-1].job:
                raise ValidationError("history is append-only in time order per job")
            self._rows.append(result)

    def __len__(self):
        return len(self._rows)

    def __iter__(self):
        return iter(list(self._rows))

    def to_csv(self) -> str:
        rows = [r.row() for r in self._rows]
        buf = io.StringIO()
        if rows:
            fields = list(dict.fromkeys(k for r in rows for k in r))
            w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps([r.row() for r in self._rows], indent=2)


@dataclass
class TraceDetection:
    """All windows evaluated over one trace."""

    results: list = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return any(r.anomalous for r in self.results)

    @property
    def first_flag(self) -> DetectionResult | None:
        return next((r for r in self.results if r.anomalous), None)


def window_ends(trace, cfg: DetectionConfig, stride: float | None = None,
                start: float | None = None) -> np.ndarray:
    stride = cfg.window_W if stride is None else stride
    first = trace.init_end + cfg.window_W if start is None else start
    if first > trace.end:
        return np.empty(0)
    return np.arange(first, trace.end + 1e-9, stride)


def detect_trace(trace, models, cfg: DetectionConfig | None = None, *, stride: float | None = None,
                 history: DetectionHistory | None = None, job: str = "job",
                 stop_at_first: bool = False, start: float | None = None) -> TraceDetection:
    cfg = models.config if cfg is None else cfg
    if tuple(cfg.feature_columns) != tuple(models.config.feature_columns):
        raise ValidationError(
            f"config features {list(cfg.feature_columns)} do not match the model's "
            f"{list(models.config.feature_columns)}"
        )
    clf = LineClassifier(cfg.error_patterns)
    out = TraceDetection()
    for end in window_ends(trace, cfg, stride, start):
        mt = models.preprocessor.window(trace, float(end))
        lt = log_window(trace, float(end), cfg.window_W, clf)
        res = detect_window(lt, mt, models, cfg, history, job)
        out.results.append(res)
        if stop_at_first and res.anomalous:
            break
    return out
