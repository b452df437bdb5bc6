"""Anomaly detection over metric and log traces."""

from .config import DEFAULT_ERROR_PATTERNS, Aggregation, DetectionConfig, Detector
from .detect import (
    DetectionHistory, DetectionResult, DetectorVerdict, TraceDetection, aggregate,
    detect_trace, detect_window, detector_verdicts, localize, log_detection, metric_detection,
    window_ends,
)
from .dtw import DTWPeerCluster, dtw_distance, pairwise_dtw, peer_scores
from .lof import LocalOutlierFactor, lof_scores
from .logs import ClassifiedLine, LineClassifier, LogWindow, log_window
from .nprofile import NeighborProfile, neighbor_profile, znormalize
from .preprocess import CorrelationPruner, MetricWindow, Preprocessor, median_filter
from .training import (
    ModelRegistry, TrainedModels, TrainingError, evaluate, offline_train, synthetic_anomalies,
)
