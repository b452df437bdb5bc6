"""Detection configuration."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, replace

from ..core import ConfigError


class Detector(enum.Enum):
    LOF = "LOF"
    NPROFILE = "NProfile"
    DTW_CLUSTER = "DTWCluster"


class Aggregation(enum.Enum):
    MAJORITY = "MajorityOfEnabled"
    ANY = "AnyOfEnabled"


DEFAULT_ERROR_PATTERNS = (
    r"socket timeout",
    r"ECC error",
    r"OutOfMemoryError",
    r"NET/IB",
    r"NCCL (error|WARN)",
    r"collective operation timeout",
    r"CUDA error",
    r"Node not ready",
    r"Traceback \(most recent call last\)",
)


@dataclass(frozen=True)
class DetectionConfig:
    window_W: float = 1800.0
    log_threshold_thd: int = 5
    median_filter_width: int = 3
    lof_k: int = 10
    lof_threshold: float = 1.5
    np_subseq_len: int = 12
    np_k: int = 2
    np_threshold: float = 3.0
    cluster_k: int = 3
    enabled_detectors: frozenset = frozenset({Detector.LOF, Detector.NPROFILE})
    aggregation: Aggregation = Aggregation.ANY
    sample_interval: float = 30.0
    feature_columns: tuple = ("gpu_util", "ib_traffic", "nvlink_traffic")
    filtered_columns: tuple = ("ib_traffic", "nvlink_traffic")
    profile_column: str = "gpu_util"
    error_patterns: tuple = DEFAULT_ERROR_PATTERNS
    correlation_limit: float = 0.95
    threshold_margin: float = 1.5
    lof_reference_size: int = 1500
    # a log-first node is trusted for localisation only with this much lead
    localization_lead: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "enabled_detectors",
                           frozenset(Detector(d) for d in self.enabled_detectors))
        object.__setattr__(self, "aggregation", Aggregation(self.aggregation))
        if not self.window_W > 0:
            raise ConfigError("window_W must be positive")
        if not (self.lof_threshold > 0 and self.np_threshold > 0 and self.log_threshold_thd > 0):
            raise ConfigError("thresholds must be positive")
        if self.median_filter_width < 1 or self.median_filter_width % 2 == 0:
            raise ConfigError("median_filter_width must be a positive odd number")
        if not self.np_subseq_len < self.window_samples:
            raise ConfigError(
                f"np_subseq_len={self.np_subseq_len} must be below the "
                f"{self.window_samples} samples per window"
            )
        if min(self.lof_k, self.np_k, self.cluster_k) < 1:
            raise ConfigError("neighbour counts must be >= 1")
        if not set(self.filtered_columns) <= set(self.feature_columns):
            raise ConfigError("filtered columns must be feature columns")

    @property
    def window_samples(self) -> int:
        return int(self.window_W // self.sample_interval) + 1

    def with_(self, **kw) -> "DetectionConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enabled_detectors"] = sorted(x.value for x in self.enabled_detectors)
        d["aggregation"] = self.aggregation.value
        for k in ("feature_columns", "filtered_columns", "error_patterns"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "DetectionConfig":
        doc = dict(doc)
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown detection config keys: {sorted(unknown)}")
        for k in ("feature_columns", "filtered_columns", "error_patterns"):
            if k in doc:
                doc[k] = tuple(doc[k])
        if "enabled_detectors" in doc:
            try:
                doc["enabled_detectors"] = frozenset(Detector(x) for x in doc["enabled_detectors"])
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
