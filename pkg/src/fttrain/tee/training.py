"""Offline training, held-out gating and the model registry."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import FaultCategory, ValidationError
from ..sim.schedule import FaultEvent
from ..sim.traces import inject_fault
from .config import DetectionConfig
from .detect import detect_trace, window_ends
from .dtw import DTWPeerCluster, peer_scores
from .lof import LocalOutlierFactor
from .nprofile import NeighborProfile
from .preprocess import Preprocessor

log = logging.getLogger(__name__)
ARTIFACT_FORMAT = 1


class TrainingError(ValidationError):
    pass


@dataclass
class TrainedModels:
    config: DetectionConfig          # thresholds here are the calibrated ones
    preprocessor_state: dict
    lof_reference: np.ndarray
    dtw_threshold: float
    evaluation: dict = field(default_factory=dict)
    version: str = ""

    def __post_init__(self):
        cfg = self.config
        self.preprocessor = Preprocessor.from_state(cfg, self.preprocessor_state)
        self.lof = LocalOutlierFactor(cfg.lof_k, cfg.lof_threshold).fit(self.lof_reference)
        self.nprofile = NeighborProfile(cfg.np_subseq_len, cfg.np_k, cfg.np_threshold)
        self.nprofile.n_features_in_ = cfg.window_samples
        self.dtw = DTWPeerCluster(cfg.cluster_k)
        self.dtw.threshold_ = self.dtw_threshold
        if not self.version:
            self.version = self.content_hash()

    @property
    def passed(self) -> bool:
        return bool(self.evaluation.get("passed", False))

    def _content(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "preprocessor": self.preprocessor_state,
            "lof_reference": self.lof_reference.tolist(),
            "dtw_threshold": self.dtw_threshold,
        }

    def content_hash(self) -> str:
        blob = json.dumps(self._content(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_json(self) -> str:
        doc = {"format": ARTIFACT_FORMAT, "version": self.version,
               "evaluation": self.evaluation, **self._content()}
        return json.dumps(doc, indent=1, sort_keys=True)

    def save(self, path) -> Path:
        p = Path(path)
        p.write_text(self.to_json())
        return p

    @classmethod
    def from_json(cls, text: str) -> "TrainedModels":
        doc = json.loads(text)
        if doc.get("format") != ARTIFACT_FORMAT:
            raise ValidationError(f"unsupported model artifact format {doc.get('format')!r}")
        m = cls(DetectionConfig.from_dict(doc["config"]), doc["preprocessor"],
                np.asarray(doc["lof_reference"], dtype=np.float64), float(doc["dtw_threshold"]),
                doc.get("evaluation", {}), doc["version"])
        if m.content_hash() != m.version:
            raise ValidationError("model artifact content does not match its version id")
        return m

    @classmethod
    def load(cls, path) -> "TrainedModels":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ValidationError(f"cannot read model file {path}: {exc}") from exc
        return cls.from_json(text)


def synthetic_anomalies(trace, seed: int = 0) -> list:
    """Held-out trace copies carrying each metric signature once."""
    span = trace.end - trace.init_end
    at = trace.init_end + 0.6 * span
    node = trace.nodes[0]
    events = [
        FaultEvent(at, FaultCategory.NODE_HW_SW, node),    # crash + peers hang
        FaultEvent(at, FaultCategory.NETWORK_COMM, node),  # traffic drop
        FaultEvent(at, FaultCategory.OTHER),               # whole-job hang
        FaultEvent(at, FaultCategory.USER_CODE_ENV),       # whole-job crash
    ]
    # the metric path alone must catch these, so logs stay clean
    return [inject_fault(trace, FaultEvent(e.at, e.category, e.node,
                                           e.detectable_by - {"log_burst"}), seed=seed + i)
            for i, e in enumerate(events)]


def offline_train(normal_traces, cfg: DetectionConfig | None = None, *, seed: int = 0,
                  holdout_fraction: float = 0.25, max_fp_rate: float = 0.01) -> TrainedModels:
    """Fit preprocessing and detectors on normal traces and gate on a held-out split."""
    cfg = cfg or DetectionConfig()
    traces = list(normal_traces)
    if len(traces) < 2:
        raise TrainingError("need at least two normal traces for a train/held-out split")
    n_hold = min(len(traces) - 1, max(1, round(holdout_fraction * len(traces))))
    train, held = traces[:-n_hold], traces[-n_hold:]
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7EE]))

    pre = Preprocessor(cfg).fit(train)
    windows = []
    for tr in train:
        for end in window_ends(tr, cfg, stride=cfg.window_W / 2):
            windows.append(pre.window(tr, float(end)))
    if not windows:
        raise TrainingError("training traces are shorter than one detection window")

    points = np.vstack([w.points for w in windows])
    points = np.unique(points, axis=0)
    n_ref = min(cfg.lof_reference_size, len(points) // 2)
    if n_ref <= cfg.lof_k:
        raise TrainingError("too few training points for the LOF reference set")
    perm = rng.permutation(len(points))
    reference = points[np.sort(perm[:n_ref])]
    calib = points[perm[n_ref:n_ref + 20 * n_ref]]
    lof = LocalOutlierFactor(cfg.lof_k, cfg.lof_threshold).fit(reference)
    lof_thr = max(cfg.lof_threshold, cfg.threshold_margin * float(lof.score_samples(calib).max()))

    nprof = NeighborProfile(cfg.np_subseq_len, cfg.np_k)
    np_max = max(float(nprof.score_samples(w.series(cfg.profile_column)).max()) for w in windows)
    np_thr = max(cfg.np_threshold, cfg.threshold_margin * np_max)

    dtw_max = max(float(peer_scores(w.series(cfg.profile_column), cfg.cluster_k).max())
                  for w in windows)
    dtw_thr = max(cfg.threshold_margin * dtw_max, 1e-6)

    calibrated = cfg.with_(lof_threshold=lof_thr, np_threshold=np_thr)
    models = TrainedModels(calibrated, {"kept_columns": list(pre.columns_),
                                        "kept_index": pre.pruner_.keep_.tolist(),
                                        "data_min": pre.scaler_.data_min_.tolist(),
                                        "data_max": pre.scaler_.data_max_.tolist()},
                           reference, dtw_thr)
    models.evaluation = evaluate(models, held, seed=seed, max_fp_rate=max_fp_rate)
    models.evaluation["train_traces"] = len(train)
    log.info("trained model %s: %s", models.version, models.evaluation)
    return models


def evaluate(models: TrainedModels, held_out, *, seed: int = 0, max_fp_rate: float = 0.01) -> dict:
    cfg = models.config
    stride = cfg.sample_interval * 4
    windows = fp = 0
    for tr in held_out:
        res = detect_trace(tr, models, cfg, stride=stride)
        windows += len(res.results)
        fp += sum(r.anomalous for r in res.results)
    caught = total = 0
    for i, tr in enumerate(held_out):
        for bad in synthetic_anomalies(tr, seed=seed + 10 * i):
            total += 1
            at = bad.faults[-1].at
            first = max(at, bad.init_end + cfg.window_W)
            caught += detect_trace(bad, models, cfg, stride=cfg.sample_interval, start=first,
                                   stop_at_first=True).flagged
    fp_rate = fp / windows if windows else 0.0
    recall = caught / total if total else 0.0
    precision = caught / (caught + fp) if caught + fp else 1.0
    return {
        "heldout_windows": windows,
        "false_positive_windows": fp,
        "false_positive_rate": fp_rate,
        "synthetic_anomalies": total,
        "recall": recall,
        "precision": precision,
        "passed": recall == 1.0 and fp_rate <= max_fp_rate,
    }


class ModelRegistry:
    """Keeps published model versions; only gated models get published."""

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else None
        self._versions: dict[str, TrainedModels] = {}
        self.active_version: str | None = None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            pointer = self.root / "ACTIVE"
            if pointer.exists():
                self.active_version = pointer.read_text().strip() or None

    def publish(self, models: TrainedModels) -> bool:
        if not models.passed:
            log.warning("model %s failed the held-out gate; keeping %s",
                        models.version, self.active_version)
            return False
        self._versions[models.version] = models
        if self.root is not None:
            models.save(self.root / f"model-{models.version}.json")
            tmp = self.root / "ACTIVE.tmp"
            tmp.write_text(models.version)
            tmp.replace(self.root / "ACTIVE")
        self.active_version = models.version
        return True

    @property
    def active(self) -> TrainedModels | None:
        if self.active_version is None:
            return None
        if self.active_version not in self._versions and self.root is not None:
            self._versions[self.active_version] = TrainedModels.load(
                self.root / f"model-{self.active_version}.json")
        return self._versions.get(self.active_version)
