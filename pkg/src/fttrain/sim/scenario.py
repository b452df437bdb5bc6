"""Scenario configuration: dataclasses, JSON schema and environment overrides."""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema

from ..core import BandwidthConfig, ConfigError, FaultCategory, ModelSpec, ParallelismConfig
from ..tol.tasks import DEFAULT_DURATIONS

ENV_PREFIX = "FTTRAIN_"
# variables under the prefix that belong to the CLI, not to scenario files
RESERVED_ENV = ("FTTRAIN_SEED", "FTTRAIN_SESSION", "FTTRAIN_DETECT_")
HOUR = 3600.0
DAY = 24 * HOUR


@dataclass(frozen=True)
class RecoveryProfile:
    """Durations (seconds) of the recovery pipeline pieces."""

    subtask_durations: dict = field(default_factory=lambda: dict(DEFAULT_DURATIONS))
    task_timeout: float = 300.0
    reschedule: float = 180.0
    process_restart: float = 60.0
    manual_min: float = 2 * HOUR
    manual_max: float = 72 * HOUR
    poll_period: float = 60.0
    detection_timeout: float = 1800.0
    lease_duration: float = 30.0

    @property
    def warmup(self) -> float:
        d = self.subtask_durations
        return d["disk_check"] + d["gpu_burn"] + d["connectivity_check"]

    @property
    def error_check(self) -> float:
        d = self.subtask_durations
        return d["disk_check"] + d["gpu_burn"] + d["comm_test"] + d["anomaly_query"]


@dataclass(frozen=True)
class TraceProfile:
    """Shape of the synthetic monitoring signals."""

    sample_interval: float = 30.0
    period_samples: int = 12
    compute_samples: int = 6
    sync_samples: int = 2
    init_prefix: float = 600.0
    # probability that a compute-phase traffic sample blips low for one sample
    blip_prob: float = 0.3


@dataclass(frozen=True)
class ClusterScenario:
    scenario_id: str
    parallelism: ParallelismConfig
    model: ModelSpec
    bandwidths: BandwidthConfig
    fault_mtbf: dict  # FaultCategory -> seconds, math.inf disables the category
    recovery: RecoveryProfile
    checkpoint_interval: float
    total_steps: int
    step_time: float
    rng_seed: int = 0
    spare_nodes: int = 0
    horizon: float | None = None
    trace: TraceProfile = field(default_factory=TraceProfile)
    notes: str = ""

    def __post_init__(self):
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if not self.step_time > 0 and self.total_steps > 0:
            raise ConfigError("step_time must be positive: a zero step rate never terminates")
        if self.checkpoint_interval < 0:
            raise ConfigError("checkpoint_interval must be >= 0")
        rp = self.recovery
        durations = [rp.task_timeout, rp.reschedule, rp.process_restart, rp.manual_min,
                     rp.manual_max, rp.detection_timeout, *rp.subtask_durations.values()]
        if any(d < 0 for d in durations):
            raise ConfigError("all durations must be >= 0")
        if rp.manual_max < rp.manual_min:
            raise ConfigError("manual_max must be >= manual_min")
        if rp.poll_period <= 0 or rp.lease_duration <= 0:
            raise ConfigError("poll_period and lease_duration must be positive")
        for cat in FaultCategory:
            if not self.fault_mtbf.get(cat, math.inf) > 0:
                raise ConfigError(f"MTBF for {cat.value} must be positive")

    @property
    def work_seconds(self) -> float:
        return self.total_steps * self.step_time

    @property
    def schedule_horizon(self) -> float:
        return self.horizon if self.horizon is not None else 4 * self.work_seconds

    def with_seed(self, seed: int) -> "ClusterScenario":
        return replace(self, rng_seed=int(seed))

    # -- serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        mtbf = {}
        for cat in FaultCategory:
            v = self.fault_mtbf.get(cat, math.inf)
            mtbf[cat.value] = None if math.isinf(v) else v
        return {
            "scenario_id": self.scenario_id,
            "notes": self.notes,
            "parallelism": asdict(self.parallelism),
            "model": asdict(self.model),
            "bandwidths": asdict(self.bandwidths),
            "fault_mtbf": mtbf,
            "recovery": asdict(self.recovery),
            "checkpoint_interval": self.checkpoint_interval,
            "total_steps": self.total_steps,
            "step_time": self.step_time,
            "rng_seed": self.rng_seed,
            "spare_nodes": self.spare_nodes,
            "horizon": self.horizon,
            "trace": asdict(self.trace),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ClusterScenario":
        validate_document(doc)
        try:
            rec = dict(doc.get("recovery", {}))
            rec["subtask_durations"] = {**DEFAULT_DURATIONS, **rec.get("subtask_durations", {})}
            mtbf = {}
            for cat in FaultCategory:
                v = doc["fault_mtbf"].get(cat.value)
                mtbf[cat] = math.inf if v is None else float(v)
            return cls(
                scenario_id=doc["scenario_id"],
                notes=doc.get("notes", ""),
                parallelism=ParallelismConfig(**doc["parallelism"]),
                model=ModelSpec(**doc["model"]),
                bandwidths=BandwidthConfig(**doc.get("bandwidths", {})),
                fault_mtbf=mtbf,
                recovery=RecoveryProfile(**rec),
                checkpoint_interval=float(doc["checkpoint_interval"]),
                total_steps=int(doc["total_steps"]),
                step_time=float(doc["step_time"]),
                rng_seed=int(doc.get("rng_seed", 0)),
                spare_nodes=int(doc.get("spare_nodes", 0)),
                horizon=doc.get("horizon"),
                trace=TraceProfile(**doc.get("trace", {})),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


_num = {"type": "number", "minimum": 0}
_pos_int = {"type": "integer", "minimum": 1}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["scenario_id", "parallelism", "model", "fault_mtbf",
                 "checkpoint_interval", "total_steps", "step_time"],
    "additionalProperties": False,
    "properties": {
        "scenario_id": {"type": "string", "minLength": 1},
        "notes": {"type": "string"},
        "parallelism": {
            "type": "object",
            "required": ["tp", "pp", "dp", "nodes"],
            "additionalProperties": False,
            "properties": {k: _pos_int for k in ("tp", "pp", "dp", "nodes", "gpus_per_node")},
        },
        "model": {
            "type": "object",
            "required": ["param_count"],
            "additionalProperties": False,
            "properties": {
                "param_count": {"type": "number", "exclusiveMinimum": 0},
                "weight_bytes_per_param": {"type": "number", "exclusiveMinimum": 0},
                "optimizer_bytes_per_param": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "bandwidths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "number", "exclusiveMinimum": 0}
                           for k in ("b_mem", "b_nas", "b_rdma")},
        },
        "fault_mtbf": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                cat.value: {"type": ["number", "null"], "exclusiveMinimum": 0}
                for cat in FaultCategory
            },
        },
        "recovery": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "subtask_durations": {"type": "object", "additionalProperties": _num},
                **{k: _num for k in ("task_timeout", "reschedule", "process_restart",
                                     "manual_min", "manual_max", "detection_timeout")},
                "poll_period": {"type": "number", "exclusiveMinimum": 0},
                "lease_duration": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "checkpoint_interval": _num,
        "total_steps": {"type": "integer", "minimum": 0},
        "step_time": _num,
        "rng_seed": {"type": "integer", "minimum": 0},
        "spare_nodes": {"type": "integer", "minimum": 0},
        "horizon": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "trace": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sample_interval": {"type": "number", "exclusiveMinimum": 0},
                "period_samples": {"type": "integer", "minimum": 2},
                "compute_samples": _pos_int,
                "sync_samples": {"type": "integer", "minimum": 0},
                "init_prefix": _num,
                "blip_prob": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
    },
}


def validate_document(doc) -> None:
    """Raise ConfigError listing every schema violation in ``doc``."""
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}"
                 for e in errors]
        raise ConfigError("invalid scenario:\n  " + "\n  ".join(lines))


def apply_env_overrides(doc: dict, environ=None, prefix: str = ENV_PREFIX) -> dict:
    """Override config keys from ``FTTRAIN_<KEY>[__<SUBKEY>...]`` variables.

    Values are parsed as JSON when possible, otherwise kept as strings. Keys
    match case-insensitively against existing keys.
    """
    environ = os.environ if environ is None else environ
    out = copy.deepcopy(doc)
    for name, raw in sorted(environ.items()):
        if not name.startswith(prefix):
            continue
        if prefix == ENV_PREFIX and name.startswith(RESERVED_ENV):
            continue
        path = name[len(prefix):].split("__")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        for i, part in enumerate(path):
            key = next((k for k in node if k.lower() == part.lower()), part.lower())
            if i == len(path) - 1:
                node[key] = value
            else:
                node = node.setdefault(key, {})
                if not isinstance(node, dict):
                    raise ConfigError(f"{name}: {key} is not a section")
    return out


def load_scenario(path, environ=None) -> ClusterScenario:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario {path} is not valid JSON: {exc}") from exc
    return ClusterScenario.from_dict(apply_env_overrides(doc, environ))


def builtin_scenario(name: str) -> ClusterScenario:
    """Load one of the scenario files shipped with the package."""
    text = resources.files("fttrain").joinpath("scenarios", f"{name}.json").read_text()
    return ClusterScenario.from_dict(json.loads(text))


def builtin_scenario_path(name: str) -> Path:
    return Path(str(resources.files("fttrain").joinpath("scenarios", f"{name}.json")))
