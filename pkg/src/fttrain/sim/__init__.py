"""Deterministic cluster simulator: scenarios, fault schedules, traces and runs."""

from .scenario import (
    ClusterScenario, RecoveryProfile, SCENARIO_SCHEMA, TraceProfile, apply_env_overrides,
    builtin_scenario, builtin_scenario_path, load_scenario, validate_document,
)
from .schedule import (
    LOG_BURST, METRIC_DROP, METRIC_FLATLINE, SIGNATURES, FaultEvent, build_schedule,
    iter_faults, mtbf_from_weights,
)
from .traces import METRICS, LogLine, TraceBundle, generate_traces, inject_fault, loss_curve
from .corpus import ANOMALY_MIX, anomalous_traces, detection_corpus, normal_traces
from .runner import RestartRecord, Segment, SimReport, default_models, run
