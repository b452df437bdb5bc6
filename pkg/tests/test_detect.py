import itertools

import pytest

from fttrain.core import ConfigError, FaultCategory, ValidationError
from fttrain.sim.corpus import normal_traces
from fttrain.sim.schedule import FaultEvent
from fttrain.sim.traces import LogLine, generate_traces
from fttrain.tee import (Aggregation, DetectionConfig, DetectionHistory, Detector,
                         DetectorVerdict, LineClassifier, LogWindow, ModelRegistry,
                         TrainedModels, aggregate, detect_trace, detect_window, localize,
                         log_detection, log_window, offline_train)
from fttrain.tee.logs import ClassifiedLine


# -- aggregation and log rule -----------------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_aggregation_truth_tables(n):
    for flags in itertools.product([False, True], repeat=n):
        assert aggregate(flags, Aggregation.ANY) == (sum(flags) >= 1)
        assert aggregate(flags, Aggregation.MAJORITY) == (2 * sum(flags) > n)


def test_aggregation_examples():
    assert aggregate([True, True, False], Aggregation.MAJORITY)
    assert not aggregate([True, False, False], Aggregation.MAJORITY)
    with pytest.raises(ConfigError):
        aggregate([], Aggregation.ANY)


def _window(errors, first_node=3, nodes=range(8)):
    lines = [ClassifiedLine(100.0 + i, first_node if i == 0 else 0, "NET/IB error", True)
             for i in range(errors)]
    lines.append(ClassifiedLine(50.0, 1, "iteration 10", False))
    ranks = tuple(n for n in nodes for _ in range(8))
    return LogWindow(0.0, 600.0, sorted(lines, key=lambda l: l.time), ranks)


@pytest.mark.parametrize("errors,anomalous", [(0, False), (5, False), (10, True)])
def test_log_detection_threshold_is_strict(errors, anomalous):
    v = log_detection(_window(errors), 5)
    assert v.anomalous is anomalous and v.score == errors
    if anomalous:
        assert v.implicated_ranks == frozenset(range(24, 32))
    else:
        assert v.implicated_ranks == frozenset()


def test_line_classifier():
    clf = LineClassifier()
    assert clf.is_error("RuntimeError: CUDA error: an illegal memory access")
    assert clf.is_error("torch.OutOfMemoryError: CUDA out of memory")
    assert not clf.is_error("iteration 120 | lm loss 2.31")
    assert not LineClassifier(()).is_error("ECC error")


def test_config_validation():
    with pytest.raises(ConfigError):
        DetectionConfig(window_W=300.0)  # 11 samples cannot hold a 12-sample subsequence
    with pytest.raises(ConfigError):
        DetectionConfig(median_filter_width=4)
    with pytest.raises(ConfigError):
        DetectionConfig.from_dict({"window": 10})
    cfg = DetectionConfig()
    assert DetectionConfig.from_dict(cfg.to_dict()) == cfg


# -- full pipeline ----------------------------------------------------------------


def test_corpus_detection(models, corpus):
    normal, anomalous = corpus
    assert not any(detect_trace(t, models).flagged for t in normal)
    for tr in anomalous:
        res = detect_trace(tr, models, stride=60.0, stop_at_first=True)
        assert res.flagged, tr.label
        assert res.first_flag.window_end >= tr.faults[0].at


def test_detect_window_is_log_or_metric(models, small):
    tr = generate_traces(small, (), end=3 * 3600, nodes=(0, 1), seed=50)
    end = 7200.0
    mt = models.preprocessor.window(tr, end)
    cfg = models.config
    quiet = log_window(tr, end, cfg.window_W, LineClassifier())
    res = detect_window(quiet, mt, models, cfg)
    assert not res.anomalous and res.implicated_nodes == frozenset()

    noisy = list(tr.logs) + [LogLine(6000.0 + i, 1, "ERROR", "GPU ECC error") for i in range(6)]
    tr.logs = sorted(noisy, key=lambda l: l.time)
    lt = log_window(tr, end, cfg.window_W, LineClassifier())
    res = detect_window(lt, mt, models, cfg)
    assert res.anomalous and res.log.anomalous and not res.metric.anomalous
    assert res.implicated_nodes == frozenset({1})

    with pytest.raises(ValidationError):
        detect_window(log_window(tr, end - 30, cfg.window_W, LineClassifier()), mt, models, cfg)


def test_metric_only_fault_is_caught_and_localized(models, small):
    ev = FaultEvent(6000.0, FaultCategory.NETWORK_COMM, 1, frozenset({"metric_drop"}))
    tr = generate_traces(small, [ev], end=3 * 3600, nodes=(0, 1, 2, 3), seed=51)
    res = detect_trace(tr, models, stride=30.0, start=6000.0, stop_at_first=True)
    first = res.first_flag
    assert first is not None and not first.log.anomalous
    assert first.window_end - 6000.0 <= 600.0
    # waiting peers deviate too, so metrics alone name no node; error checks do
    assert first.implicated_nodes == frozenset()


def test_localize_rules():
    ranks = (0, 0, 1, 1, 2, 2, 3, 3)
    quiet = DetectorVerdict("LogDetector", False, 0.0)

    def metric(ranks_hit):
        return DetectorVerdict("Metric", True, 1.0, frozenset(ranks_hit))

    lt = LogWindow(0.0, 600.0, [], ranks)
    assert localize(lt, quiet, metric({2, 3}), ranks, 1.0) == frozenset({1})
    assert localize(lt, quiet, metric({0, 2, 4, 6}), ranks, 1.0) == frozenset()
    lines = [ClassifiedLine(10.0, 2, "ECC error", True), ClassifiedLine(25.0, 0, "NET/IB", True)]
    lt = LogWindow(0.0, 600.0, lines, ranks)
    loud = DetectorVerdict("LogDetector", True, 6.0)
    assert localize(lt, loud, metric(set()), ranks, 1.0) == frozenset({2})
    lines[1] = ClassifiedLine(10.5, 0, "NET/IB", True)  # near-simultaneous: whole-job error
    assert localize(lt, loud, DetectorVerdict("Metric", False, 0.0), ranks, 1.0) == frozenset()


def test_detection_is_deterministic(models, corpus):
    tr = corpus[1][0]
    a = detect_trace(tr, models, stride=120.0)
    b = detect_trace(tr, models, stride=120.0)
    assert [r.row() for r in a.results] == [r.row() for r in b.results]


def test_history_is_append_only(models, corpus):
    hist = DetectionHistory()
    detect_trace(corpus[0][0], models, history=hist)
    assert len(hist) > 0 and hist.to_csv().startswith("window_end_time,job,verdict")
    with pytest.raises(ValidationError):
        hist.append(next(iter(hist)))


def test_feature_mismatch_is_rejected(models, corpus):
    cfg = models.config.with_(feature_columns=("gpu_util", "ib_traffic"),
                              filtered_columns=("ib_traffic",))
    with pytest.raises(ValidationError):
        detect_trace(corpus[0][0], models, cfg)


def test_enabling_dtw_and_majority(models, corpus):
    cfg = models.config.with_(enabled_detectors=frozenset(Detector),
                              aggregation=Aggregation.MAJORITY)
    res = detect_trace(corpus[1][2], models, cfg, stride=60.0)
    assert res.flagged
    assert len(res.results[0].detectors) == 3


def test_idle_workload_is_flagged(models, small):
    # known limitation: a sleeping job looks nothing like training
    tr = generate_traces(small, (), end=3 * 3600, nodes=(0, 1), seed=52, workload="idle")
    assert detect_trace(tr, models).flagged


@pytest.mark.slow
def test_month_of_healthy_traces_false_positive_rate(models, small):
    tr = generate_traces(small, (), end=30 * 86400, nodes=(0, 1), seed=53)
    res = detect_trace(tr, models)  # stride W
    fp = sum(r.anomalous for r in res.results)
    assert len(res.results) > 1400
    assert fp / len(res.results) <= 0.01


# -- training ---------------------------------------------------------------------


def test_retrain_is_reproducible(small):
    traces = normal_traces(small, 4, duration=3 * 3600, seed=300)
    a, b = offline_train(traces, seed=3), offline_train(traces, seed=3)
    assert a.version == b.version and a.to_json() == b.to_json()
    assert a.passed


def test_failing_gate_keeps_previous_model(small, models, tmp_path):
    reg = ModelRegistry(tmp_path)
    assert reg.publish(models) and reg.active_version == models.version
    traces = normal_traces(small, 3, duration=3 * 3600, seed=400)
    traces.append(generate_traces(small, (), end=3 * 3600, nodes=(0, 1), seed=401, workload="idle"))
    bad = offline_train(traces, seed=0)
    assert not bad.passed and bad.evaluation["false_positive_windows"] > 0
    assert not reg.publish(bad)
    assert reg.active_version == models.version
    assert ModelRegistry(tmp_path).active.version == models.version


def test_model_artifact_roundtrip(models, tmp_path):
    path = models.save(tmp_path / "m.json")
    back = TrainedModels.load(path)
    assert back.version == models.version and back.config == models.config
    tampered = path.read_text().replace('"dtw_threshold": ', '"dtw_threshold": 1', 1)
    (tmp_path / "t.json").write_text(tampered)
    with pytest.raises(ValidationError):
        TrainedModels.load(tmp_path / "t.json")
    with pytest.raises(ValidationError):
        TrainedModels.load(tmp_path / "missing.json")


def test_training_needs_enough_data(small):
    from fttrain.tee import TrainingError
    with pytest.raises(TrainingError):
        offline_train(normal_traces(small, 1, duration=3 * 3600))
