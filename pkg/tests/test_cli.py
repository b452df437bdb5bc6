import csv
import json

import pytest

from fttrain.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["corpus", "--normal", "5", "--anomalous", "3", "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def model_file(corpus_dir, tmp_path_factory):
    reg = tmp_path_factory.mktemp("registry")
    path = tmp_path_factory.mktemp("model") / "model.json"
    assert main(["train", str(corpus_dir), "--out", str(path), "--registry", str(reg)]) == EXIT_OK
    assert (reg / "ACTIVE").exists()
    return path


def test_corpus_layout(corpus_dir):
    names = sorted(p.name for p in corpus_dir.iterdir())
    assert names[:3] == ["anomalous-00-StorageIO", "anomalous-01-NetworkComm",
                         "anomalous-02-NodeHardwareSoftware"]
    assert names[3:] == [f"normal-{i:02d}" for i in range(5)]
    assert {p.name for p in (corpus_dir / "normal-00").iterdir()} == \
        {"metrics.csv", "logs.csv", "meta.json"}


def test_detect_writes_reports(corpus_dir, model_file, tmp_path, capsys):
    out = tmp_path / "det"
    assert main(["detect", str(corpus_dir), "--model", str(model_file), "--stride", "300",
                 "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader((out / "summary.csv").open()))
    by_cat = {r["category"]: (int(r["traces"]), int(r["flagged"])) for r in rows}
    assert by_cat["normal"] == (5, 0)
    assert sum(f for c, (_, f) in by_cat.items() if c != "normal") == 3
    traces = list(csv.DictReader((out / "traces.csv").open()))
    assert len(traces) == 8 and all(float(t["seconds_per_window"]) < 1.0 for t in traces)
    assert (out / "windows.csv").read_text().startswith("window_end_time,job,verdict")
    assert "3/5" not in capsys.readouterr().out


def test_detect_config_and_env_override(corpus_dir, model_file, tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"log_threshold_thd": 1000}))
    monkeypatch.setenv("FTTRAIN_DETECT_ENABLED_DETECTORS", '["LOF"]')
    out = tmp_path / "det"
    assert main(["detect", str(corpus_dir / "normal-00"), "--model", str(model_file),
                 "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    header = (out / "windows.csv").read_text().splitlines()[0]
    assert "LOF_score" in header and "NProfile_score" not in header


def test_detect_invalid_inputs_write_nothing(corpus_dir, model_file, tmp_path):
    out = tmp_path / "det"
    assert main(["detect", str(corpus_dir), "--model", str(tmp_path / "none.json"),
                 "--out", str(out)]) == EXIT_INVALID
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"feature_columns": ["gpu_util"], "filtered_columns": []}))
    assert main(["detect", str(corpus_dir), "--model", str(model_file), "--config", str(cfg),
                 "--out", str(out)]) == EXIT_INVALID
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["detect", str(corpus_dir), "--model", str(model_file), "--config", str(cfg),
                 "--out", str(out)]) == EXIT_INVALID
    assert main(["detect", str(tmp_path), "--model", str(model_file),
                 "--out", str(out)]) == EXIT_INVALID
    assert not out.exists()


def test_run_single_and_both(tmp_path, capsys):
    out = tmp_path / "rep"
    assert main(["run", "small", "--orchestration", "on", "--seed", "1", "--out", str(out)]) == EXIT_OK
    assert {p.name for p in out.iterdir()} == {"report.json", "restarts.csv", "loss.csv",
                                                "transitions.csv"}
    report = json.loads((out / "report.json").read_text())
    assert report["seed"] == 1 and report["orchestration"] == "on"

    both = tmp_path / "both"
    assert main(["run", "small", "--orchestration", "both", "--out", str(both)]) == EXIT_OK
    assert "end-to-end duration reduced by" in capsys.readouterr().out
    cmp_ = json.loads((both / "comparison.json").read_text())
    assert cmp_["duration_on"] <= cmp_["duration_off"]
    assert (both / "off" / "report.json").exists() and not (both / "off" / "transitions.csv").exists()


def test_run_is_reproducible_and_env_seeded(tmp_path, monkeypatch):
    a, b = tmp_path / "a", tmp_path / "b"
    monkeypatch.setenv("FTTRAIN_SEED", "3")
    assert main(["run", "small", "--out", str(a)]) == EXIT_OK
    assert main(["run", "small", "--seed", "3", "--out", str(b)]) == EXIT_OK
    for name in ("report.json", "restarts.csv", "loss.csv", "transitions.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_run_invalid_scenarios(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scenario_id": "x"}))
    out = tmp_path / "rep"
    assert main(["run", str(bad), "--out", str(out)]) == EXIT_INVALID
    assert main(["run", "no-such-scenario", "--out", str(out)]) == EXIT_INVALID
    assert main(["run", "small", "--orchestration", "sideways"]) == EXIT_INVALID
    assert main([]) == EXIT_INVALID
    assert not out.exists()


def test_bench_ckpt(tmp_path, capsys):
    assert main(["bench-ckpt"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "gpt175b_128r_dp8" in text and "save_speedup" in text
    cfg = tmp_path / "perf.json"
    cfg.write_text(json.dumps({"tiny": {"model": {"param_count": 1e6},
                                        "parallelism": {"tp": 8, "pp": 1, "dp": 1, "nodes": 1}}}))
    assert main(["bench-ckpt", "--config", str(cfg)]) == EXIT_OK
    cfg.write_text(json.dumps({"tiny": {"model": {}}}))
    assert main(["bench-ckpt", "--config", str(cfg)]) == EXIT_INVALID


def test_job_lifecycle(tmp_path, capsys):
    sess = ["--session", str(tmp_path / "s.json")]
    assert main(["job", "create", "j1", "--nodes", "3", *sess]) == EXIT_OK
    assert main(["job", "create", "j1", *sess]) == EXIT_INVALID
    assert main(["job", "start", "j1", *sess]) == EXIT_OK
    capsys.readouterr()
    assert main(["job", "status", "j1", *sess]) == EXIT_OK
    assert capsys.readouterr().out.count("EXECUTION") == 3
    assert main(["job", "stop", "j1", *sess]) == EXIT_OK
    assert main(["job", "start", "j1", *sess]) == EXIT_INVALID
    assert main(["job", "status", "nope", *sess]) == EXIT_INVALID
    (tmp_path / "s.json").write_text("{")
    assert main(["job", "status", "j1", *sess]) == EXIT_INVALID


def test_train_gate_failure_is_runtime_error(tmp_path):
    out = tmp_path / "c"
    assert main(["corpus", "--normal", "1", "--anomalous", "0", "--out", str(out)]) == EXIT_OK
    assert main(["train", str(out), "--out", str(tmp_path / "m.json")]) == EXIT_INVALID
    assert not (tmp_path / "m.json").exists()
    assert EXIT_RUNTIME == 2
