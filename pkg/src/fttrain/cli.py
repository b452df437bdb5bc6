"""Command-line entry point.

Exit codes: 0 success, 1 invalid input, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

from .core import BandwidthConfig, ModelSpec, ParallelismConfig, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
SESSION_ENV = "FTTRAIN_SESSION"
DETECT_ENV_PREFIX = "FTTRAIN_DETECT_"

log = logging.getLogger("fttrain")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    # bad flags are invalid input, not a runtime failure
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _write_files(out: Path, files: dict[str, str]) -> None:
    """Write every file or none: content is fully prepared before touching disk."""
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        tmp = out / f".{name}.tmp"
        tmp.write_text(text)
        tmp.replace(out / name)


def _scenario(ref: str):
    from .sim.scenario import builtin_scenario_path, load_scenario

    path = Path(ref)
    if not path.exists() and not ref.endswith(".json"):
        try:
            path = builtin_scenario_path(ref)
        except (FileNotFoundError, ModuleNotFoundError):
            pass
    if not path.exists():
        raise UsageError(f"scenario {ref} not found (neither a file nor a built-in name)")
    return load_scenario(path)


# -- run ------------------------------------------------------------------------


def _run_files(report) -> dict[str, str]:
    files = {
        "report.json": report.to_json() + "\n",
        "restarts.csv": report.restarts_csv(),
        "loss.csv": report.loss_csv(),
    }
    if report.transitions_csv:
        files["transitions.csv"] = report.transitions_csv
    return files


def cmd_run(args) -> int:
    from .sim.runner import run

    scn = _scenario(args.scenario).with_seed(args.seed)
    modes = ("off", "on") if args.orchestration == "both" else (args.orchestration,)
    reports = {}
    for mode in modes:
        t0 = time.perf_counter()
        reports[mode] = run(scn, mode)
        s = reports[mode].summary()
        print(f"{mode:>3}: duration {s['end_to_end_days']:.2f} d, effective fraction "
              f"{s['effective_training_fraction']:.3f}, faults {s['faults_injected']}, "
              f"mean attributable restart {s['mean_restart_attributable'] / 60:.1f} min "
              f"({time.perf_counter() - t0:.1f} s wall)")
    out = Path(args.out)
    if len(modes) == 1:
        _write_files(out, _run_files(reports[modes[0]]))
    else:
        for mode, rep in reports.items():
            _write_files(out / mode, _run_files(rep))
        off, on = reports["off"].duration, reports["on"].duration
        improvement = 1.0 - on / off
        comparison = {"scenario_id": scn.scenario_id, "seed": args.seed,
                      "duration_off": off, "duration_on": on, "reduction": improvement}
        _write_files(out, {"comparison.json": json.dumps(comparison, indent=2, sort_keys=True)
                           + "\n"})
        print(f"end-to-end duration reduced by {100 * improvement:.1f}%")
    print(f"reports written to {out}")
    return EXIT_OK


# -- detection ------------------------------------------------------------------


def _trace_dirs(root: Path) -> list[Path]:
    if (root / "meta.json").exists():
        return [root]
    dirs = sorted(p.parent for p in root.glob("*/meta.json"))
    if not dirs:
        raise UsageError(f"no trace bundles under {root}")
    return dirs


def _detect_config(models, config_file, environ):
    from .sim.scenario import apply_env_overrides
    from .tee.config import DetectionConfig

    doc = models.config.to_dict()
    if config_file is not None:
        try:
            user = json.loads(Path(config_file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read detection config {config_file}: {exc}") from exc
        unknown = set(user) - set(doc)
        if unknown:
            raise UsageError(f"unknown detection config keys: {sorted(unknown)}")
        doc.update(user)
    doc = apply_env_overrides(doc, environ, DETECT_ENV_PREFIX)
    return DetectionConfig.from_dict(doc)


def _trace_category(trace) -> str:
    return trace.faults[0].category.value if trace.faults else "normal"


def cmd_detect(args) -> int:
    from .sim.traces import TraceBundle
    from .tee.detect import DetectionHistory, detect_trace
    from .tee.training import TrainedModels

    models = TrainedModels.load(args.model)
    cfg = _detect_config(models, args.config, os.environ)
    history = DetectionHistory()
    summary: dict[str, list[int]] = {}
    per_trace = []
    stride = args.stride if args.stride is not None else cfg.sample_interval * 2
    for d in _trace_dirs(Path(args.traces)):
        trace = TraceBundle.load(d)
        t0 = time.perf_counter()
        res = detect_trace(trace, models, cfg, stride=stride, history=history, job=d.name)
        per_window = (time.perf_counter() - t0) / max(1, len(res.results))
        cat = _trace_category(trace)
        row = summary.setdefault(cat, [0, 0])
        row[0] += 1
        row[1] += res.flagged
        first = res.first_flag
        per_trace.append([d.name, cat, res.flagged, len(res.results),
                          "" if first is None else repr(first.window_end),
                          "" if first is None else " ".join(map(str, sorted(first.implicated_nodes))),
                          f"{per_window:.6f}"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["category", "traces", "flagged"])
    for cat in sorted(summary):
        w.writerow([cat, *summary[cat]])
    tbuf = io.StringIO()
    tw = csv.writer(tbuf, lineterminator="\n")
    tw.writerow(["trace", "category", "flagged", "windows", "first_flag_time",
                 "implicated_nodes", "seconds_per_window"])
    tw.writerows(per_trace)
    _write_files(Path(args.out), {"windows.csv": history.to_csv(), "summary.csv": buf.getvalue(),
                                  "traces.csv": tbuf.getvalue()})
    for cat in sorted(summary):
        n, flagged = summary[cat]
        print(f"{cat:>22}: {flagged}/{n} traces flagged")
    return EXIT_OK


def cmd_train(args) -> int:
    from .sim.traces import TraceBundle
    from .tee.training import ModelRegistry, offline_train

    traces = [TraceBundle.load(d) for d in _trace_dirs(Path(args.traces))]
    models = offline_train([t for t in traces if not t.faults], seed=args.seed)
    print(json.dumps(models.evaluation, sort_keys=True))
    if not models.passed:
        print("model failed the held-out gate; not written", file=sys.stderr)
        return EXIT_RUNTIME
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    models.save(out)
    if args.registry:
        ModelRegistry(args.registry).publish(models)
    print(f"model {models.version} written to {out}")
    return EXIT_OK


def cmd_corpus(args) -> int:
    from .sim.corpus import detection_corpus

    scn = _scenario(args.scenario)
    normal, anomalous = detection_corpus(scn, args.normal, args.anomalous, seed=args.seed)
    out = Path(args.out)
    for i, tr in enumerate(normal):
        tr.save(out / f"normal-{i:02d}")
    for i, tr in enumerate(anomalous):
        tr.save(out / f"anomalous-{i:02d}-{_trace_category(tr)}")
    print(f"{len(normal)} normal and {len(anomalous)} anomalous traces written to {out}")
    return EXIT_OK


# -- checkpoint benchmark ----------------------------------------------------------


def _perf_inputs(doc: dict):
    from .tce.perf import PerfModelInputs

    try:
        return PerfModelInputs(ModelSpec(**doc["model"]), ParallelismConfig(**doc["parallelism"]),
                               BandwidthConfig(**doc.get("bandwidths", {})))
    except (KeyError, TypeError) as exc:
        raise UsageError(f"bad perf config: {exc}") from exc


def cmd_bench_ckpt(args) -> int:
    from .tce.bench import bench_checkpoint, default_bench_configs

    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read perf config {args.config}: {exc}") from exc
        configs = {name: _perf_inputs(d) for name, d in doc.items()}
    else:
        configs = default_bench_configs()
    print(f"{'config':<20} {'metric':<14} {'simulated':>16} {'model':>16} {'rel_err':>10}")
    for name, inp in configs.items():
        for r in bench_checkpoint(inp, name):
            print(f"{r.config:<20} {r.metric:<14} {r.measured:>16.6g} {r.predicted:>16.6g} "
                  f"{r.rel_error:>10.2e}")
    return EXIT_OK


# -- job session ------------------------------------------------------------------


def _session_path(args) -> Path:
    return Path(args.session or os.environ.get(SESSION_ENV, "fttrain-session.json"))


def _load_session(path: Path) -> dict:
    if not path.exists():
        return {"jobs": {}}
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"session file {path} is corrupt: {exc}") from exc


def _save_session(path: Path, session: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(session, indent=1, sort_keys=True))
    tmp.replace(path)


def cmd_job(args) -> int:
    from .tol.job import Job, NodePool

    path = _session_path(args)
    session = _load_session(path)
    jobs = session.setdefault("jobs", {})
    if args.action == "create":
        if args.job in jobs:
            raise UsageError(f"job {args.job} already exists")
        job = Job(args.job, list(range(args.nodes)),
                  pool=NodePool(range(args.nodes, args.nodes + args.spares)))
    else:
        if args.job not in jobs:
            raise UsageError(f"unknown job {args.job}")
        job = Job.from_dict(jobs[args.job])
        now = float(session.get("clock", 0.0))
        if args.action == "start":
            session["clock"] = now + job.start(now)
        elif args.action == "stop":
            job.stop(now)
    if args.action != "status":
        jobs[args.job] = job.to_dict()
        _save_session(path, session)
    for lid, state in job.status().items():
        print(f"{args.job} launcher {lid}: {state.value}")
    return EXIT_OK


# -- wiring -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fttrain", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=int(os.environ.get("FTTRAIN_SEED", 0)))
        return sp

    r = seeded(sub.add_parser("run", help="simulate a training run under faults"))
    r.add_argument("scenario", help="scenario file or built-in name (small, calibrated)")
    r.add_argument("--orchestration", choices=("on", "off", "both"), default="on")
    r.add_argument("--out", default="report")
    r.set_defaults(func=cmd_run)

    d = seeded(sub.add_parser("detect", help="run anomaly detection over trace bundles"))
    d.add_argument("traces", help="a trace bundle directory or a directory of them")
    d.add_argument("--model", required=True)
    d.add_argument("--config", help="detection config JSON overriding the model's")
    d.add_argument("--stride", type=float, help="seconds between window ends")
    d.add_argument("--out", default="detection")
    d.set_defaults(func=cmd_detect)

    t = seeded(sub.add_parser("train", help="train and gate detection models"))
    t.add_argument("traces")
    t.add_argument("--out", default="model.json")
    t.add_argument("--registry", help="also publish into this registry directory")
    t.set_defaults(func=cmd_train)

    c = seeded(sub.add_parser("corpus", help="write synthetic normal and anomalous traces"))
    c.add_argument("--scenario", default="small")
    c.add_argument("--normal", type=int, default=13)
    c.add_argument("--anomalous", type=int, default=11)
    c.add_argument("--out", default="traces")
    c.set_defaults(func=cmd_corpus)

    b = seeded(sub.add_parser("bench-ckpt", help="checkpoint latencies, simulated vs modelled"))
    b.add_argument("--config", help="JSON object mapping names to {model, parallelism, bandwidths}")
    b.set_defaults(func=cmd_bench_ckpt)

    j = seeded(sub.add_parser("job", help="operate a simulated job"))
    j.add_argument("action", choices=("create", "start", "stop", "status"))
    j.add_argument("job")
    j.add_argument("--nodes", type=int, default=2)
    j.add_argument("--spares", type=int, default=2)
    j.add_argument("--session", help=f"session file (default ${SESSION_ENV} or ./fttrain-session.json)")
    j.set_defaults(func=cmd_job)
    return p


def main(argv=None) -> int:
    from .tol.states import IllegalTransition

    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, IllegalTransition) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
