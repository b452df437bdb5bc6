"""Synthetic monitoring traces: per-rank metrics and per-node logs.

Healthy ranks cycle in lockstep through a compute phase (high GPU
utilisation, NVLink busy), a gradient-sync phase (IB traffic peaks) and a low
phase (optimizer step and I/O). Traffic during the compute phase blips down
for single samples, which a width-3 median filter removes.
Faults imprint the signatures listed in their ``detectable_by`` set.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import FaultCategory, ValidationError
from .schedule import LOG_BURST, METRIC_DROP, METRIC_FLATLINE, FaultEvent

METRICS = ("gpu_util", "ib_traffic", "nvlink_traffic", "loss")
IB_PEAK = 12.5e9
NVLINK_PEAK = 150e9
LOG_INTERVAL = 60.0

PEER_TIMEOUT_TEXT = "Watchdog caught collective operation timeout: WorkNCCL(OpType=ALLREDUCE) ran for 1800000 milliseconds before timing out"


@dataclass(frozen=True)
class LogLine:
    time: float
    node: int
    level: str
    text: str

    @property
    def tagged_error(self) -> bool:
        return self.level == "ERROR"


@dataclass
class TraceBundle:
    times: np.ndarray              # (samples,)
    metrics: np.ndarray            # (ranks, samples, len(METRICS))
    nodes: tuple                   # node id of each block of gpus_per_node ranks
    gpus_per_node: int
    sample_interval: float
    init_end: float                # samples before this are initialisation noise
    logs: list = field(default_factory=list)
    label: str = "normal"
    faults: tuple = ()
    metric_names: tuple = METRICS

    def __post_init__(self):
        if self.metrics.shape != (len(self.nodes) * self.gpus_per_node, len(self.times),
                                  len(self.metric_names)):
            raise ValidationError(f"metric array shape {self.metrics.shape} does not match grid")

    @property
    def n_ranks(self) -> int:
        return self.metrics.shape[0]

    def rank_node(self, rank: int) -> int:
        return self.nodes[rank // self.gpus_per_node]

    def node_of_ranks(self) -> np.ndarray:
        return np.repeat(np.asarray(self.nodes), self.gpus_per_node)

    def column(self, name: str) -> np.ndarray:
        return self.metrics[:, :, self.metric_names.index(name)]

    @property
    def end(self) -> float:
        return float(self.times[-1]) if len(self.times) else self.init_end

    # -- CSV round trip ---------------------------------------------------------

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        owners = self.node_of_ranks()
        with open(d / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "rank", "node", *self.metric_names])
            for s, t in enumerate(self.times):
                for r in range(self.n_ranks):
                    w.writerow([repr(float(t)), r, int(owners[r]),
                                *(repr(float(v)) for v in self.metrics[r, s])])
        with open(d / "logs.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "node", "level", "text"])
            for line in self.logs:
                w.writerow([repr(line.time), line.node, line.level, line.text])
        meta = {
            "nodes": list(self.nodes),
            "gpus_per_node": self.gpus_per_node,
            "sample_interval": self.sample_interval,
            "init_end": self.init_end,
            "label": self.label,
            "metric_names": list(self.metric_names),
            "faults": [
                {"at": f.at, "category": f.category.value, "node": f.node,
                 "detectable_by": sorted(f.detectable_by)}
                for f in self.faults
            ],
        }
        (d / "meta.json").write_text(json.dumps(meta, indent=2))
        return d

    @classmethod
    def load(cls, directory) -> "TraceBundle":
        d = Path(directory)
        try:
            meta = json.loads((d / "meta.json").read_text())
            rows = np.loadtxt(d / "metrics.csv", delimiter=",", skiprows=1, ndmin=2)
        except (OSError, ValueError) as exc:
            raise ValidationError(f"cannot read trace bundle at {d}: {exc}") from exc
        names = tuple(meta["metric_names"])
        ranks = len(meta["nodes"]) * meta["gpus_per_node"]
        times = rows[::ranks, 0].copy()
        metrics = rows[:, 3:].reshape(len(times), ranks, len(names)).transpose(1, 0, 2).copy()
        logs = []
        with open(d / "logs.csv", newline="") as fh:
            for rec in csv.DictReader(fh):
                logs.append(LogLine(float(rec["time"]), int(rec["node"]), rec["level"], rec["text"]))
        faults = tuple(
            FaultEvent(f["at"], FaultCategory(f["category"]), f["node"], frozenset(f["detectable_by"]))
            for f in meta["faults"]
        )
        return cls(times, metrics, tuple(meta["nodes"]), meta["gpus_per_node"],
                   meta["sample_interval"], meta["init_end"], logs, meta["label"], faults, names)


def loss_curve(train_seconds) -> np.ndarray:
    t = np.asarray(train_seconds, dtype=np.float64)
    return 1.7 + 9.0 * np.exp(-t / 2.0e6)


def _blips(rng, compute_pos, compute, n_compute, blip_prob, shape) -> np.ndarray:
    """Isolated single-sample traffic dropouts inside the compute phase.

    Blips stay two samples away from phase edges so that filtering can't merge
    them into a neighbouring phase.
    """
    R, S = shape
    allowed = compute & (compute_pos >= 2) & (compute_pos <= n_compute - 3)
    blip = (rng.random((R, S)) < blip_prob) & allowed[None, :]
    blip[:, 1:] &= ~blip[:, :-1]
    return blip


def generate_traces(scn, schedule=(), *, start: float = 0.0, end: float | None = None,
                    nodes=None, recoveries: dict | None = None, seed: int = 0,
                    init_prefix: bool = True, workload: str = "train",
                    label: str | None = None) -> TraceBundle:
    """Render metrics and logs for ``nodes`` over ``[start, end]``.

    ``recoveries`` maps an index into ``schedule`` to the time its imprint
    stops; by default faults last until the end of the trace. Faults on nodes
    outside ``nodes`` still make the monitored ranks wait on collectives.
    """
    tp = scn.trace
    dt = tp.sample_interval
    gpn = scn.parallelism.gpus_per_node
    nodes = tuple(range(scn.parallelism.nodes)) if nodes is None else tuple(nodes)
    if end is None:
        end = start + scn.schedule_horizon
    if end < start:
        raise ValidationError("trace end precedes start")
    if tp.compute_samples + tp.sync_samples >= tp.period_samples:
        raise ValidationError("compute and sync phases must leave room for the low phase")
    recoveries = recoveries or {}
    rng = np.random.default_rng(np.random.SeedSequence([scn.rng_seed, int(seed), 0x7ACE]))

    k0, k1 = int(np.ceil(start / dt - 1e-9)), int(np.floor(end / dt + 1e-9))
    idx = np.arange(k0, k1 + 1)
    times = idx * dt
    R, S = len(nodes) * gpn, len(times)
    pos = idx % tp.period_samples
    compute = pos < tp.compute_samples
    compute_pos = np.where(compute, pos, 0)

    sync = (pos >= tp.compute_samples) & (pos < tp.compute_samples + tp.sync_samples)
    phase = np.where(compute, 0, np.where(sync, 1, 2))
    level = {  # (util, ib, nvlink) per phase, traffic in units of peak
        0: (0.95, 0.30, 0.60),
        1: (0.75, 0.90, 0.15),
        2: (0.35, 0.05, 0.30),
    }
    lv = np.array([level[p] for p in phase]).T  # 3 x S
    # bounded jitter: healthy clusters have no sparse tails
    util = lv[0][None, :] + rng.uniform(-0.015, 0.015, (R, S))
    ib = lv[1][None, :] + rng.uniform(-0.02, 0.02, (R, S))
    nv = lv[2][None, :] + rng.uniform(-0.02, 0.02, (R, S))
    for arr in (ib, nv):
        blip = _blips(rng, compute_pos, compute, tp.compute_samples, tp.blip_prob, (R, S))
        arr[blip] = rng.uniform(0.03, 0.07, int(blip.sum()))
    loss = np.broadcast_to(loss_curve(times)[None, :] + rng.normal(0, 0.01, (1, S)), (R, S)).copy()

    init_end = start + (tp.init_prefix if init_prefix else 0.0)
    if workload == "idle":
        util = np.abs(rng.normal(0.0, 0.005, (R, S)))
        ib = np.abs(rng.normal(0.0, 0.002, (R, S)))
        nv = np.abs(rng.normal(0.0, 0.002, (R, S)))
    elif workload != "train":
        raise ValidationError(f"unknown workload {workload!r}")
    init = times < init_end
    if init.any():
        n_init = int(init.sum())
        util[:, init] = rng.uniform(0.0, 0.7, (R, n_init))
        ib[:, init] = rng.uniform(0.0, 0.5, (R, n_init)) * (rng.random((R, n_init)) < 0.3)
        nv[:, init] = rng.uniform(0.0, 0.5, (R, n_init)) * (rng.random((R, n_init)) < 0.3)
        loss[:, init] = 0.0

    owners = np.repeat(np.asarray(nodes), gpn)
    logs: list[LogLine] = []
    for node in nodes:
        t_log = np.arange(np.ceil(start / LOG_INTERVAL) * LOG_INTERVAL, end + 1e-9, LOG_INTERVAL)
        for t in t_log:
            text = "initializing distributed backend" if t < init_end else \
                f"iteration {int(t // scn.step_time) if scn.step_time else 0} | lm loss {loss_curve(t):.4f}"
            logs.append(LogLine(float(t), node, "INFO", text))

    used = []
    for i, ev in enumerate(schedule):
        stop = recoveries.get(i, np.inf)
        if ev.at > end or stop <= start or stop <= ev.at:
            continue
        used.append(ev)
        _imprint(rng, ev, stop, times, owners, util, ib, nv, loss)
        if LOG_BURST in ev.detectable_by:
            logs.extend(_error_burst(rng, ev, nodes, stop))
    util = np.clip(util, 0.0, 1.0)
    ib = np.clip(ib, 0.0, None) * IB_PEAK
    nv = np.clip(nv, 0.0, None) * NVLINK_PEAK
    metrics = np.stack([util, ib, nv, loss], axis=-1)
    logs = [l for l in logs if start <= l.time <= end]
    logs.sort(key=lambda l: (l.time, l.node, l.level, l.text))
    if label is None:
        label = "anomalous" if used else "normal"
    return TraceBundle(times.astype(np.float64), metrics, nodes, gpn, dt, init_end, logs, label,
                       tuple(used))


def _imprint(rng, ev: FaultEvent, stop, times, owners, util, ib, nv, loss) -> None:
    """Write the metric signature of ``ev`` in place (traffic in units of peak)."""
    active = (times >= ev.at) & (times < stop)
    faulty = owners == ev.node if ev.node is not None else np.ones(len(owners), bool)
    peers = ~faulty
    na = int(active.sum())
    if METRIC_FLATLINE in ev.detectable_by:
        # a hung job spins at full utilisation; a crashed process drops to zero
        crash_util = 1.0 if ev.category is FaultCategory.OTHER else 0.0
        for mask, u in ((faulty, crash_util), (peers, 1.0)):
            sel = np.ix_(mask, active)
            util[sel] = u
            ib[sel] = 0.0
            nv[sel] = 0.0
    elif METRIC_DROP in ev.detectable_by:
        fr, pr = int(faulty.sum()), int(peers.sum())
        util[np.ix_(faulty, active)] = rng.uniform(0.45, 0.7, (fr, na))
        ib[np.ix_(faulty, active)] = 0.02 + np.abs(rng.normal(0, 0.01, (fr, na)))
        nv[np.ix_(faulty, active)] = 0.02 + np.abs(rng.normal(0, 0.01, (fr, na)))
        util[np.ix_(peers, active)] = 0.99 + rng.normal(0, 0.003, (pr, na))
        ib[np.ix_(peers, active)] = 0.01
        nv[np.ix_(peers, active)] = 0.01
    loss[:, active] = 0.0


def inject_fault(trace: TraceBundle, ev: FaultEvent, *, stop: float | None = None,
                 seed: int = 0) -> TraceBundle:
    """Copy of ``trace`` with the signature of ``ev`` imprinted on it."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1D5E]))
    stop = trace.end + 1.0 if stop is None else stop
    names = trace.metric_names
    util = trace.column("gpu_util").copy()
    ib = trace.column("ib_traffic") / IB_PEAK
    nv = trace.column("nvlink_traffic") / NVLINK_PEAK
    loss = trace.column("loss").copy()
    _imprint(rng, ev, stop, trace.times, trace.node_of_ranks(), util, ib, nv, loss)
    cols = {"gpu_util": np.clip(util, 0, 1), "ib_traffic": np.clip(ib, 0, None) * IB_PEAK,
            "nvlink_traffic": np.clip(nv, 0, None) * NVLINK_PEAK, "loss": loss}
    metrics = np.stack([cols[n] for n in names], axis=-1)
    logs = list(trace.logs)
    if LOG_BURST in ev.detectable_by:
        logs += [l for l in _error_burst(rng, ev, trace.nodes, stop) if l.time <= trace.end]
        logs.sort(key=lambda l: (l.time, l.node, l.level, l.text))
    return TraceBundle(trace.times.copy(), metrics, trace.nodes, trace.gpus_per_node,
                       trace.sample_interval, trace.init_end, logs, "anomalous",
                       trace.faults + (ev,), names)


def _error_burst(rng, ev: FaultEvent, nodes, stop) -> list[LogLine]:
    out = []
    if ev.node is not None:
        if ev.node in nodes:
            ts = ev.at + np.sort(rng.uniform(0.0, 30.0, 12))
            ts[0] = ev.at
            out += [LogLine(float(t), ev.node, "ERROR", ev.category.cause) for t in ts]
        for node in nodes:
            if node == ev.node:
                continue
            first = ev.at + rng.uniform(10.0, 40.0)
            out += [LogLine(float(first + 20.0 * j), node, "ERROR", PEER_TIMEOUT_TEXT)
                    for j in range(3)]
    else:
        for node in nodes:
            first = ev.at + rng.uniform(0.0, 0.5)
            out += [LogLine(float(first + 0.1 * j), node, "ERROR", ev.category.cause)
                    for j in range(4)]
    return [l for l in out if l.time < stop]
