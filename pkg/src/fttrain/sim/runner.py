"""End-to-end training run under faults, with or without automated recovery.

Time is kept in integer microseconds so that the accounting identity

    duration = productive + checkpoint + fault_downtime + recovery

holds exactly. Work rolled back to the last checkpoint after a fault is moved
from productive time into fault downtime.
"""

from __future__ import annotations

import csv
import functools
import heapq
import io
import itertools
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..core import ConfigError, FaultCategory
from ..tce.perf import (PerfModelInputs, cached_save_latency, direct_save_latency,
                        load_latency, max_save_size, node_restore_latency)
from ..tol.job import InsufficientCapacity, Job, NodePool, RecoveryAction
from ..tol.lease import LeaseServer
from ..tol.states import LauncherState
from ..tol.tasks import NodeHealth
from .schedule import FaultEvent, iter_faults
from .traces import generate_traces, loss_curve

US = 1_000_000
LOSS_SAMPLE_PERIOD = 600.0

# sub-task an attributable fault makes fail during checks
FAILING_SUBTASK = {
    FaultCategory.STORAGE_IO: "disk_check",
    FaultCategory.NETWORK_COMM: "comm_test",
    FaultCategory.NODE_HW_SW: "gpu_burn",
}

COMPONENTS_ON = ("detection", "election", "error_check", "reschedule", "warmup",
                 "process_restart", "ckpt_load")
COMPONENTS_OFF = ("manual", "ckpt_load")


def _us(seconds: float) -> int:
    return int(round(seconds * US))


def _s(us: int) -> float:
    return us / US


@dataclass(frozen=True)
class RestartRecord:
    index: int
    at: float
    category: str
    node: int | None
    action: str
    detected: bool
    detection_latency: float
    localization_correct: bool | None
    lost_work: float
    components: dict
    duration: float


@dataclass(frozen=True)
class Segment:
    start: float
    end: float
    kind: str          # train | checkpoint | downtime | recovery
    work_start: float  # training progress (s) at segment start


@dataclass(frozen=True)
class SimReport:
    scenario_id: str
    orchestration: str
    seed: int
    duration: float
    productive: float
    checkpoint: float
    fault_downtime: float
    recovery: float
    faults_injected: int
    faults_masked: int
    checkpoints: int
    checkpoint_save_latency: float
    restarts: tuple
    timeline: tuple = field(repr=False)
    transitions_csv: str = field(default="", repr=False)

    @property
    def effective_fraction(self) -> float:
        return self.productive / self.duration if self.duration else 1.0

    @property
    def restart_durations(self) -> list[float]:
        return [r.duration for r in self.restarts]

    def attributable_restarts(self) -> list[RestartRecord]:
        return [r for r in self.restarts if r.node is not None]

    def summary(self) -> dict:
        att = self.attributable_restarts()
        mean_att = sum(r.duration for r in att) / len(att) if att else 0.0
        comps = COMPONENTS_ON if self.orchestration == "on" else COMPONENTS_OFF
        breakdown = {c: (sum(r.components.get(c, 0.0) for r in att) / len(att) if att else 0.0)
                     for c in comps}
        return {
            "scenario_id": self.scenario_id,
            "orchestration": self.orchestration,
            "seed": self.seed,
            "end_to_end_duration": self.duration,
            "end_to_end_days": self.duration / 86400.0,
            "productive": self.productive,
            "checkpoint": self.checkpoint,
            "fault_downtime": self.fault_downtime,
            "recovery": self.recovery,
            "effective_training_fraction": self.effective_fraction,
            "faults_injected": self.faults_injected,
            "faults_masked": self.faults_masked,
            "checkpoints": self.checkpoints,
            "checkpoint_save_latency": self.checkpoint_save_latency,
            "mean_restart_attributable": mean_att,
            "mean_restart_breakdown_attributable": breakdown,
            "detected": sum(r.detected for r in self.restarts),
            "localized_correctly": sum(bool(r.localization_correct) for r in self.restarts),
        }

    def to_dict(self) -> dict:
        return {
            **self.summary(),
            "restarts": [asdict(r) for r in self.restarts],
            "checkpoint_load_latencies": [r.components.get("ckpt_load", 0.0)
                                          for r in self.restarts],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def restarts_csv(self) -> str:
        comps = COMPONENTS_ON if self.orchestration == "on" else COMPONENTS_OFF
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "at", "category", "node", "action", "detected",
                    "detection_latency", "localization_correct", "lost_work", *comps, "duration"])
        for r in self.restarts:
            w.writerow([r.index, repr(r.at), r.category, "" if r.node is None else r.node,
                        r.action, r.detected, repr(r.detection_latency),
                        "" if r.localization_correct is None else r.localization_correct,
                        repr(r.lost_work), *(repr(r.components.get(c, 0.0)) for c in comps),
                        repr(r.duration)])
        return buf.getvalue()

    def loss_csv(self, period: float = LOSS_SAMPLE_PERIOD) -> str:
        """Loss sampled on a fixed grid; zero while not training."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "loss"])
        segs = self.timeline
        i = 0
        for k in itertools.count():
            t = k * period
            if t > self.duration:
                break
            while i < len(segs) - 1 and segs[i].end <= t:
                i += 1
            seg = segs[i] if segs else None
            value = 0.0
            if seg is not None and seg.kind == "train" and seg.start <= t < seg.end:
                value = float(loss_curve(seg.work_start + (t - seg.start)))
            w.writerow([repr(t), repr(value)])
        return buf.getvalue()


@functools.lru_cache(maxsize=8)
def default_models(trace_profile):
    """Detection models trained on healthy traces shaped by ``trace_profile``."""
    from ..tee.training import offline_train
    from .corpus import normal_traces
    from .scenario import builtin_scenario

    scn = replace(builtin_scenario("small"), trace=trace_profile)
    models = offline_train(normal_traces(scn, 6, duration=3 * 3600.0, seed=7000), seed=0)
    if not models.passed:
        raise ConfigError("default detection models failed their held-out gate")
    return models


class _Sim:
    def __init__(self, scn, orchestration: str, models=None, detection_cfg=None):
        if orchestration not in ("on", "off"):
            raise ConfigError("orchestration must be 'on' or 'off'")
        if scn.total_steps > 0 and not scn.step_time > 0:
            raise ConfigError("zero step rate never terminates")
        self.scn = scn
        self.on = orchestration == "on"
        self.orchestration = orchestration
        perf = PerfModelInputs(scn.model, scn.parallelism, scn.bandwidths)
        self.shard_bytes = max_save_size(perf)
        if self.on:
            self.save_cost = cached_save_latency(perf)
            self.local_load = load_latency(perf)
            self.restore_load = max(self.local_load, node_restore_latency(perf))
        else:
            self.save_cost = direct_save_latency(perf)
            self.local_load = self.restore_load = direct_save_latency(perf)
        self.rng = np.random.default_rng(np.random.SeedSequence([scn.rng_seed, 0x4A11]))
        self.models = models
        self.detection_cfg = detection_cfg

        # event queue ordered by (time, insertion sequence)
        self._queue: list = []
        self._seq = itertools.count()
        self.t = 0
        self.work = 0
        self.ckpt_work = 0
        self.productive = self.checkpoint = self.downtime = self.recovery = 0
        self.timeline: list[Segment] = []
        self.restarts: list[RestartRecord] = []
        self.masked = 0
        self.injected = 0
        self.n_ckpt = 0

        n = scn.parallelism.nodes
        self.slots = list(range(n))
        self.job = None
        if self.on:
            rp = scn.recovery
            self.job = Job("job0", list(range(n)), server=LeaseServer(rp.lease_duration),
                           pool=NodePool(range(n, n + scn.spare_nodes)),
                           durations=rp.subtask_durations, task_timeout=rp.task_timeout)
            # warm-up before the clock starts
            self.job.start(-rp.warmup)
            self._repaired = itertools.count(n + scn.spare_nodes)

    # -- event queue -----------------------------------------------------------

    def push(self, t_us: int, kind: str, payload=None):
        heapq.heappush(self._queue, (t_us, next(self._seq), kind, payload))

    def _segment(self, dur_us: int, kind: str):
        if dur_us <= 0:
            return
        start = self.t
        self.t += dur_us
        self.timeline.append(Segment(_s(start), _s(self.t), kind, _s(self.work)))
        if kind == "checkpoint":
            self.checkpoint += dur_us
        elif kind == "downtime":
            self.downtime += dur_us
        elif kind == "recovery":
            self.recovery += dur_us

    def _train(self, dur_us: int):
        if dur_us <= 0:
            return
        start = self.t
        self.timeline.append(Segment(_s(start), _s(start + dur_us), "train", _s(self.work)))
        self.t += dur_us
        self.work += dur_us
        self.productive += dur_us

    # -- main loop -------------------------------------------------------------

    def run(self) -> SimReport:
        scn = self.scn
        total = _us(scn.work_seconds)
        interval = _us(scn.checkpoint_interval)
        faults = iter_faults(scn)
        nxt = next(faults, None)
        if nxt is not None:
            self.push(_us(nxt.at), "fault", nxt)
        fault_idx = 0
        while self.work < total:
            to_done = total - self.work
            to_ckpt = (self.ckpt_work + interval - self.work) if interval > 0 else math.inf
            head = self._queue[0][0] if self._queue else math.inf
            to_fault = head - self.t
            step = min(to_done, to_ckpt, to_fault)
            if step > 0:
                self._train(int(step))
            if self.work >= total:
                break
            if interval > 0 and self.work - self.ckpt_work >= interval and step != to_fault:
                self._segment(_us(self.save_cost), "checkpoint")
                self.ckpt_work = self.work
                self.n_ckpt += 1
                continue
            # a fault is due (possibly deferred past a checkpoint or recovery)
            t_ev, _, kind, ev = heapq.heappop(self._queue)
            nxt = next(faults, None)
            if nxt is not None:
                self.push(_us(nxt.at), "fault", nxt)
            # a fault that arrived mid-checkpoint takes effect once the save completes
            self.injected += 1
            self._handle_fault(fault_idx, ev)
            fault_idx += 1
            # anything that arrived while the job was down is absorbed
            while self._queue and self._queue[0][0] < self.t:
                heapq.heappop(self._queue)
                self.injected += 1
                self.masked += 1
                nxt = next(faults, None)
                if nxt is not None:
                    self.push(_us(nxt.at), "fault", nxt)
        assert self.t == self.productive + self.checkpoint + self.downtime + self.recovery
        assert self.productive == total
        log_csv = self.job.transitions.csv_text() if self.job is not None else ""
        return SimReport(scn.scenario_id, self.orchestration, scn.rng_seed, _s(self.t),
                         _s(self.productive), _s(self.checkpoint), _s(self.downtime),
                         _s(self.recovery), self.injected, self.masked, self.n_ckpt,
                         self.save_cost, tuple(self.restarts), tuple(self.timeline), log_csv)

    # -- fault handling ----------------------------------------------------------

    def _handle_fault(self, idx: int, ev: FaultEvent):
        at = _s(self.t)
        lost = self.work - self.ckpt_work
        self.work = self.ckpt_work
        self.productive -= lost
        self.downtime += lost
        if self.on:
            rec = self._recover_on(idx, at, ev, lost)
        else:
            rec = self._recover_off(idx, at, ev, lost)
        self.restarts.append(rec)

    def _recover_off(self, idx, at, ev, lost) -> RestartRecord:
        rp = self.scn.recovery
        manual = float(self.rng.uniform(rp.manual_min, rp.manual_max))
        comps = {"manual": manual, "ckpt_load": self.local_load}
        self._segment(_us(manual), "downtime")
        self._segment(_us(self.local_load), "recovery")
        return RestartRecord(idx, at, ev.category.value, ev.node, "Manual", True,
                             manual, None, _s(lost), comps, manual + self.local_load)

    def _detect(self, idx, ev):
        """First polling instant at which the detector flags the fault."""
        from ..tee.detect import detect_window
        from ..tee.logs import LineClassifier, log_window

        scn = self.scn
        rp = scn.recovery
        models = self.models
        if models is None:
            models = self.models = default_models(scn.trace)
        cfg = self.detection_cfg or models.config
        n = scn.parallelism.nodes
        at = _s(self.t)
        if ev.node is not None:
            nodes = (ev.node, (ev.node + 1) % n) if n > 1 else (ev.node,)
        else:
            nodes = (0, 1) if n > 1 else (0,)
        local = FaultEvent(at, ev.category, ev.node, ev.detectable_by)
        start = at - cfg.window_W - 4 * scn.trace.sample_interval
        end = at + rp.detection_timeout
        trace = generate_traces(scn, [local], start=start, end=end, nodes=nodes,
                                seed=10_000 + idx, init_prefix=False)
        clf = LineClassifier(cfg.error_patterns)
        first_poll = math.floor(at / rp.poll_period + 1) * rp.poll_period
        t = first_poll
        while t <= end:
            mt = models.preprocessor.window(trace, t)
            lt = log_window(trace, t, cfg.window_W, clf)
            res = detect_window(lt, mt, models, cfg, job=self.job.job_id)
            if res.anomalous:
                return t - at, True, set(res.implicated_nodes)
            t += rp.poll_period
        return rp.detection_timeout, False, set()

    def _recover_on(self, idx, at, ev, lost) -> RestartRecord:
        job, rp = self.job, self.scn.recovery
        comps = dict.fromkeys(COMPONENTS_ON, 0.0)
        latency, detected, located_slots = self._detect(idx, ev)
        comps["detection"] = latency
        self._segment(_us(latency), "downtime")

        now = _s(self.t)
        job.elect(now)
        job.poll_anomaly(lambda _t: True, now)
        faulty = self.slots[ev.node] if ev.node is not None else None
        health = NodeHealth()
        if faulty is not None:
            health.failing[faulty] = {FAILING_SUBTASK[ev.category]}
        check = job.error_check(health, now)
        comps["error_check"] = check.barrier_time
        located = {self.slots[s] for s in located_slots}
        loc_ok = None
        if detected:
            loc_ok = located == ({faulty} if faulty is not None else set())
        decision = job.decide_recovery(check, located, now + check.barrier_time)
        t_rel = now + check.barrier_time
        if decision.action is RecoveryAction.LOCAL_RESTART:
            comps["process_restart"] = rp.process_restart
            job.resume_local(t_rel + rp.process_restart)
            comps["ckpt_load"] = self.local_load
        else:
            wait = 0.0
            fresh = decision.replacements
            while decision.waiting_capacity and len(fresh) < len(decision.abnormal_nodes):
                # an operator repairs a node and returns it to the pool
                wait += float(self.rng.uniform(rp.manual_min, rp.manual_max))
                job.pool.free.append(next(self._repaired))
                try:
                    fresh = job.retry_allocation(t_rel + wait)
                except InsufficientCapacity:
                    continue
            comps["reschedule"] = rp.reschedule + wait
            t_start = t_rel + comps["reschedule"]
            elapsed = job.start(t_start)
            delay = job.election_delay(t_start)
            comps["election"] = delay
            comps["warmup"] = elapsed - delay
            evicted = [i for i, node in enumerate(self.slots) if node in decision.abnormal_nodes]
            for slot, node in zip(evicted, fresh):
                self.slots[slot] = node
            comps["ckpt_load"] = self.restore_load
        rest = sum(v for k, v in comps.items() if k != "detection")
        self._segment(_us(rest), "recovery")
        if LauncherState.EXECUTION not in job.states or any(
                s is not LauncherState.EXECUTION for s in job.states):
            raise RuntimeError("job failed to return to EXECUTION")
        action = decision.action.value
        return RestartRecord(idx, at, ev.category.value, ev.node, action, detected, latency,
                             loc_ok, _s(lost), comps, latency + rest)


def run(scn, orchestration: str = "on", *, models=None, detection_cfg=None) -> SimReport:
    """Simulate the whole workload of ``scn`` and account for where time went."""
    return _Sim(scn, orchestration, models, detection_cfg).run()
