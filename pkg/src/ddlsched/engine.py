"""Discrete-event simulation of multiple training jobs on a GPU cluster.

Each worker of a job runs its own forward and backward task on its pinned
GPU; a GPU executes one task at a time and picks among resident jobs' ready
tasks by shortest remaining service. The iteration's all-reduce waits for
every worker's backward (the barrier), drains through the shared link
tracker, and releases the next iteration's forwards on completion.

Scheduling decisions are re-evaluated whenever an event can change their
inputs, which is equivalent to re-deciding at every event: admission
verdicts only flip when link membership changes, and placement feasibility
only when memory does.

Workers started together on idle GPUs complete together (homogeneous GPUs,
identical durations), so they share one cohort event; when a job holds all
of its GPUs exclusively, whole iterations are coalesced into a single event
span and split analytically if a later placement shares those GPUs.
"""
from __future__ import annotations

import hashlib
import heapq
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Union

from .contention import LinkState
from .model import (
    ClusterConfig,
    ClusterState,
    CommTask,
    CostModel,
    GpuId,
    JobRuntime,
    JobSpec,
    compute_task_durations,
)
from .placement import PlacementPolicy, commit_placement, parse_placement, srsf_priority
from .scheduling import parse_scheduler


class EventKind(IntEnum):
    # rank decides processing order among simultaneous events
    COMM_DONE = 0
    COMPUTE_DONE = 1
    ARRIVAL = 2


_NO_GPUS: tuple = ()


class DeadlockError(RuntimeError):
    """No runnable event remains while jobs are unfinished (policy bug or
    infeasible job)."""

    def __init__(self, message: str, stuck_jobs: list[int]):
        super().__init__(message)
        self.stuck_jobs = stuck_jobs


@dataclass(frozen=True)
class JobRecord:
    job_id: int
    arrival_s: float
    finish_s: float

    @property
    def jct_s(self) -> float:
        return self.finish_s - self.arrival_s


def compute_metrics(
    job_records: list[JobRecord],
    gpu_busy: Optional[dict[GpuId, float]] = None,
    first_arrival: float = 0.0,
    last_finish: float = 0.0,
) -> dict[str, float]:
    """Aggregate metrics: mean / lower-median / nearest-rank 95th percentile
    of JCT, plus per-GPU busy fraction over [first arrival, last finish]
    averaged over GPUs."""
    jcts = sorted(r.jct_s for r in job_records)
    n = len(jcts)
    if n == 0:
        return {
            "avg_jct_s": 0.0,
            "median_jct_s": 0.0,
            "p95_jct_s": 0.0,
            "avg_gpu_utilization": 0.0,
        }
    horizon = last_finish - first_arrival
    avg_util = 0.0
    if gpu_busy and horizon > 0:
        utils = [busy / horizon for busy in gpu_busy.values()]
        avg_util = sum(utils) / len(utils)
    return {
        "avg_jct_s": sum(jcts) / n,
        "median_jct_s": jcts[(n - 1) // 2],
        "p95_jct_s": jcts[math.ceil(0.95 * n) - 1],
        "avg_gpu_utilization": avg_util,
    }


def trace_fingerprint(trace: list[JobSpec]) -> str:
    h = hashlib.sha256()
    for s in sorted(trace, key=lambda x: x.job_id):
        h.update(
            f"{s.job_id},{s.arrival_time},{s.n_gpus},{s.iterations},{s.profile.name};".encode()
        )
    return h.hexdigest()[:16]


@dataclass
class SimReport:
    placement: str
    scheduler: str
    seed: int
    trace_hash: str
    jobs: list[JobRecord] = field(default_factory=list)
    gpu_busy: dict[GpuId, float] = field(default_factory=dict)
    first_arrival: float = 0.0
    last_finish: float = 0.0
    forward_tasks: int = 0
    backward_tasks: int = 0
    comm_tasks: int = 0

    @property
    def horizon(self) -> float:
        return self.last_finish - self.first_arrival

    def jcts(self) -> list[float]:
        return [r.jct_s for r in self.jobs]

    def gpu_utilizations(self) -> dict[GpuId, float]:
        h = self.horizon
        return {gid: (busy / h if h > 0 else 0.0) for gid, busy in self.gpu_busy.items()}

    def aggregates(self) -> dict[str, float]:
        return compute_metrics(self.jobs, self.gpu_busy, self.first_arrival, self.last_finish)

    def cdf_points(self) -> list[tuple[float, float]]:
        jcts = sorted(self.jcts())
        n = len(jcts)
        return [(x, (i + 1) / n) for i, x in enumerate(jcts)]

    def to_dict(self) -> dict:
        utils = self.gpu_utilizations()
        return {
            "placement": self.placement,
            "scheduler": self.scheduler,
            "seed": self.seed,
            "trace_hash": self.trace_hash,
            "first_arrival_s": self.first_arrival,
            "last_finish_s": self.last_finish,
            "aggregates": self.aggregates(),
            "jobs": [
                {
                    "job_id": r.job_id,
                    "arrival_s": r.arrival_s,
                    "finish_s": r.finish_s,
                    "jct_s": r.jct_s,
                }
                for r in self.jobs
            ],
            "gpus": [
                {
                    "server": gid.server,
                    "gpu": gid.gpu,
                    "busy_s": busy,
                    "utilization": utils[gid],
                }
                for gid, busy in sorted(self.gpu_busy.items())
            ],
            "counters": {
                "forward_tasks": self.forward_tasks,
                "backward_tasks": self.backward_tasks,
                "comm_tasks": self.comm_tasks,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


class Simulation:
    """One simulation run; owns its cluster, link and job state exclusively."""

    def __init__(
        self,
        config: ClusterConfig,
        trace: list[JobSpec],
        placement: Union[str, PlacementPolicy] = "lwf:1",
        scheduler="ada-srsf",
        seed: int = 0,
        coalesce: bool = True,
        validate: bool = False,
        capture_events: bool = False,
    ):
        if isinstance(placement, str):
            placement = parse_placement(placement, seed=seed)
        if isinstance(scheduler, str):
            scheduler = parse_scheduler(scheduler)
        self.config = config
        self.model: CostModel = config.cost_model
        self.trace = sorted(trace, key=lambda s: (s.arrival_time, s.job_id))
        self.placement = placement
        self.scheduler = scheduler
        self.seed = seed
        self.coalesce = coalesce
        self.validate = validate
        self.capture_events = capture_events
        self.events_log: list[tuple] = []

        self.cluster = ClusterState(config)
        self.link = LinkState(self.model, cap=scheduler.link_cap)
        self.runtimes: dict[int, JobRuntime] = {}
        self.queue: list[int] = []
        self.now = 0.0
        self.link_time = 0.0
        self.report = SimReport(
            placement=placement.name,
            scheduler=scheduler.name,
            seed=seed,
            trace_hash=trace_fingerprint(self.trace),
        )
        self._heap: list[tuple] = []
        self._comm_waiting: set[int] = set()
        self._admission_stamps: dict[int, int] = {}
        self._freed_gpus: set[GpuId] = set()
        self._ready_gpus: set[GpuId] = set()
        self._placement_due = False
        self._admission_due = False
        self._link_touched = False

        for spec in self.trace:
            if spec.n_gpus > config.total_gpus:
                raise DeadlockError(
                    f"job {spec.job_id} needs {spec.n_gpus} GPUs but the cluster "
                    f"has {config.total_gpus}",
                    [spec.job_id],
                )
            rt = JobRuntime(spec=spec)
            rt.t_f, rt.t_b = compute_task_durations(spec.profile)
            self.runtimes[spec.job_id] = rt
            heapq.heappush(
                self._heap, (spec.arrival_time, EventKind.ARRIVAL, spec.job_id, 0, "", _NO_GPUS)
            )

    # -- ordering keys -------------------------------------------------------
    # Jobs in "workers" or "comm" mode only change remaining service at their
    # own completion events, so the key is cached and dropped at mutations.

    def _remaining_service(self, rt: JobRuntime) -> tuple[float, float, int]:
        key = rt.srsf_key
        if key is None:
            key = rt.srsf_key = (
                rt.remaining_workload(self.now, self.model),
                rt.spec.arrival_time,
                rt.spec.job_id,
            )
        return key

    def _log(self, kind: str, jid: int) -> None:
        if self.capture_events:
            self.events_log.append((self.now, kind, jid, self.runtimes[jid].iteration_cursor))

    # -- job state transitions -------------------------------------------------

    def _gang_exclusive(self, rt: JobRuntime) -> bool:
        gpus = self.cluster.gpus
        return all(len(gpus[g].resident_jobs) == 1 for g in rt.allocated_gpus)

    def _release_iteration(self, rt: JobRuntime) -> None:
        """Make the next iteration's forward tasks ready; on an exclusively
        held gang this starts a coalesced run immediately (the GPUs are
        necessarily idle), otherwise workers queue per GPU."""
        jid = rt.spec.job_id
        if self.coalesce and self._gang_exclusive(rt):
            iters = 1 if rt.multi_server else rt.spec.iterations - rt.iteration_cursor
            rt.pending = "run"
            rt.running = True
            rt.run_start = self.now
            rt.run_iters = iters
            end = self.now + iters * (rt.t_f + rt.t_b)
            for g in rt.allocated_gpus:
                self.cluster.gpus[g].busy_until = end
            heapq.heappush(
                self._heap, (end, EventKind.COMPUTE_DONE, jid, rt.run_gen, "run", _NO_GPUS)
            )
        else:
            rt.pending = "workers"
            rt.running = False
            rt.worker_phase = {g: "forward" for g in rt.allocated_gpus}
            rt.worker_running = set()
            rt.forwards_done = 0
            rt.backwards_done = 0
            self._ready_gpus.update(rt.allocated_gpus)

    def _split_run(self, rt: JobRuntime) -> None:
        """Re-materialize an in-flight coalesced run as per-worker state at
        the current instant (a new co-resident arrived on its GPUs)."""
        jid = rt.spec.job_id
        t_f, t_b = rt.t_f, rt.t_b
        d = t_f + t_b
        k_done = min(int((self.now - rt.run_start) // d), rt.run_iters - 1)
        r = self.now - rt.run_start - k_done * d
        n = rt.spec.n_gpus
        rt.srsf_key = None
        rt.iteration_cursor += k_done
        rt.run_gen += 1  # orphan the scheduled run-completion event
        for g in rt.allocated_gpus:
            self.cluster.gpus[g].busy_accumulated += k_done * d
        self.report.forward_tasks += k_done * n
        self.report.backward_tasks += k_done * n
        base = rt.run_start + k_done * d
        rt.pending = "workers"
        rt.running = False
        gang = rt.allocated_gpus
        if r == 0.0:
            rt.worker_phase = {g: "forward" for g in gang}
            rt.worker_running = set()
            rt.forwards_done = 0
            rt.backwards_done = 0
            for g in gang:
                self.cluster.gpus[g].busy_until = self.now
            self._ready_gpus.update(gang)
            return
        if r < t_f:
            phase, end = "forward", base + t_f
            rt.worker_phase = {g: "forward" for g in gang}
            rt.forwards_done = 0
        else:
            for g in gang:
                self.cluster.gpus[g].busy_accumulated += t_f
            self.report.forward_tasks += n
            phase, end = "backward", base + d
            rt.worker_phase = {g: "backward" for g in gang}
            rt.forwards_done = n
        rt.backwards_done = 0
        rt.worker_running = set(gang)
        for g in gang:
            self.cluster.gpus[g].busy_until = end
        heapq.heappush(
            self._heap, (end, EventKind.COMPUTE_DONE, jid, rt.run_gen, phase, tuple(gang))
        )

    def _finish_job(self, rt: JobRuntime) -> None:
        jid = rt.spec.job_id
        rt.finish_time = self.now
        rt.pending = None
        rt.running = False
        for g in rt.allocated_gpus:
            gs = self.cluster.gpus[g]
            gs.memory_used -= rt.spec.profile.gpu_memory_usage
            gs.resident_jobs.discard(jid)
        self.report.jobs.append(
            JobRecord(job_id=jid, arrival_s=rt.spec.arrival_time, finish_s=self.now)
        )
        self._log("finish", jid)
        self._placement_due = True

    def _comm_ready(self, rt: JobRuntime) -> None:
        spec = rt.spec
        rt.pending = "comm"
        rt.running = False
        rt.comm_task = CommTask(
            job_id=spec.job_id,
            total_bytes=spec.profile.model_size,
            bytes_remaining=spec.profile.model_size,
            server_set=rt.server_set,
        )
        self._comm_waiting.add(spec.job_id)
        self._admission_due = True

    def _iteration_complete(self, rt: JobRuntime) -> None:
        rt.iteration_cursor += 1
        if rt.iteration_cursor >= rt.spec.iterations:
            self._finish_job(rt)
        else:
            self._release_iteration(rt)

    # -- event handlers ----------------------------------------------------

    def _on_comm_done(self, jid: int) -> None:
        rt = self.runtimes[jid]
        rt.srsf_key = None
        rt.comm_task = None
        self.report.comm_tasks += 1
        self._log("comm_done", jid)
        self._admission_due = True
        self._iteration_complete(rt)

    def _on_compute_done(self, jid: int, phase: str, gpus: tuple) -> None:
        rt = self.runtimes[jid]
        rt.srsf_key = None
        cluster_gpus = self.cluster.gpus
        if phase == "run":
            n_iters = rt.run_iters
            span = n_iters * (rt.t_f + rt.t_b)
            for g in rt.allocated_gpus:
                cluster_gpus[g].busy_accumulated += span
            workers = rt.spec.n_gpus
            self.report.forward_tasks += n_iters * workers
            self.report.backward_tasks += n_iters * workers
            self._log("backward_done", jid)
            self._freed_gpus.update(rt.allocated_gpus)
            rt.running = False
            rt.iteration_cursor += n_iters - 1
            if rt.multi_server:
                self._comm_ready(rt)
            else:
                self._iteration_complete(rt)
            return
        if phase == "forward":
            for g in gpus:
                cluster_gpus[g].busy_accumulated += rt.t_f
                rt.worker_phase[g] = "backward"
                rt.worker_running.discard(g)
            rt.forwards_done += len(gpus)
            self.report.forward_tasks += len(gpus)
            self._log("forward_done", jid)
            self._freed_gpus.update(gpus)
            return
        # backward cohort
        for g in gpus:
            cluster_gpus[g].busy_accumulated += rt.t_b
            rt.worker_phase[g] = None
            rt.worker_running.discard(g)
        rt.backwards_done += len(gpus)
        self.report.backward_tasks += len(gpus)
        self._freed_gpus.update(gpus)
        if rt.backwards_done == rt.spec.n_gpus:
            self._log("backward_done", jid)
            if rt.multi_server:
                self._comm_ready(rt)
            else:
                self._iteration_complete(rt)

    # -- scheduling passes ---------------------------------------------------

    def _refresh_ledger(self) -> None:
        runtimes = self.runtimes
        now, model = self.now, self.model
        for gs in self.cluster.gpus.values():
            gs.remaining_workload = sum(
                runtimes[jid].remaining_workload(now, model) for jid in gs.resident_jobs
            )

    def _placement_pass(self) -> None:
        if not self.queue:
            return
        self._refresh_ledger()
        self.queue.sort(key=lambda jid: srsf_priority(self.runtimes[jid].spec))
        still_queued = []
        for jid in self.queue:
            rt = self.runtimes[jid]
            gpus = self.placement.select(rt.spec, self.cluster)
            if not gpus:
                still_queued.append(jid)
                continue
            commit_placement(self.cluster, rt.spec, gpus, self.model)
            rt.allocated_gpus = tuple(gpus)
            rt.server_set = frozenset(g.server for g in gpus)
            rt.srsf_key = None
            self._log("placed", jid)
            # sharing a GPU with a coalesced run forces it back to eventing
            for gid in gpus:
                for other in list(self.cluster.gpus[gid].resident_jobs):
                    if other != jid:
                        ort = self.runtimes[other]
                        if ort.pending == "run" and ort.running:
                            self._split_run(ort)
            self._release_iteration(rt)
        self.queue = still_queued

    def _sync_link(self) -> None:
        """Integrate the link up to the current instant. Horizon events
        guarantee a batch at every completion time, so no completion is ever
        crossed mid-interval."""
        if self.link_time < self.now:
            if self.link.active:
                self._link_touched = True
                for jid in self.link.advance(self.now - self.link_time):
                    self._on_comm_done(jid)
            self.link_time = self.now

    def _admission_pass(self) -> None:
        self._sync_link()  # decisions read incumbents' live remaining bytes
        if not self._comm_waiting:
            return
        ready = sorted(
            (self.runtimes[jid] for jid in self._comm_waiting),
            key=self._remaining_service,
        )
        link = self.link
        stamps = self._admission_stamps
        for rt in ready:
            jid = rt.spec.job_id
            # a rejected task stays rejected until the incumbent set on its
            # servers changes: drained bytes only raise the size ratio
            stamp = link.membership_stamp(rt.server_set)
            if stamps.get(jid) == stamp:
                continue
            decision = self.scheduler.decide(link, rt.comm_task, self.model)
            if decision.start_now:
                link.admit(rt.comm_task, self.now)
                self._link_touched = True
                rt.running = True
                self._comm_waiting.discard(jid)
                stamps.pop(jid, None)
                self._log("comm_start", jid)
            else:
                stamps[jid] = stamp

    def _compute_pass(self) -> None:
        """Start ready worker tasks on idle affected GPUs, shortest remaining
        service first; workers of one job starting the same phase at the
        same instant share one completion event."""
        affected = self._freed_gpus | self._ready_gpus
        runtimes = self.runtimes
        cluster_gpus = self.cluster.gpus
        now = self.now
        starts: dict[tuple[int, str], list[GpuId]] = {}
        for gid in sorted(affected):
            gs = cluster_gpus[gid]
            if gs.busy_until > now:
                continue
            best = None
            best_key = None
            for jid in gs.resident_jobs:
                rt = runtimes[jid]
                if (
                    rt.pending == "workers"
                    and rt.worker_phase.get(gid)
                    and gid not in rt.worker_running
                ):
                    key = self._remaining_service(rt)
                    if best_key is None or key < best_key:
                        best, best_key = rt, key
            if best is None:
                continue
            phase = best.worker_phase[gid]
            dur = best.t_f if phase == "forward" else best.t_b
            best.worker_running.add(gid)
            gs.busy_until = now + dur
            starts.setdefault((best.spec.job_id, phase), []).append(gid)
        for (jid, phase), gpus in starts.items():
            rt = runtimes[jid]
            dur = rt.t_f if phase == "forward" else rt.t_b
            heapq.heappush(
                self._heap,
                (now + dur, EventKind.COMPUTE_DONE, jid, rt.run_gen, phase, tuple(gpus)),
            )

    def _push_horizon(self) -> None:
        """Schedule a batch at the link's earliest completion. Completion
        times are anchored at link_time (the last integration point); the
        nextafter guard keeps sub-ulp remainders from stalling the clock."""
        nxt = self.link.next_completion_time()
        if nxt is None:
            return
        when = max(self.link_time + nxt, math.nextafter(self.now, math.inf))
        heapq.heappush(self._heap, (when, EventKind.COMM_DONE, -1, 0, "", _NO_GPUS))

    # -- invariant checks (validate mode) --------------------------------------

    def _check_invariants(self) -> None:
        cap = self.scheduler.link_cap
        if cap is not None:
            for server, tasks in self.link.server_tasks.items():
                assert len(tasks) <= cap, (
                    f"server {server} runs {len(tasks)} comm tasks, cap {cap}, t={self.now}"
                )
        for gs in self.cluster.gpus.values():
            if gs.busy_until > self.now:
                continue
            for jid in gs.resident_jobs:
                rt = self.runtimes[jid]
                assert not (
                    rt.pending == "workers"
                    and rt.worker_phase.get(gs.id)
                    and gs.id not in rt.worker_running
                ), f"GPU {gs.id} idle at t={self.now} with ready task of job {jid}"

    # -- main loop ----------------------------------------------------------

    def run(self) -> SimReport:
        heap = self._heap
        while heap:
            t = heap[0][0]
            self.now = t
            self._freed_gpus = set()
            self._ready_gpus = set()
            self._placement_due = False
            self._admission_due = False
            self._link_touched = False

            while heap and heap[0][0] == t:
                _, kind, jid, gen, phase, gpus = heapq.heappop(heap)
                if kind == EventKind.COMM_DONE:
                    self._sync_link()
                elif kind == EventKind.COMPUTE_DONE:
                    rt = self.runtimes[jid]
                    if gen == rt.run_gen:
                        self._on_compute_done(jid, phase, gpus)
                else:  # ARRIVAL
                    self.queue.append(jid)
                    self._placement_due = True

            if self._placement_due:
                self._placement_pass()
            if self._admission_due or self._link_touched:
                self._admission_pass()
            if self._freed_gpus or self._ready_gpus:
                self._compute_pass()
            if self._link_touched:
                self._push_horizon()
            if self.validate:
                self._check_invariants()

        unfinished = sorted(jid for jid, rt in self.runtimes.items() if rt.finish_time is None)
        if unfinished or self.link.active:
            raise DeadlockError(
                f"{len(unfinished)} job(s) cannot make progress "
                f"(stuck: {unfinished[:5]}{'...' if len(unfinished) > 5 else ''})",
                unfinished,
            )
        if self.trace:
            self.report.first_arrival = min(s.arrival_time for s in self.trace)
            self.report.last_finish = max(r.finish_s for r in self.report.jobs)
        self.report.jobs.sort(key=lambda r: r.job_id)
        self.report.gpu_busy = {gs.id: gs.busy_accumulated for gs in self.cluster.gpus_in_order()}
        return self.report


def run_sim(
    config: ClusterConfig,
    trace: list[JobSpec],
    placement: Union[str, PlacementPolicy] = "lwf:1",
    scheduler="ada-srsf",
    seed: int = 0,
    coalesce: bool = True,
    validate: bool = False,
) -> SimReport:
    """Simulate a trace to completion and return the report."""
    return Simulation(
        config, trace, placement, scheduler, seed=seed, coalesce=coalesce, validate=validate
    ).run()
