"""Brute-force verifiers, independent of the closed forms and policies they
check.

The dual-task oracle grid-searches start offsets for two competing
all-reduces and integrates completion times under the shared-rate model; it
never touches the threshold algebra. The small-schedule oracle exhaustively
enumerates placements and admission decision sequences for tiny instances,
replaying each candidate schedule through the simulation engine with
scripted (non-adaptive) policies.
"""
from __future__ import annotations

import itertools
import math
from typing import Iterable

import numpy as np

from .contention import LinkState
from .engine import DeadlockError, Simulation
from .model import ClusterConfig, ClusterState, CommTask, CostModel, GpuId, JobSpec
from .scheduling import AdmissionDecision, AdmissionReason, DualTaskInstance

_PAIR_SERVERS = frozenset({0, 1})


def _pair_completion_times(
    model: CostModel, sizes: tuple[float, float], starts: tuple[float, float]
) -> tuple[float, float]:
    """Exact completion times of two tasks on the same server pair, started
    at the given offsets, integrated through the link tracker."""
    link = LinkState(model)
    tasks = [
        CommTask(job_id=i, total_bytes=m, bytes_remaining=m, server_set=_PAIR_SERVERS)
        for i, m in enumerate(sizes)
    ]
    order = sorted(range(2), key=lambda i: (starts[i], i))
    done: dict[int, float] = {}
    now = 0.0
    idx = 0
    while idx < len(order) or link.active:
        next_start = starts[order[idx]] if idx < len(order) else math.inf
        horizon = link.next_completion_time()
        next_done = now + horizon if horizon is not None else math.inf
        t = min(next_start, next_done)
        if t > now and link.active:
            for jid in link.advance(t - now):
                done[jid] = t
        now = t
        while idx < len(order) and starts[order[idx]] <= now:
            link.admit(tasks[order[idx]], now)
            idx += 1
    return done[0], done[1]


def _grid_objective_vector(
    m_first: float, m_second: float, b: float, eta: float, offsets: np.ndarray
) -> np.ndarray:
    """Average completion time when `first` starts at 0 and `second` at each
    offset (offsets within [0, b*m_first]), under the shared-rate model."""
    c2 = 2 * b + eta
    rem_first = np.maximum(m_first - offsets / b, 0.0)
    first_wins = rem_first <= m_second
    t_first = np.where(
        first_wins,
        offsets + rem_first * c2,
        offsets + m_second * c2 + (rem_first - m_second) * b,
    )
    t_second = np.where(
        first_wins,
        offsets + rem_first * c2 + (m_second - rem_first) * b,
        offsets + m_second * c2,
    )
    return (t_first + t_second) / 2


def sample_objective(
    inst: DualTaskInstance, case: str, offsets: Iterable[float], engine: str = "vector"
) -> list[float]:
    """Average completion time of the pair for given start offsets of the
    second task; case "C1" starts the smaller first, "C2" the larger."""
    if case == "C1":
        first, second = inst.m1, inst.m2
    elif case == "C2":
        first, second = inst.m2, inst.m1
    else:
        raise ValueError(f"case must be C1 or C2, got {case!r}")
    offs = np.asarray(list(offsets), dtype=float)
    if engine == "vector":
        return list(_grid_objective_vector(first, second, inst.b, inst.eta, offs))
    if engine == "link":
        model = CostModel(a=0.0, b=inst.b, eta=inst.eta)
        out = []
        for t in offs:
            t1, t2 = _pair_completion_times(model, (first, second), (0.0, float(t)))
            out.append((t1 + t2) / 2)
        return out
    raise ValueError(f"engine must be 'vector' or 'link', got {engine!r}")


def brute_force_dual(
    inst: DualTaskInstance, grid: int, engine: str = "vector"
) -> tuple[str, float]:
    """Grid-search both orderings of the dual-task problem; returns the best
    case label ("C1", "C2a" or "C2b") and its average completion time.

    The "link" engine replays every offset through the contention tracker's
    advance() primitive; "vector" evaluates the same shared-rate integration
    over the whole grid at once and is cross-checked against "link" in tests.
    """
    if grid < 100:
        raise ValueError("grid must be >= 100")
    b = inst.b
    offs_c1 = np.linspace(0.0, b * inst.m1, grid)
    offs_c2 = np.linspace(0.0, b * inst.m2, grid)
    vals_c1 = sample_objective(inst, "C1", offs_c1, engine)
    vals_c2 = sample_objective(inst, "C2", offs_c2, engine)
    i1 = int(np.argmin(vals_c1))
    i2 = int(np.argmin(vals_c2))
    if vals_c1[i1] <= vals_c2[i2]:
        return "C1", float(vals_c1[i1])
    # split C2 by whether the small task ran fully under contention
    boundary = b * (inst.m2 - inst.m1)
    label = "C2a" if offs_c2[i2] <= boundary else "C2b"
    return label, float(vals_c2[i2])


# --- exhaustive tiny-schedule search -----------------------------------------

MAX_ORACLE_JOBS = 3
MAX_ORACLE_ITERATIONS = 2
MAX_ORACLE_SERVERS = 2
MAX_ORACLE_GPUS_PER_SERVER = 2


class _NeedDecision(Exception):
    """Scripted scheduler ran out of script; the search must branch here."""


class _ScriptedScheduler:
    """Replays a fixed accept/reject script; decisions that the two-way cap
    forces are not scripted, so prefixes replay identically."""

    name = "scripted"
    link_cap = 2

    def __init__(self, script: list[bool]):
        self.script = script
        self.cursor = 0

    def decide(self, link: LinkState, task: CommTask, model: CostModel) -> AdmissionDecision:
        if link.max_active(task.server_set) >= 2:
            return AdmissionDecision(False, AdmissionReason.CAP_REJECT)
        if self.cursor == len(self.script):
            raise _NeedDecision()
        bit = self.script[self.cursor]
        self.cursor += 1
        if bit:
            return AdmissionDecision(True, AdmissionReason.THRESHOLD_ACCEPT)
        return AdmissionDecision(False, AdmissionReason.THRESHOLD_REJECT)


class _FixedPlacement:
    name = "fixed"

    def __init__(self, assignment: dict[int, tuple[GpuId, ...]]):
        self.assignment = assignment

    def select(self, job: JobSpec, cluster: ClusterState) -> tuple[GpuId, ...]:
        gpus = self.assignment[job.job_id]
        if all(cluster.gpus[g].fits(job.profile) for g in gpus):
            return gpus
        return ()


def _cluster_automorphisms(n_servers: int, gpus_per_server: int):
    for sperm in itertools.permutations(range(n_servers)):
        for gperms in itertools.product(
            itertools.permutations(range(gpus_per_server)), repeat=n_servers
        ):
            yield lambda gid, sp=sperm, gp=gperms: GpuId(sp[gid.server], gp[gid.server][gid.gpu])


def _canonical_assignment(
    assignment: tuple[tuple[GpuId, ...], ...], n_servers: int, gpus_per_server: int
):
    best = None
    for auto in _cluster_automorphisms(n_servers, gpus_per_server):
        mapped = tuple(tuple(sorted(auto(g) for g in gpus)) for gpus in assignment)
        if best is None or mapped < best:
            best = mapped
    return best


def brute_force_small_schedule(jobs: list[JobSpec], config: ClusterConfig) -> float:
    """Optimal average JCT of a tiny instance over every placement and every
    admission decision sequence, replayed through the engine."""
    if len(jobs) > MAX_ORACLE_JOBS:
        raise ValueError(f"at most {MAX_ORACLE_JOBS} jobs supported")
    if any(j.iterations > MAX_ORACLE_ITERATIONS for j in jobs):
        raise ValueError(f"at most {MAX_ORACLE_ITERATIONS} iterations per job supported")
    if (
        config.n_servers > MAX_ORACLE_SERVERS
        or config.gpus_per_server > MAX_ORACLE_GPUS_PER_SERVER
    ):
        raise ValueError("cluster too large for exhaustive search")

    all_gpus = [
        GpuId(s, g)
        for s in range(config.n_servers)
        for g in range(config.gpus_per_server)
    ]
    per_job_options = [
        list(itertools.combinations(all_gpus, j.n_gpus)) for j in jobs
    ]
    seen = set()
    assignments = []
    for combo in itertools.product(*per_job_options):
        key = _canonical_assignment(combo, config.n_servers, config.gpus_per_server)
        if key not in seen:
            seen.add(key)
            assignments.append(combo)

    best = math.inf
    for combo in assignments:
        placement = {j.job_id: tuple(g) for j, g in zip(jobs, combo)}
        best = min(best, _best_over_scripts(config, jobs, placement, best))
    if not math.isfinite(best):
        raise DeadlockError("no feasible schedule found for the instance", [j.job_id for j in jobs])
    return best


def _best_over_scripts(
    config: ClusterConfig,
    jobs: list[JobSpec],
    placement: dict[int, tuple[GpuId, ...]],
    best_so_far: float,
) -> float:
    best = best_so_far

    def explore(script: list[bool]) -> None:
        nonlocal best
        sim = Simulation(
            config,
            jobs,
            placement=_FixedPlacement(placement),
            scheduler=_ScriptedScheduler(script),
            coalesce=False,
        )
        try:
            report = sim.run()
        except _NeedDecision:
            explore(script + [True])
            explore(script + [False])
            return
        except DeadlockError:
            return
        best = min(best, report.aggregates()["avg_jct_s"])

    explore([])
    return best
