"""Domain types and closed-form cost models for the cluster simulator.

All times are float seconds, all sizes are bytes (1 MB = 1e6 bytes).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, NamedTuple, Optional


class GpuId(NamedTuple):
    server: int
    gpu: int


class Phase(Enum):
    QUEUED = "queued"
    FORWARD = "forward"
    BACKWARD = "backward"
    ALLREDUCE = "allreduce"
    DONE = "done"


class AllReduceAlgorithm(Enum):
    BINARY_TREE = "binary-tree"
    RECURSIVE_DOUBLING = "recursive-doubling"
    RECURSIVE_HALVING_DOUBLING = "recursive-halving-doubling"
    RING = "ring"


@dataclass(frozen=True)
class CostModel:
    """Inter-server all-reduce timing: latency `a`, per-byte cost `b`,
    per-byte contention penalty `eta` applied once per extra sharer."""
    a: float
    b: float
    eta: float = 0.0

    def __post_init__(self) -> None:
        if self.a < 0:
            raise ValueError("latency a must be >= 0")
        if self.b <= 0:
            raise ValueError("per-byte cost b must be > 0")
        if self.eta < 0:
            raise ValueError("contention penalty eta must be >= 0")


#: Fitted on a 10 GbE two-server testbed; eta is a documented default, not a
#: measured constant, chosen so 2-way sharing is visibly worse than ideal.
DEFAULT_COST_MODEL = CostModel(a=6.69e-4, b=8.53e-10, eta=2e-10)

DEFAULT_GPU_MEMORY = 16e9  # 16 GB


@dataclass(frozen=True)
class AllReduceParams:
    """Point-to-point network constants used to derive (a, b) for a
    specific all-reduce algorithm on n_nodes participants."""
    alpha: float
    beta: float
    gamma: float
    n_nodes: int

    def __post_init__(self) -> None:
        n = self.n_nodes
        if n < 2 or (n & (n - 1)) != 0:
            raise ValueError("n_nodes must be a power of two >= 2")


@dataclass(frozen=True)
class DnnProfile:
    """Per-model training profile; measured per-iteration phase durations
    take precedence over the workload-coefficient estimate."""
    name: str
    model_size: float            # bytes exchanged per all-reduce
    gpu_memory_usage: float      # bytes held on every worker GPU
    batch_size: int
    t_forward: Optional[float] = None   # seconds
    t_backward: Optional[float] = None  # seconds
    lambda_f: Optional[float] = None
    lambda_b: Optional[float] = None
    peak_perf: Optional[float] = None   # GFLOPS

    def __post_init__(self) -> None:
        if self.model_size <= 0:
            raise ValueError("model_size must be > 0")
        if self.gpu_memory_usage < 0:
            raise ValueError("gpu_memory_usage must be >= 0")
        if self.t_forward is not None and self.t_forward <= 0:
            raise ValueError("t_forward must be > 0")
        if self.t_backward is not None and self.t_backward <= 0:
            raise ValueError("t_backward must be > 0")


@dataclass(frozen=True)
class JobSpec:
    job_id: int
    arrival_time: float
    n_gpus: int
    iterations: int
    profile: DnnProfile

    def __post_init__(self) -> None:
        if self.n_gpus < 1:
            raise ValueError("n_gpus must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.arrival_time < 0:
            raise ValueError("arrival_time must be >= 0")


@dataclass(frozen=True)
class ClusterConfig:
    n_servers: int
    gpus_per_server: int
    gpu_memory: float = DEFAULT_GPU_MEMORY
    cost_model: CostModel = DEFAULT_COST_MODEL

    def __post_init__(self) -> None:
        if self.n_servers < 1 or self.gpus_per_server < 1:
            raise ValueError("cluster must have at least one server and one GPU per server")

    @property
    def total_gpus(self) -> int:
        return self.n_servers * self.gpus_per_server


@dataclass
class GpuState:
    """Mutable per-GPU bookkeeping owned by one engine instance."""
    id: GpuId
    memory_capacity: float
    memory_used: float = 0.0
    remaining_workload: float = 0.0   # queued seconds of job workload
    busy_until: float = 0.0
    busy_accumulated: float = 0.0
    resident_jobs: set = field(default_factory=set)

    def memory_free(self) -> float:
        return self.memory_capacity - self.memory_used

    def fits(self, profile: DnnProfile) -> bool:
        return profile.gpu_memory_usage <= self.memory_free()


class ClusterState:
    """All GPU states of one cluster, indexed by (server, gpu)."""

    def __init__(self, config: ClusterConfig):
        self.config = config
        self.gpus: dict[GpuId, GpuState] = {}
        for s in range(config.n_servers):
            for g in range(config.gpus_per_server):
                gid = GpuId(s, g)
                self.gpus[gid] = GpuState(id=gid, memory_capacity=config.gpu_memory)

    def gpus_in_order(self) -> Iterator[GpuState]:
        for s in range(self.config.n_servers):
            for g in range(self.config.gpus_per_server):
                yield self.gpus[GpuId(s, g)]

    def server_gpus(self, server: int) -> Iterator[GpuState]:
        for g in range(self.config.gpus_per_server):
            yield self.gpus[GpuId(server, g)]

    def server_workload(self, server: int) -> float:
        return sum(g.remaining_workload for g in self.server_gpus(server))


@dataclass
class CommTask:
    """An in-flight (or about-to-start) all-reduce of one job."""
    job_id: int
    total_bytes: float
    bytes_remaining: float
    server_set: frozenset
    started_at: Optional[float] = None
    latency_paid: bool = False

    def __post_init__(self) -> None:
        if not (0 <= self.bytes_remaining <= self.total_bytes):
            raise ValueError("bytes_remaining must be within [0, total_bytes]")
        if len(self.server_set) < 2:
            raise ValueError("communication task must span at least two servers")


@dataclass
class JobRuntime:
    """Per-job progress owned by one engine: fixed GPU set plus a cursor
    through the forward/backward/all-reduce iteration graph.

    ``pending`` names the job's current mode: "workers" while the per-worker
    forward/backward tasks of one iteration trickle through their GPUs,
    "run" while whole iterations are coalesced on exclusively-held GPUs,
    "comm" while the iteration's all-reduce waits or drains, None otherwise.
    """
    spec: JobSpec
    allocated_gpus: tuple = ()
    server_set: frozenset = frozenset()
    iteration_cursor: int = 0
    finish_time: Optional[float] = None
    pending: Optional[str] = None     # workers | run | comm | None
    running: bool = False             # run started / comm admitted
    comm_task: Optional[CommTask] = None
    # per-worker iteration state (pending == "workers")
    worker_phase: dict = field(default_factory=dict)   # GpuId -> forward|backward|None
    worker_running: set = field(default_factory=set)
    forwards_done: int = 0
    backwards_done: int = 0
    # coalesced-run bookkeeping (pending == "run")
    run_start: float = 0.0
    run_iters: int = 0
    run_gen: int = 0
    # duration cache, filled at placement
    t_f: float = 0.0
    t_b: float = 0.0
    # engine-owned cached ordering key, dropped whenever progress changes
    srsf_key: Optional[tuple] = None

    @property
    def placed(self) -> bool:
        return bool(self.allocated_gpus)

    @property
    def multi_server(self) -> bool:
        return len(self.server_set) > 1

    @property
    def phase(self) -> Phase:
        if self.finish_time is not None:
            return Phase.DONE
        if not self.placed:
            return Phase.QUEUED
        if self.pending == "run":
            return Phase.FORWARD
        if self.pending == "workers":
            n = self.spec.n_gpus
            return Phase.FORWARD if self.forwards_done < n else Phase.BACKWARD
        return Phase.ALLREDUCE

    def remaining_compute(self, now: float) -> float:
        """Seconds of forward+backward work not yet completed (per-worker
        pipeline time; concurrent workers count once)."""
        if self.finish_time is not None:
            return 0.0
        d = self.t_f + self.t_b
        left = (self.spec.iterations - self.iteration_cursor) * d
        if self.pending == "comm":
            return left - d
        if self.pending == "workers":
            n = self.spec.n_gpus
            return left - (self.forwards_done * self.t_f + self.backwards_done * self.t_b) / n
        if self.pending == "run" and self.running:
            k_done = min(int((now - self.run_start) // d), self.run_iters)
            left -= k_done * d
            if k_done < self.run_iters and now - self.run_start - k_done * d >= self.t_f:
                left -= self.t_f
            return left
        return left

    def remaining_workload(self, now: float, model: CostModel) -> float:
        """Ledger value L: remaining (compute + comm) seconds scaled by the
        job's GPU count, matching how placement charges each chosen GPU."""
        if self.finish_time is not None:
            return 0.0
        comm = 0.0
        if self.multi_server:
            per_iter = model.a + model.b * self.spec.profile.model_size
            comm = (self.spec.iterations - self.iteration_cursor) * per_iter
        return (self.remaining_compute(now) + comm) * self.spec.n_gpus


# --- closed-form cost models -------------------------------------------------

def allreduce_cost(model: CostModel, message: float) -> float:
    """Duration of one uncontended all-reduce of `message` bytes."""
    if message < 0:
        raise ValueError("message size must be >= 0")
    return model.a + model.b * message


def allreduce_cost_contended(model: CostModel, message: float, k: int) -> float:
    """Duration of one all-reduce sharing its servers with k-1 others.

    Reduces to the uncontended cost at k=1.
    """
    if k < 1:
        raise ValueError("contention level k must be >= 1")
    if message < 0:
        raise ValueError("message size must be >= 0")
    return model.a + k * model.b * message + (k - 1) * model.eta * message


def derive_allreduce_ab(params: AllReduceParams, algorithm: AllReduceAlgorithm) -> CostModel:
    """Derive (a, b) for a classic all-reduce algorithm from the latency /
    bandwidth / reduction constants; the result carries no contention term."""
    alpha, beta, gamma, n = params.alpha, params.beta, params.gamma, params.n_nodes
    log_n = math.log2(n)
    if algorithm is AllReduceAlgorithm.BINARY_TREE:
        a = 2 * alpha * log_n
        b = (2 * beta + gamma) * log_n
    elif algorithm is AllReduceAlgorithm.RECURSIVE_DOUBLING:
        a = alpha * log_n
        b = (beta + gamma) * log_n
    elif algorithm is AllReduceAlgorithm.RECURSIVE_HALVING_DOUBLING:
        a = 2 * alpha * log_n
        b = 2 * beta - (2 * beta + gamma) / n + gamma
    elif algorithm is AllReduceAlgorithm.RING:
        a = 2 * (n - 1) * alpha
        b = 2 * (n - 1) / n * beta + (n - 1) / n * gamma
    else:
        raise ValueError(f"unknown all-reduce algorithm: {algorithm}")
    # b == 0 only with all-zero constants; keep the degenerate case usable
    return CostModel(a=a, b=b if b > 0 else 1e-300, eta=0.0)


def compute_task_durations(profile: DnnProfile) -> tuple[float, float]:
    """(forward, backward) seconds for one iteration of one worker."""
    if profile.t_forward is not None and profile.t_backward is not None:
        return profile.t_forward, profile.t_backward
    if profile.lambda_f is None or profile.lambda_b is None or not profile.peak_perf:
        raise ValueError(
            f"profile {profile.name!r} has neither measured durations nor "
            "(lambda_f, lambda_b, peak_perf)"
        )
    t_f = profile.lambda_f * profile.batch_size / profile.peak_perf
    t_b = profile.lambda_b * profile.batch_size / profile.peak_perf
    return t_f, t_b


def job_compute_workload(spec: JobSpec) -> float:
    """Total compute seconds of the job on one worker: (t_f + t_b) * iterations."""
    t_f, t_b = compute_task_durations(spec.profile)
    return (t_f + t_b) * spec.iterations


def job_comm_workload(spec: JobSpec, server_set_size: int, model: CostModel) -> float:
    """Total uncontended all-reduce seconds; zero when the job sits on one
    server (intra-server transfers are not modeled)."""
    if server_set_size < 1:
        raise ValueError("server_set_size must be >= 1")
    if server_set_size == 1:
        return 0.0
    return (model.a + model.b * spec.profile.model_size) * spec.iterations


# --- built-in profile registry -----------------------------------------------

_MB = 1e6
_MS = 1e-3

BUILTIN_PROFILES: dict[str, DnnProfile] = {
    p.name: p
    for p in (
        DnnProfile("vgg16", 526.4 * _MB, 4527 * _MB, 16, 35.8 * _MS, 53.7 * _MS),
        DnnProfile("resnet50", 99.2 * _MB, 3213 * _MB, 16, 25.0 * _MS, 37.4 * _MS),
        DnnProfile("inception3", 103.0 * _MB, 3291 * _MB, 16, 34.9 * _MS, 52.4 * _MS),
        DnnProfile("lstm", 251.8 * _MB, 2751 * _MB, 64, 31.5 * _MS, 47.3 * _MS),
    )
}


class ProfileFormatError(ValueError):
    pass


_PROFILE_FIELDS = ("name", "model_size_mb", "gpu_memory_mb", "batch_size", "t_f_ms", "t_b_ms")


def load_profiles(path: str) -> dict[str, DnnProfile]:
    """Load a profile registry from JSON: a list of objects with fields
    name, model_size_mb, gpu_memory_mb, batch_size, t_f_ms, t_b_ms."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ProfileFormatError("profile registry must be a JSON array")
    profiles = {}
    for i, entry in enumerate(raw):
        for f in _PROFILE_FIELDS:
            if f not in entry:
                raise ProfileFormatError(f"profile entry {i}: missing field {f!r}")
        p = DnnProfile(
            name=entry["name"],
            model_size=entry["model_size_mb"] * _MB,
            gpu_memory_usage=entry["gpu_memory_mb"] * _MB,
            batch_size=entry["batch_size"],
            t_forward=entry["t_f_ms"] * _MS,
            t_backward=entry["t_b_ms"] * _MS,
        )
        profiles[p.name] = p
    return profiles


def save_profiles(profiles: dict[str, DnnProfile], path: str) -> None:
    rows = [
        {
            "name": p.name,
            "model_size_mb": p.model_size / _MB,
            "gpu_memory_mb": p.gpu_memory_usage / _MB,
            "batch_size": p.batch_size,
            "t_f_ms": p.t_forward / _MS,
            "t_b_ms": p.t_backward / _MS,
        }
        for p in profiles.values()
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")
