"""Simulator and algorithm library for scheduling distributed training jobs
on multi-GPU clusters with communication contention."""

from .model import (
    AllReduceAlgorithm,
    AllReduceParams,
    BUILTIN_PROFILES,
    ClusterConfig,
    ClusterState,
    CommTask,
    CostModel,
    DEFAULT_COST_MODEL,
    DnnProfile,
    GpuId,
    JobRuntime,
    JobSpec,
    Phase,
    allreduce_cost,
    allreduce_cost_contended,
    compute_task_durations,
    derive_allreduce_ab,
    job_comm_workload,
    job_compute_workload,
    load_profiles,
    save_profiles,
)
from .contention import AdmissionCapError, LinkState
from .placement import (
    FirstFitPlacement,
    ListSchedulingPlacement,
    LwfPlacement,
    PlacementRequest,
    RandomPlacement,
    ff_place,
    ls_place,
    lwf_place,
    parse_placement,
    rand_place,
    srsf_priority,
)
from .scheduling import (
    AdaSrsfScheduler,
    AdmissionDecision,
    AdmissionReason,
    DualTaskInstance,
    SrsfNScheduler,
    ada_dual,
    contention_threshold,
    parse_scheduler,
    t_aver_c1,
    t_aver_c2,
)
from .workload import (
    TraceConfig,
    classify_job,
    generate_trace,
    load_trace,
    save_trace,
)
from .engine import (
    DeadlockError,
    JobRecord,
    SimReport,
    Simulation,
    compute_metrics,
    run_sim,
)
from .oracle import brute_force_dual, brute_force_small_schedule

__all__ = [name for name in dir() if not name.startswith("_")]
