"""GPU allocation policies: least-workload-first with a consolidation
threshold, plus first-fit, list-scheduling and random baselines.

Memory is the only hard placement constraint; the per-GPU workload ledger
steers the least-workload orderings. Ties everywhere break lexicographically
on (workload, server index, gpu index) so placements are reproducible.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Protocol

from .model import (
    ClusterState,
    CostModel,
    GpuId,
    JobSpec,
    job_comm_workload,
    job_compute_workload,
)


@dataclass(frozen=True)
class PlacementRequest:
    job: JobSpec
    kappa: int = 1

    def __post_init__(self) -> None:
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")


def _feasible(cluster: ClusterState, job: JobSpec):
    return [g for g in cluster.gpus_in_order() if g.fits(job.profile)]


def select_lwf(job: JobSpec, cluster: ClusterState, kappa: int) -> tuple[GpuId, ...]:
    """Pick the job's GPUs: globally least-loaded for small jobs
    (n <= kappa), server-consolidated least-loaded otherwise."""
    n = job.n_gpus
    if n <= kappa:
        avail = _feasible(cluster, job)
        if len(avail) < n:
            return ()
        avail.sort(key=lambda g: (g.remaining_workload, g.id))
        return tuple(g.id for g in avail[:n])
    # consolidate: visit servers by total remaining workload, take each
    # server's feasible GPUs (least-loaded first) until n are gathered
    servers = sorted(
        range(cluster.config.n_servers),
        key=lambda s: (cluster.server_workload(s), s),
    )
    ordered = []
    for s in servers:
        gpus = [g for g in cluster.server_gpus(s) if g.fits(job.profile)]
        gpus.sort(key=lambda g: (g.remaining_workload, g.id))
        ordered.extend(gpus)
    if len(ordered) < n:
        return ()
    return tuple(g.id for g in ordered[:n])


def select_ff(job: JobSpec, cluster: ClusterState) -> tuple[GpuId, ...]:
    """First n memory-feasible GPUs in (server, gpu) index order."""
    chosen = []
    for g in cluster.gpus_in_order():
        if g.fits(job.profile):
            chosen.append(g.id)
            if len(chosen) == job.n_gpus:
                return tuple(chosen)
    return ()


def select_ls(job: JobSpec, cluster: ClusterState) -> tuple[GpuId, ...]:
    """n memory-feasible GPUs with least remaining workload, cluster-wide."""
    avail = _feasible(cluster, job)
    if len(avail) < job.n_gpus:
        return ()
    avail.sort(key=lambda g: (g.remaining_workload, g.id))
    return tuple(g.id for g in avail[: job.n_gpus])


def select_rand(job: JobSpec, cluster: ClusterState, rng: random.Random) -> tuple[GpuId, ...]:
    """n distinct memory-feasible GPUs sampled uniformly."""
    avail = [g.id for g in _feasible(cluster, job)]
    if len(avail) < job.n_gpus:
        return ()
    return tuple(sorted(rng.sample(avail, job.n_gpus)))


def commit_placement(
    cluster: ClusterState, job: JobSpec, gpus: tuple[GpuId, ...], model: CostModel
) -> None:
    """Charge memory and the workload ledger for a successful placement.

    Every chosen GPU is charged the job-total workload (compute plus the
    now-known communication component, scaled by the GPU count)."""
    servers = {gid.server for gid in gpus}
    workload = (
        job_compute_workload(job) + job_comm_workload(job, len(servers), model)
    ) * job.n_gpus
    for gid in gpus:
        g = cluster.gpus[gid]
        g.memory_used += job.profile.gpu_memory_usage
        g.remaining_workload += workload
        g.resident_jobs.add(job.job_id)


def lwf_place(
    req: PlacementRequest, cluster: ClusterState, model: CostModel
) -> tuple[GpuId, ...]:
    gpus = select_lwf(req.job, cluster, req.kappa)
    if gpus:
        commit_placement(cluster, req.job, gpus, model)
    return gpus


def ff_place(job: JobSpec, cluster: ClusterState, model: CostModel) -> tuple[GpuId, ...]:
    gpus = select_ff(job, cluster)
    if gpus:
        commit_placement(cluster, job, gpus, model)
    return gpus


def ls_place(job: JobSpec, cluster: ClusterState, model: CostModel) -> tuple[GpuId, ...]:
    gpus = select_ls(job, cluster)
    if gpus:
        commit_placement(cluster, job, gpus, model)
    return gpus


def rand_place(
    job: JobSpec, cluster: ClusterState, model: CostModel, rng_seed: int
) -> tuple[GpuId, ...]:
    gpus = select_rand(job, cluster, random.Random(rng_seed))
    if gpus:
        commit_placement(cluster, job, gpus, model)
    return gpus


def srsf_priority(job: JobSpec) -> tuple[float, float, int]:
    """Queue ordering key: remaining service (compute workload scaled by GPU
    count; communication is unknown before placement), then arrival, then id."""
    return (job_compute_workload(job) * job.n_gpus, job.arrival_time, job.job_id)


class PlacementPolicy(Protocol):
    name: str

    def select(self, job: JobSpec, cluster: ClusterState) -> tuple[GpuId, ...]: ...


class LwfPlacement:
    def __init__(self, kappa: int = 1):
        if kappa < 1:
            raise ValueError("kappa must be >= 1")
        self.kappa = kappa
        self.name = f"lwf:{kappa}"

    def select(self, job: JobSpec, cluster: ClusterState) -> tuple[GpuId, ...]:
        return select_lwf(job, cluster, self.kappa)


class FirstFitPlacement:
    name = "ff"

    def select(self, job: JobSpec, cluster: ClusterState) -> tuple[GpuId, ...]:
        return select_ff(job, cluster)


class ListSchedulingPlacement:
    name = "ls"

    def select(self, job: JobSpec, cluster: ClusterState) -> tuple[GpuId, ...]:
        return select_ls(job, cluster)


class RandomPlacement:
    def __init__(self, seed: int = 0):
        self.name = "rand"
        self._rng = random.Random(seed)

    def select(self, job: JobSpec, cluster: ClusterState) -> tuple[GpuId, ...]:
        return select_rand(job, cluster, self._rng)


def parse_placement(text: str, seed: int = 0) -> PlacementPolicy:
    """Build a placement policy from its config string: lwf:<kappa> | ff | ls | rand."""
    text = text.strip().lower()
    if text.startswith("lwf"):
        kappa = 1
        if ":" in text:
            _, _, arg = text.partition(":")
            try:
                kappa = int(arg)
            except ValueError:
                raise ValueError(f"bad lwf kappa in placement string {text!r}")
        return LwfPlacement(kappa)
    if text == "ff":
        return FirstFitPlacement()
    if text == "ls":
        return ListSchedulingPlacement()
    if text == "rand":
        return RandomPlacement(seed)
    raise ValueError(f"unknown placement policy {text!r}")
