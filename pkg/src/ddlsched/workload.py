"""Synthetic job-trace generation and trace file I/O.

Traces follow the scaled production-trace shape: mostly small jobs with a
heavy single-GPU share, whole-second arrivals spread uniformly over a fixed
window, and iteration counts uniform over a range.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum

from .model import BUILTIN_PROFILES, DnnProfile, JobSpec

DEFAULT_TOTAL_JOBS = 160
DEFAULT_ARRIVAL_WINDOW = 1200
DEFAULT_GPU_HISTOGRAM = {1: 80, 2: 14, 4: 26, 8: 30, 16: 8, 32: 2}
DEFAULT_ITERATION_RANGE = (1000, 6000)


class JobSize(Enum):
    SMALL = "small"
    LARGE = "large"


class JobLength(Enum):
    SHORT = "short"
    LONG = "long"


class TraceFormatError(ValueError):
    pass


@dataclass
class TraceConfig:
    total_jobs: int = DEFAULT_TOTAL_JOBS
    arrival_window: int = DEFAULT_ARRIVAL_WINDOW
    gpu_count_histogram: dict[int, int] = field(
        default_factory=lambda: dict(DEFAULT_GPU_HISTOGRAM)
    )
    iteration_range: tuple[int, int] = DEFAULT_ITERATION_RANGE
    profile_mix: list[tuple[DnnProfile, float]] = field(
        default_factory=lambda: [(p, 1.0) for p in BUILTIN_PROFILES.values()]
    )
    seed: int = 0

    def validate(self) -> None:
        if sum(self.gpu_count_histogram.values()) != self.total_jobs:
            raise ValueError(
                f"gpu_count_histogram sums to {sum(self.gpu_count_histogram.values())}, "
                f"expected total_jobs={self.total_jobs}"
            )
        if self.iteration_range[0] < 1 or self.iteration_range[0] > self.iteration_range[1]:
            raise ValueError("iteration_range must satisfy 1 <= min <= max")
        if self.arrival_window < 1:
            raise ValueError("arrival_window must be >= 1")
        if not self.profile_mix:
            raise ValueError("profile_mix must not be empty")


def generate_trace(cfg: TraceConfig) -> list[JobSpec]:
    """Generate total_jobs specs, fully determined by cfg.seed.

    Per-slot arrival counts are drawn uniformly and then refined by adding or
    removing arrivals at uniformly chosen slots until they sum to total_jobs.
    GPU counts are the exact histogram multiset in shuffled order.
    """
    cfg.validate()
    rng = random.Random(cfg.seed)
    window = cfg.arrival_window

    counts = [rng.randint(0, 1) for _ in range(window)]
    total = sum(counts)
    while total < cfg.total_jobs:
        counts[rng.randrange(window)] += 1
        total += 1
    while total > cfg.total_jobs:
        occupied = [i for i, c in enumerate(counts) if c > 0]
        counts[occupied[rng.randrange(len(occupied))]] -= 1
        total -= 1

    gpu_counts = [n for n, c in sorted(cfg.gpu_count_histogram.items()) for _ in range(c)]
    rng.shuffle(gpu_counts)

    profiles = [p for p, _ in cfg.profile_mix]
    weights = [w for _, w in cfg.profile_mix]

    specs = []
    job_id = 0
    for slot, c in enumerate(counts):
        arrival = slot + 1  # arrivals land on whole seconds in [1, window]
        for _ in range(c):
            specs.append(
                JobSpec(
                    job_id=job_id,
                    arrival_time=float(arrival),
                    n_gpus=gpu_counts[job_id],
                    iterations=rng.randint(*cfg.iteration_range),
                    profile=rng.choices(profiles, weights=weights)[0],
                )
            )
            job_id += 1
    return specs


def classify_job(spec: JobSpec) -> tuple[JobSize, JobLength]:
    """Large means more than 4 GPUs; long means more than 1600 iterations."""
    size = JobSize.LARGE if spec.n_gpus > 4 else JobSize.SMALL
    length = JobLength.LONG if spec.iterations > 1600 else JobLength.SHORT
    return size, length


def save_trace(specs: list[JobSpec], path: str) -> None:
    rows = [
        {
            "job_id": s.job_id,
            "arrival_s": s.arrival_time,
            "n_gpus": s.n_gpus,
            "iterations": s.iterations,
            "profile": s.profile.name,
        }
        for s in specs
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")


def load_trace(path: str, profiles: dict[str, DnnProfile] | None = None) -> list[JobSpec]:
    if profiles is None:
        profiles = BUILTIN_PROFILES
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise TraceFormatError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(raw, list):
        raise TraceFormatError(f"{path}: trace must be a JSON array")
    specs = []
    for i, row in enumerate(raw):
        for key in ("job_id", "arrival_s", "n_gpus", "iterations", "profile"):
            if key not in row:
                raise TraceFormatError(f"{path}: job entry {i}: missing field {key!r}")
        pname = row["profile"]
        if pname not in profiles:
            raise TraceFormatError(f"{path}: job entry {i}: unknown profile {pname!r}")
        specs.append(
            JobSpec(
                job_id=row["job_id"],
                arrival_time=float(row["arrival_s"]),
                n_gpus=row["n_gpus"],
                iterations=row["iterations"],
                profile=profiles[pname],
            )
        )
    return specs


def trace_config_from_dict(data: dict, profiles: dict[str, DnnProfile] | None = None) -> TraceConfig:
    """Build a TraceConfig from parsed JSON, filling gaps with defaults."""
    if profiles is None:
        profiles = BUILTIN_PROFILES
    cfg = TraceConfig()
    if "total_jobs" in data:
        cfg.total_jobs = int(data["total_jobs"])
    if "arrival_window" in data:
        cfg.arrival_window = int(data["arrival_window"])
    if "gpu_count_histogram" in data:
        cfg.gpu_count_histogram = {int(k): int(v) for k, v in data["gpu_count_histogram"].items()}
    if "iteration_range" in data:
        lo, hi = data["iteration_range"]
        cfg.iteration_range = (int(lo), int(hi))
    if "profile_mix" in data:
        mix = []
        for name, weight in data["profile_mix"].items():
            if name not in profiles:
                raise TraceFormatError(f"unknown profile {name!r} in profile_mix")
            mix.append((profiles[name], float(weight)))
        cfg.profile_mix = mix
    if "seed" in data:
        cfg.seed = int(data["seed"])
    cfg.validate()
    return cfg
