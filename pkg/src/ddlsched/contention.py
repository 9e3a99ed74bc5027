"""Per-server tracking of in-flight all-reduce tasks under bandwidth sharing.

A task spanning servers S drains its bytes at an instantaneous per-byte cost
of k*b + (k-1)*eta, where k is the largest number of concurrent tasks on any
server in S. The one-time latency `a` is consumed wall-clock first, so a task
that stays uncontended for its whole life takes exactly a + b*M.
"""
from __future__ import annotations

from typing import Optional

from .model import CommTask, CostModel

_COMPLETE_REL = 1e-9


class AdmissionCapError(RuntimeError):
    """Admission would push some server past the configured concurrent-task cap."""


class LinkState:
    """Active communication tasks per server, owned by one engine instance."""

    def __init__(self, model: CostModel, cap: Optional[int] = None, global_k: bool = False):
        self.model = model
        self.cap = cap
        self.global_k = global_k
        self.active: dict[int, CommTask] = {}          # job_id -> task
        self.server_tasks: dict[int, set[int]] = {}    # server -> job_ids
        self.effective_cost: dict[int, float] = {}     # job_id -> s/byte
        self.latency_remaining: dict[int, float] = {}  # job_id -> s
        self.generation = 0                            # bumps on membership change
        self.server_gen: dict[int, int] = {}           # per-server membership changes

    def active_count(self, server: int) -> int:
        tasks = self.server_tasks.get(server)
        return len(tasks) if tasks else 0

    def max_active(self, server_set) -> int:
        best = 0
        tasks = self.server_tasks
        for s in server_set:
            t = tasks.get(s)
            if t and len(t) > best:
                best = len(t)
        return best

    def membership_stamp(self, server_set) -> int:
        """Sum of per-server membership-change counters; unchanged stamp
        means the incumbent set on these servers is unchanged."""
        gen = self.server_gen
        return sum(gen.get(s, 0) for s in server_set)

    def incumbents(self, server_set) -> list[CommTask]:
        """Distinct active tasks touching any server in server_set."""
        seen: set[int] = set()
        out = []
        for s in sorted(server_set):
            for jid in sorted(self.server_tasks.get(s, ())):
                if jid not in seen:
                    seen.add(jid)
                    out.append(self.active[jid])
        return out

    def max_incumbent_bytes(self, server_set) -> float:
        """Largest remaining byte count over active tasks on these servers."""
        best = 0.0
        active = self.active
        for s in server_set:
            for jid in self.server_tasks.get(s, ()):
                rem = active[jid].bytes_remaining
                if rem > best:
                    best = rem
        return best

    def task_k(self, task: CommTask) -> int:
        if self.global_k:
            return max((len(v) for v in self.server_tasks.values()), default=0)
        return self.max_active(task.server_set)

    def _recompute_costs(self) -> None:
        m = self.model
        for jid, task in self.active.items():
            k = self.task_k(task)
            self.effective_cost[jid] = k * m.b + (k - 1) * m.eta

    def admit(self, task: CommTask, now: float) -> None:
        if task.job_id in self.active:
            raise ValueError(f"task of job {task.job_id} is already active")
        if self.cap is not None:
            for s in task.server_set:
                if self.active_count(s) + 1 > self.cap:
                    raise AdmissionCapError(
                        f"server {s} already runs {self.active_count(s)} tasks (cap {self.cap})"
                    )
        self.active[task.job_id] = task
        for s in task.server_set:
            self.server_tasks.setdefault(s, set()).add(task.job_id)
            self.server_gen[s] = self.server_gen.get(s, 0) + 1
        self.latency_remaining[task.job_id] = self.model.a
        task.started_at = now
        task.latency_paid = True
        self.generation += 1
        self._recompute_costs()

    def advance(self, dt: float) -> list[int]:
        """Drain dt seconds of progress from every active task; returns the
        job ids whose task completed (in job-id order)."""
        if dt < 0:
            raise ValueError("dt must be >= 0")
        if dt == 0 or not self.active:
            return []
        done = []
        for jid, task in self.active.items():
            left = dt
            lat = self.latency_remaining[jid]
            if lat > 0:
                used = min(lat, left)
                self.latency_remaining[jid] = lat - used
                left -= used
            if left <= 0:
                continue
            credit = left / self.effective_cost[jid]
            # absorb float drift from segmented integration near completion
            if credit >= task.bytes_remaining - task.total_bytes * _COMPLETE_REL:
                task.bytes_remaining = 0.0
                done.append(jid)
            else:
                task.bytes_remaining -= credit
        if done:
            done.sort()
            for jid in done:
                self._remove(jid)
            self.generation += 1
            self._recompute_costs()
        return done

    def _remove(self, job_id: int) -> None:
        task = self.active.pop(job_id)
        for s in task.server_set:
            self.server_tasks[s].discard(job_id)
            self.server_gen[s] = self.server_gen.get(s, 0) + 1
        del self.effective_cost[job_id]
        del self.latency_remaining[job_id]

    def next_completion_time(self) -> Optional[float]:
        """Seconds until the earliest task completion at current rates."""
        if not self.active:
            return None
        return min(
            self.latency_remaining[jid] + task.bytes_remaining * self.effective_cost[jid]
            for jid, task in self.active.items()
        )

    def remaining_time(self, job_id: int) -> float:
        task = self.active[job_id]
        return self.latency_remaining[job_id] + task.bytes_remaining * self.effective_cost[job_id]
