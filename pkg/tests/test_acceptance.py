"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line. Tolerances are fixed here, not calibrated elsewhere.

The statistical directionality checks (criterion 5) pin the contention
penalty eta explicitly, since it is a required input of the cost model that
no measurement fixes; all other constants are the fitted 10 GbE values.
"""
import math
import random
import time
from concurrent.futures import ProcessPoolExecutor

import pytest

from ddlsched.contention import LinkState
from ddlsched.engine import run_sim
from ddlsched.model import (
    BUILTIN_PROFILES,
    ClusterConfig,
    CommTask,
    CostModel,
    JobSpec,
)
from ddlsched.oracle import brute_force_dual, brute_force_small_schedule
from ddlsched.scheduling import DualTaskInstance, t_aver_c1, t_aver_c2
from ddlsched.workload import TraceConfig, generate_trace

FITTED = CostModel(a=6.69e-4, b=8.53e-10, eta=2e-10)
DEFAULT_CLUSTER = ClusterConfig(16, 4, cost_model=FITTED)


def _report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {name}" + (f" -- {detail}" if detail else ""))


def _random_instances(n=1000, seed=12345):
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        m2 = rng.uniform(1e6, 1e9)
        m1 = rng.uniform(1e6, m2)
        b = rng.uniform(1e-10, 1e-8)
        eta = rng.uniform(0, b)
        out.append(DualTaskInstance(m1=m1, m2=m2, b=b, eta=eta))
    return out


class TestCriterion1ClosedFormOracle:
    def test_analytic_matches_brute_force(self):
        t0 = time.perf_counter()
        worst = 0.0
        for inst in _random_instances():
            _, best = brute_force_dual(inst, grid=10_000)
            analytic = min(t_aver_c1(inst), *t_aver_c2(inst))
            worst = max(worst, abs(best - analytic) / analytic)
        elapsed = time.perf_counter() - t0
        ok = worst < 1e-3 and elapsed < 10.0
        _report(
            "criterion 1: closed-form oracle equivalence",
            ok,
            f"worst rel discrepancy {worst:.2e}, runtime {elapsed:.1f}s",
        )
        assert worst < 1e-3
        assert elapsed < 10.0


class TestCriterion2ThresholdIdentity:
    def test_sign_identity(self):
        def sign(x):
            return (x > 0) - (x < 0)

        bad = 0
        for inst in _random_instances():
            c2a, c2b = t_aver_c2(inst)
            lhs = sign(c2a - c2b)
            rhs = sign(inst.m1 / inst.m2 - inst.b / (2 * (inst.b + inst.eta)))
            if lhs != rhs:
                bad += 1
        _report("criterion 2: threshold sign identity", bad == 0, f"{bad} mismatches / 1000")
        assert bad == 0


class TestCriterion3ContentionModel:
    def test_solo_task_exact(self):
        m = 3.21e8
        link = LinkState(FITTED)
        link.admit(
            CommTask(0, m, m, frozenset({0, 1})), now=0.0
        )
        elapsed = 0.0
        while link.active:
            step = link.next_completion_time()
            link.advance(step)
            elapsed += step
        expected = FITTED.a + FITTED.b * m
        ok = abs(elapsed - expected) / expected < 1e-12
        _report("criterion 3a: solo all-reduce a+bM", ok, f"{elapsed!r} vs {expected!r}")
        assert ok

    def test_equal_pair_exact(self):
        m = 2.5e8
        link = LinkState(FITTED, cap=2)
        link.admit(CommTask(0, m, m, frozenset({0, 1})), now=0.0)
        link.admit(CommTask(1, m, m, frozenset({0, 1})), now=0.0)
        elapsed = 0.0
        while link.active:
            step = link.next_completion_time()
            done = link.advance(step)
            elapsed += step
        expected = FITTED.a + (2 * FITTED.b + FITTED.eta) * m
        ok = abs(elapsed - expected) / expected < 1e-9
        _report("criterion 3b: equal pair a+(2b+eta)M", ok, f"{elapsed!r} vs {expected!r}")
        assert ok

    def test_byte_conservation_random(self):
        rng = random.Random(777)
        worst = 0.0
        for _ in range(100):
            link = LinkState(FITTED)
            credited: dict[int, float] = {}
            totals: dict[int, float] = {}
            nxt = 0
            for _ in range(rng.randint(4, 10)):
                if rng.random() < 0.55 or not link.active:
                    size = rng.uniform(1e6, 8e8)
                    task = CommTask(nxt, size, size, frozenset(rng.sample(range(6), 2)))
                    totals[nxt] = size
                    credited[nxt] = 0.0
                    link.admit(task, 0.0)
                    nxt += 1
                before = {j: t.bytes_remaining for j, t in link.active.items()}
                link.advance(rng.uniform(0, 0.4))
                for j, prev in before.items():
                    after = link.active[j].bytes_remaining if j in link.active else 0.0
                    credited[j] += prev - after
            while link.active:
                before = {j: t.bytes_remaining for j, t in link.active.items()}
                link.advance(link.next_completion_time())
                for j, prev in before.items():
                    after = link.active[j].bytes_remaining if j in link.active else 0.0
                    credited[j] += prev - after
            for j, total in totals.items():
                worst = max(worst, abs(credited[j] - total) / total)
        ok = worst < 1e-9
        _report("criterion 3c: byte conservation", ok, f"worst rel error {worst:.2e}")
        assert ok


class TestCriterion4MicroSim:
    def test_single_vgg_two_servers(self):
        job = JobSpec(0, 0.0, 8, 1000, BUILTIN_PROFILES["vgg16"])
        rep = run_sim(DEFAULT_CLUSTER, [job], "lwf:1", "ada-srsf")
        expected = 1000 * (0.0358 + 0.0537) + 1000 * (6.69e-4 + 8.53e-10 * 5.264e8)
        got = rep.jobs[0].jct_s
        ok = abs(got - expected) / expected < 1e-6
        _report("criterion 4: closed-form micro-sim", ok, f"JCT {got:.6f} vs {expected:.6f}")
        assert ok


# --- criterion 5: statistical directionality over seeded traces --------------

SWEEP_ETA = 2e-10
SWEEP_CLUSTER = ClusterConfig(16, 4, cost_model=CostModel(6.69e-4, 8.53e-10, SWEEP_ETA))
SWEEP_SEEDS = (1, 2, 3, 4, 5)
SWEEP_CONFIGS = (
    ("lwf:1", "ada-srsf"),
    ("rand", "ada-srsf"),
    ("ff", "ada-srsf"),
    ("ls", "ada-srsf"),
    ("lwf:1", "srsf:1"),
    ("lwf:1", "srsf:2"),
)


def _sweep_one(args):
    seed, placement, scheduler = args
    trace = generate_trace(TraceConfig(seed=seed))
    rep = run_sim(SWEEP_CLUSTER, trace, placement, scheduler, seed=seed)
    agg = rep.aggregates()
    return (placement, scheduler), (agg["avg_jct_s"], agg["avg_gpu_utilization"])


@pytest.fixture(scope="module")
def sweep_results():
    t0 = time.perf_counter()
    tasks = [(seed, pl, sch) for seed in SWEEP_SEEDS for pl, sch in SWEEP_CONFIGS]
    acc: dict[tuple, list] = {cfg: [] for cfg in SWEEP_CONFIGS}
    with ProcessPoolExecutor() as ex:
        for key, vals in ex.map(_sweep_one, tasks):
            acc[key].append(vals)
    elapsed = time.perf_counter() - t0
    means = {
        key: (
            sum(j for j, _ in vals) / len(vals),
            sum(u for _, u in vals) / len(vals),
        )
        for key, vals in acc.items()
    }
    return means, elapsed


class TestCriterion5Directionality:
    def test_a_placement_ordering(self, sweep_results):
        means, _ = sweep_results
        lwf = means[("lwf:1", "ada-srsf")][0]
        rand = means[("rand", "ada-srsf")][0]
        ff = means[("ff", "ada-srsf")][0]
        ls = means[("ls", "ada-srsf")][0]
        savings_vs_rand = 1 - lwf / rand
        ok = lwf < rand and lwf < ff and lwf < ls and savings_vs_rand >= 0.20
        _report(
            "criterion 5a: LWF-1 beats RAND/FF/LS",
            ok,
            f"lwf {lwf:.0f} rand {rand:.0f} ff {ff:.0f} ls {ls:.0f} "
            f"(savings vs rand {savings_vs_rand:.1%})",
        )
        assert ok

    def test_b_scheduler_jct_ordering(self, sweep_results):
        means, _ = sweep_results
        ada = means[("lwf:1", "ada-srsf")][0]
        s1 = means[("lwf:1", "srsf:1")][0]
        s2 = means[("lwf:1", "srsf:2")][0]
        savings_vs_s2 = 1 - ada / s2
        ok = ada < s1 and ada < s2 and savings_vs_s2 >= 0.10
        _report(
            "criterion 5b: Ada-SRSF beats SRSF(1)/SRSF(2)",
            ok,
            f"ada {ada:.0f} srsf1 {s1:.0f} srsf2 {s2:.0f} (savings vs srsf2 {savings_vs_s2:.1%})",
        )
        assert ok

    def test_c_utilization_ordering(self, sweep_results):
        means, _ = sweep_results
        ada = means[("lwf:1", "ada-srsf")][1]
        s1 = means[("lwf:1", "srsf:1")][1]
        s2 = means[("lwf:1", "srsf:2")][1]
        ok = ada > s1 > s2
        _report(
            "criterion 5c: utilization ordering",
            ok,
            f"ada {ada:.3f} srsf1 {s1:.3f} srsf2 {s2:.3f}",
        )
        assert ok

    def test_sweep_runtime(self, sweep_results):
        _, elapsed = sweep_results
        ok = elapsed < 300.0
        _report("criterion 5: sweep runtime", ok, f"{elapsed:.0f}s for 30 simulations")
        assert ok


class TestCriterion6Srsf1Safety:
    def test_no_two_way_contention_whole_run(self):
        trace = generate_trace(TraceConfig(seed=2))
        # validate mode asserts <=1 task per server inside the engine at
        # every event; the link cap raises on any violation as well
        rep = run_sim(DEFAULT_CLUSTER, trace, "lwf:1", "srsf:1", seed=2, validate=True)
        ok = len(rep.jobs) == 160
        _report("criterion 6: SRSF(1) never contends", ok, f"{len(rep.jobs)} jobs completed")
        assert ok


class TestCriterion7Determinism:
    def test_byte_identical_reports(self):
        trace = generate_trace(TraceConfig(seed=3))
        r1 = run_sim(DEFAULT_CLUSTER, trace, "rand", "ada-srsf", seed=11)
        r2 = run_sim(DEFAULT_CLUSTER, trace, "rand", "ada-srsf", seed=11)
        ok = r1.to_json() == r2.to_json()
        _report("criterion 7: determinism", ok)
        assert ok


class TestCriterion8SmallInstanceOptimality:
    def test_ada_near_optimal_on_enumerable_instances(self):
        rng = random.Random(4242)
        profiles = list(BUILTIN_PROFILES.values())
        cluster = ClusterConfig(2, 2, cost_model=FITTED)
        instances = []
        while len(instances) < 50:
            n_jobs = rng.choice([2, 2, 3])
            jobs = []
            for i in range(n_jobs):
                jobs.append(
                    JobSpec(
                        job_id=i,
                        arrival_time=round(rng.uniform(0, 0.4), 3),
                        n_gpus=rng.choice([3, 4] if n_jobs == 2 else [1, 3, 4]),
                        iterations=rng.randint(1, 2),
                        profile=rng.choice(profiles),
                    )
                )
            instances.append(jobs)

        # the 5% bound is on the aggregate over the instance set: single
        # instances exist where only a clairvoyant scheduler (delaying a
        # ready all-reduce on an idle link for a task that is not ready yet)
        # closes the gap, which no online policy can match
        ratios = []
        both_worse = 0
        for jobs in instances:
            opt = brute_force_small_schedule(jobs, cluster)
            ada = run_sim(cluster, jobs, "lwf:1", "ada-srsf").aggregates()["avg_jct_s"]
            s1 = run_sim(cluster, jobs, "lwf:1", "srsf:1").aggregates()["avg_jct_s"]
            s2 = run_sim(cluster, jobs, "lwf:1", "srsf:2").aggregates()["avg_jct_s"]
            ratios.append(ada / opt)
            if ada > s1 + 1e-12 and ada > s2 + 1e-12:
                both_worse += 1
        mean_gap = sum(ratios) / len(ratios) - 1
        ok = mean_gap <= 0.05 and both_worse == 0
        _report(
            "criterion 8: small-instance optimality",
            ok,
            f"mean gap to optimum {mean_gap:.2%} (worst {max(ratios) - 1:.2%}), "
            f"instances where ada trails both baselines: {both_worse}/50",
        )
        assert mean_gap <= 0.05
        assert both_worse == 0
