import random

import pytest

from ddlsched.contention import LinkState
from ddlsched.model import CommTask, CostModel
from ddlsched.oracle import sample_objective
from ddlsched.scheduling import (
    AdaSrsfScheduler,
    AdmissionReason,
    DualTaskInstance,
    SrsfNScheduler,
    ada_dual,
    contention_threshold,
    parse_scheduler,
    t_aver_c1,
    t_aver_c2,
)

FITTED = CostModel(a=6.69e-4, b=8.53e-10, eta=2e-10)
REF = DualTaskInstance(m1=1e8, m2=2e8, b=8.53e-10, eta=2e-10)


def make_task(jid, size, servers=(0, 1)):
    return CommTask(
        job_id=jid, total_bytes=size, bytes_remaining=size, server_set=frozenset(servers)
    )


def random_instance(rng):
    m2 = rng.uniform(1e6, 1e9)
    m1 = rng.uniform(1e6, m2)
    b = rng.uniform(1e-10, 1e-8)
    eta = rng.uniform(0, b)
    return DualTaskInstance(m1=m1, m2=m2, b=b, eta=eta)


class TestClosedForms:
    def test_c1_reference_instance(self):
        assert t_aver_c1(REF) == pytest.approx(0.17060, rel=1e-12)

    def test_c1_symmetric(self):
        inst = DualTaskInstance(m1=5e7, m2=5e7, b=2e-9, eta=0.0)
        assert t_aver_c1(inst) == pytest.approx(3 * 2e-9 * 5e7 / 2, rel=1e-12)

    def test_c1_vanishing_small_task(self):
        inst = DualTaskInstance(m1=1.0, m2=2e8, b=8.53e-10, eta=2e-10)
        assert t_aver_c1(inst) == pytest.approx(8.53e-10 * 2e8 / 2, rel=1e-6)

    def test_c2_reference_instance(self):
        c2a, c2b = t_aver_c2(REF)
        assert c2a == pytest.approx(0.23325, rel=1e-12)
        assert c2b == pytest.approx(0.21325, rel=1e-12)

    def test_c2_zero_penalty_symmetric(self):
        m, b = 5e7, 2e-9
        inst = DualTaskInstance(m1=m, m2=m, b=b, eta=0.0)
        c2a, c2b = t_aver_c2(inst)
        assert c2a == pytest.approx(2 * b * m, rel=1e-12)
        assert c2b == pytest.approx(3 * b * m / 2, rel=1e-12)

    def test_c2a_beats_c2b_iff_below_threshold(self):
        rng = random.Random(101)
        for _ in range(1000):
            inst = random_instance(rng)
            c2a, c2b = t_aver_c2(inst)
            below = inst.m1 / inst.m2 < inst.b / (2 * (inst.b + inst.eta))
            assert (c2a < c2b) == below

    def test_c1_never_worse_than_c2(self):
        rng = random.Random(202)
        for _ in range(1000):
            inst = random_instance(rng)
            c2a, c2b = t_aver_c2(inst)
            assert t_aver_c1(inst) <= c2a + 1e-15
            assert t_aver_c1(inst) <= c2b + 1e-15


class TestThreshold:
    def test_fitted_value(self):
        assert contention_threshold(FITTED) == pytest.approx(0.40503, rel=1e-5)

    def test_zero_eta_limit(self):
        assert contention_threshold(CostModel(a=0.0, b=1e-9, eta=0.0)) == 0.5

    def test_eta_equal_b(self):
        assert contention_threshold(CostModel(a=0.0, b=1e-9, eta=1e-9)) == 0.25


class TestMonotonicityCertificates:
    """Finite-difference sign checks on the sampled pair objective."""

    def test_c1_objective_nonincreasing(self):
        offsets = [REF.b * REF.m1 * i / 99 for i in range(100)]
        vals = sample_objective(REF, "C1", offsets, engine="vector")
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))

    def test_c2_overlapped_segment_nondecreasing(self):
        boundary = REF.b * (REF.m2 - REF.m1)
        offsets = [boundary * i / 99 for i in range(100)]
        vals = sample_objective(REF, "C2", offsets, engine="vector")
        assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_c2_tail_segment_nonincreasing(self):
        lo = REF.b * (REF.m2 - REF.m1)
        hi = REF.b * REF.m2
        offsets = [lo + (hi - lo) * (i + 1) / 100 for i in range(100)]
        vals = sample_objective(REF, "C2", offsets, engine="vector")
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


class TestAdaDual:
    def test_idle_servers_accept(self):
        link = LinkState(FITTED, cap=2)
        d = ada_dual(link, make_task(9, 1e8), FITTED)
        assert d.start_now and d.reason is AdmissionReason.NO_CONTENTION

    def test_small_newcomer_accepted(self):
        link = LinkState(FITTED, cap=2)
        link.admit(make_task(0, 1e8), now=0.0)
        d = ada_dual(link, make_task(9, 2e7), FITTED)  # 0.2 < 0.405
        assert d.start_now and d.reason is AdmissionReason.THRESHOLD_ACCEPT

    def test_large_newcomer_rejected(self):
        link = LinkState(FITTED, cap=2)
        link.admit(make_task(0, 1e8), now=0.0)
        d = ada_dual(link, make_task(9, 8e7), FITTED)  # 0.8 >= 0.405
        assert not d.start_now and d.reason is AdmissionReason.THRESHOLD_REJECT

    def test_two_incumbents_reject(self):
        link = LinkState(FITTED, cap=2)
        link.admit(make_task(0, 1e8), now=0.0)
        link.admit(make_task(1, 1e8), now=0.0)
        d = ada_dual(link, make_task(9, 1.0), FITTED)
        assert not d.start_now and d.reason is AdmissionReason.CAP_REJECT

    def test_threshold_uses_remaining_not_total(self):
        link = LinkState(CostModel(a=0.0, b=FITTED.b, eta=FITTED.eta), cap=2)
        link.admit(make_task(0, 1e8), now=0.0)
        link.advance(FITTED.b * 1e8 * 0.9)  # incumbent 90% done
        d = ada_dual(link, make_task(9, 2e7), FITTED)  # 2e7 / 1e7 = 2.0
        assert not d.start_now and d.reason is AdmissionReason.THRESHOLD_REJECT

    def test_conservative_incumbent_across_disjoint_servers(self):
        # two single incumbents across the newcomer's servers: test against
        # the one with more bytes left
        link = LinkState(FITTED, cap=2)
        link.admit(make_task(0, 1e8, servers=(0, 1)), now=0.0)
        link.admit(make_task(1, 4e7, servers=(2, 3)), now=0.0)
        new = make_task(9, 3e7, servers=(1, 2))
        d = ada_dual(link, new, FITTED)  # 3e7/1e8 = 0.3 < 0.405
        assert d.start_now
        new2 = make_task(8, 4.5e7, servers=(1, 2))
        d2 = ada_dual(link, new2, FITTED)  # 4.5e7/1e8 = 0.45 >= 0.405
        assert not d2.start_now

    def test_never_accepts_past_two_way(self):
        rng = random.Random(33)
        for _ in range(200):
            link = LinkState(FITTED, cap=None)
            for jid in range(rng.randint(0, 4)):
                servers = tuple(rng.sample(range(4), 2))
                link.admit(make_task(jid, rng.uniform(1e6, 1e9), servers), now=0.0)
            new = make_task(99, rng.uniform(1e6, 1e9), tuple(rng.sample(range(4), 2)))
            d = ada_dual(link, new, FITTED)
            if link.max_active(new.server_set) >= 2:
                assert not d.start_now


class TestSrsfN:
    def test_n1_rejects_any_incumbent(self):
        sched = SrsfNScheduler(1)
        link = LinkState(FITTED, cap=1)
        link.admit(make_task(0, 1e8), now=0.0)
        d = sched.decide(link, make_task(9, 1.0), FITTED)
        assert not d.start_now and d.reason is AdmissionReason.CAP_REJECT

    def test_n2_blindly_accepts_one_incumbent(self):
        sched = SrsfNScheduler(2)
        link = LinkState(FITTED, cap=2)
        link.admit(make_task(0, 1e8), now=0.0)
        d = sched.decide(link, make_task(9, 9e9), FITTED)  # vastly larger: still yes
        assert d.start_now

    def test_n2_rejects_two_incumbents(self):
        sched = SrsfNScheduler(2)
        link = LinkState(FITTED, cap=2)
        link.admit(make_task(0, 1e8), now=0.0)
        link.admit(make_task(1, 1e8), now=0.0)
        assert not sched.decide(link, make_task(9, 1.0), FITTED).start_now

    def test_empty_link_accepts(self):
        sched = SrsfNScheduler(1)
        link = LinkState(FITTED, cap=1)
        d = sched.decide(link, make_task(9, 1e8), FITTED)
        assert d.start_now and d.reason is AdmissionReason.NO_CONTENTION


class TestParseScheduler:
    def test_strings(self):
        assert isinstance(parse_scheduler("ada-srsf"), AdaSrsfScheduler)
        assert parse_scheduler("srsf:3").n == 3
        assert parse_scheduler("srsf:1").link_cap == 1

    def test_bad_strings(self):
        with pytest.raises(ValueError):
            parse_scheduler("fifo")
        with pytest.raises(ValueError):
            parse_scheduler("srsf:x")

    def test_invalid_n(self):
        with pytest.raises(ValueError):
            SrsfNScheduler(0)


class TestDualTaskInstanceValidation:
    def test_m1_must_not_exceed_m2(self):
        with pytest.raises(ValueError):
            DualTaskInstance(m1=2.0, m2=1.0, b=1e-9, eta=0.0)

    def test_positive_sizes(self):
        with pytest.raises(ValueError):
            DualTaskInstance(m1=0.0, m2=1.0, b=1e-9, eta=0.0)
