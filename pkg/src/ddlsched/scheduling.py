"""Communication-task admission policies.

Two concurrent all-reduces on shared servers can either be serialized or
overlapped. For a pair with remaining sizes M_new <= M_old the overlap wins
exactly when M_new/M_old < b / (2*(b + eta)); the adaptive policy applies
that test to every new-ready task against the largest incumbent, while the
fixed policies blindly cap the per-server task count.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .contention import LinkState
from .model import CommTask, CostModel


@dataclass(frozen=True)
class DualTaskInstance:
    """Two competing all-reduce tasks with sizes m1 <= m2 (bytes)."""
    m1: float
    m2: float
    b: float
    eta: float

    def __post_init__(self) -> None:
        if not (0 < self.m1 <= self.m2):
            raise ValueError("need 0 < m1 <= m2")
        if self.b <= 0 or self.eta < 0:
            raise ValueError("need b > 0 and eta >= 0")


def t_aver_c1(inst: DualTaskInstance) -> float:
    """Best average completion time when the smaller task starts first:
    achieved by serializing (start the larger at the smaller's finish)."""
    return (2 * inst.b * inst.m1 + inst.b * inst.m2) / 2


def t_aver_c2(inst: DualTaskInstance) -> tuple[float, float]:
    """Best average completion times when the larger task starts first:
    (immediate overlap, full serialization)."""
    c2a = ((3 * inst.b + 2 * inst.eta) * inst.m1 + inst.b * inst.m2) / 2
    c2b = (inst.b * inst.m1 + 2 * inst.b * inst.m2) / 2
    return c2a, c2b


def contention_threshold(model: CostModel) -> float:
    """Size ratio below which overlapping beats waiting: b / (2*(b+eta))."""
    return model.b / (2 * (model.b + model.eta))


class AdmissionReason(Enum):
    NO_CONTENTION = "no-contention"
    THRESHOLD_ACCEPT = "threshold-accept"
    THRESHOLD_REJECT = "threshold-reject"
    CAP_REJECT = "cap-reject"


@dataclass(frozen=True)
class AdmissionDecision:
    start_now: bool
    reason: AdmissionReason


def ada_dual(link: LinkState, new_task: CommTask, model: CostModel) -> AdmissionDecision:
    """Decide whether a ready all-reduce may start against the incumbents on
    its servers: start on idle links, overlap a single incumbent only when
    the size-ratio test favors it, never go past two-way sharing.

    With several single incumbents across the task's servers, the test runs
    against the one with the most bytes left (the conservative choice).
    """
    max_task = link.max_active(new_task.server_set)
    if max_task == 0:
        return AdmissionDecision(True, AdmissionReason.NO_CONTENTION)
    if max_task == 1:
        m_old = link.max_incumbent_bytes(new_task.server_set)
        if new_task.bytes_remaining / m_old < contention_threshold(model):
            return AdmissionDecision(True, AdmissionReason.THRESHOLD_ACCEPT)
        return AdmissionDecision(False, AdmissionReason.THRESHOLD_REJECT)
    return AdmissionDecision(False, AdmissionReason.CAP_REJECT)


class AdaSrsfScheduler:
    """Adaptive admission (threshold test), two-way sharing at most."""

    name = "ada-srsf"
    link_cap = 2

    def decide(self, link: LinkState, task: CommTask, model: CostModel) -> AdmissionDecision:
        return ada_dual(link, task, model)


class SrsfNScheduler:
    """Fixed admission: start a ready task iff every involved server runs
    fewer than n tasks; n=1 forbids contention entirely."""

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n = n
        self.name = f"srsf:{n}"
        self.link_cap = n

    def decide(self, link: LinkState, task: CommTask, model: CostModel) -> AdmissionDecision:
        max_task = link.max_active(task.server_set)
        if max_task == 0:
            return AdmissionDecision(True, AdmissionReason.NO_CONTENTION)
        if max_task < self.n:
            return AdmissionDecision(True, AdmissionReason.THRESHOLD_ACCEPT)
        return AdmissionDecision(False, AdmissionReason.CAP_REJECT)


def parse_scheduler(text: str):
    """Build a scheduler from its config string: ada-srsf | srsf:<n>."""
    text = text.strip().lower()
    if text == "ada-srsf":
        return AdaSrsfScheduler()
    if text.startswith("srsf"):
        _, _, arg = text.partition(":")
        try:
            n = int(arg)
        except ValueError:
            raise ValueError(f"bad srsf concurrency in scheduler string {text!r}")
        return SrsfNScheduler(n)
    raise ValueError(f"unknown scheduler {text!r}")
