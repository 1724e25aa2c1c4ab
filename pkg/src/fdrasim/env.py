"""Single-cell slot loop: traffic queues + link grid + one scheduler."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Allocation, Scheduler, SlotResult, SlotState, rescore, run_slot
from .link_model import LinkGrid, LinkModel, LinkModelConfig
from .traffic import TrafficModel, UeQueue, advance_slot, consume


@dataclass(frozen=True)
class CellConfig:
    link: LinkModelConfig
    models: tuple[TrafficModel, ...]  # one per UE
    csi_delay: bool = False
    partial_credit: bool = False

    def __post_init__(self):
        if len(self.models) != self.link.num_ues:
            raise ValueError(f"{len(self.models)} traffic models for {self.link.num_ues} UEs")

    @property
    def num_ues(self) -> int:
        return self.link.num_ues

    @property
    def num_rbs(self) -> int:
        return self.link.num_rbs


@dataclass
class Cell:
    """Owns the queues and the link model of one simulated cell.

    With ``csi_delay`` the scheduler sees the previous slot's grid while
    delivered bits are capped by the current one.
    """

    cfg: CellConfig
    slot: int = -1
    queues: list[UeQueue] = field(init=False)
    link: LinkModel = field(init=False)
    actual_grid: LinkGrid | None = field(init=False, default=None)
    sched_grid: LinkGrid | None = field(init=False, default=None)

    def __post_init__(self):
        self.queues = [UeQueue(k) for k in range(self.cfg.num_ues)]
        self.link = LinkModel(self.cfg.link)

    def begin_slot(self) -> SlotState:
        self.slot += 1
        s = self.slot
        self.queues = [
            advance_slot(q, m, s, self.cfg.partial_credit) for q, m in zip(self.queues, self.cfg.models)
        ]
        prev = self.actual_grid
        self.actual_grid = self.link.grid(s)
        self.sched_grid = prev if (self.cfg.csi_delay and prev is not None) else self.actual_grid
        payloads = np.array([q.backlog_bits for q in self.queues], dtype=np.int64)
        return SlotState.initial(self.sched_grid, payloads, slot=s)

    def rescore(self, alloc: Allocation) -> Allocation:
        if self.sched_grid is self.actual_grid:
            return alloc
        return rescore(alloc, self.actual_grid)

    def commit(self, alloc: Allocation) -> None:
        k = alloc.ue
        self.queues[k] = consume(self.queues[k], alloc.delivered_tbs, self.cfg.partial_credit)

    def run_slot(self, scheduler: Scheduler) -> SlotResult:
        state = self.begin_slot()
        actual = None if self.sched_grid is self.actual_grid else self.actual_grid
        result = run_slot(state, scheduler, actual)
        for alloc in result.allocations:
            self.commit(alloc)
        return result

    def run(self, scheduler: Scheduler, slots: int) -> list[SlotResult]:
        return [self.run_slot(scheduler) for _ in range(slots)]
