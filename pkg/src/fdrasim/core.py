"""Slot bookkeeping shared by every scheduler.

The free part of the BWP is always one interval ``[lo, hi)``: JADE takes
RBs from either end and STAR/random take them from the front, so any
allocation must sit flush against one end of the current window.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .link_model import MAX_MCS, PER_RB_RATE, LinkGrid


class InvariantViolation(RuntimeError):
    """A structural scheduling invariant was broken."""


class AllocationError(InvariantViolation):
    """A scheduler returned an allocation the window cannot accept."""


@dataclass(frozen=True)
class Allocation:
    ue: int
    rb_start: int
    rb_count: int
    final_mcs: int
    delivered_tbs: int

    @property
    def rb_stop(self) -> int:
        return self.rb_start + self.rb_count


@dataclass
class ComplexityCounter:
    metric_calls: int = 0
    allocation_steps: int = 0

    def __iadd__(self, other: "ComplexityCounter"):
        self.metric_calls += other.metric_calls
        self.allocation_steps += other.allocation_steps
        return self


@dataclass
class SlotState:
    """Intra-slot scheduling state.

    ``payloads`` holds the bits still wanted by each of the K UEs; a UE leaves
    ``remaining_ues`` once it has been scheduled, whatever is left over.
    """

    grid: LinkGrid
    payloads: np.ndarray
    remaining_ues: list[int]
    lo: int
    hi: int
    slot: int = 0
    counters: ComplexityCounter = field(default_factory=ComplexityCounter)

    @classmethod
    def initial(cls, grid: LinkGrid, payloads, slot: int = 0) -> "SlotState":
        payloads = np.asarray(payloads, dtype=np.int64).copy()
        if payloads.shape != (grid.num_ues,):
            raise ValueError(f"expected {grid.num_ues} payloads, got shape {payloads.shape}")
        remaining = [k for k in range(grid.num_ues) if payloads[k] > 0]
        return cls(grid=grid, payloads=payloads, remaining_ues=remaining, lo=0, hi=grid.num_rbs, slot=slot)

    @property
    def num_ues(self) -> int:
        return self.grid.num_ues

    @property
    def num_rbs(self) -> int:
        return self.grid.num_rbs

    @property
    def window_size(self) -> int:
        return self.hi - self.lo

    @property
    def window(self) -> tuple[int, int] | None:
        """Inclusive (first, last) remaining RB, or None when exhausted."""
        return (self.lo, self.hi - 1) if self.hi > self.lo else None

    @property
    def active(self) -> bool:
        return bool(self.remaining_ues) and self.hi > self.lo

    def copy(self) -> "SlotState":
        return SlotState(
            grid=self.grid,
            payloads=self.payloads.copy(),
            remaining_ues=list(self.remaining_ues),
            lo=self.lo,
            hi=self.hi,
            slot=self.slot,
            counters=ComplexityCounter(self.counters.metric_calls, self.counters.allocation_steps),
        )

    def check(self, alloc: Allocation) -> None:
        if alloc.ue not in self.remaining_ues:
            raise AllocationError(f"UE {alloc.ue} is not awaiting scheduling in slot {self.slot}")
        if alloc.rb_count < 1:
            raise AllocationError(f"empty allocation for UE {alloc.ue}")
        if alloc.rb_start < self.lo or alloc.rb_stop > self.hi:
            raise AllocationError(
                f"RBs [{alloc.rb_start}, {alloc.rb_stop}) fall outside window [{self.lo}, {self.hi})"
            )
        if alloc.rb_start != self.lo and alloc.rb_stop != self.hi:
            raise AllocationError(
                f"RBs [{alloc.rb_start}, {alloc.rb_stop}) not flush with window [{self.lo}, {self.hi})"
            )
        if alloc.delivered_tbs > self.payloads[alloc.ue]:
            raise AllocationError(f"UE {alloc.ue} delivered more than its payload")

    def apply(self, alloc: Allocation) -> None:
        self.check(alloc)
        self.remaining_ues.remove(alloc.ue)
        if alloc.rb_start == self.lo:
            self.lo = alloc.rb_stop
        else:
            self.hi = alloc.rb_start
        self.payloads[alloc.ue] -= alloc.delivered_tbs
        self.counters.allocation_steps += 1


class Scheduler(Protocol):
    name: str

    def step(self, state: SlotState) -> Allocation | None:
        """Next allocation for ``state``, or None to end the slot."""


@dataclass
class SlotResult:
    slot: int
    num_rbs: int
    allocations: list[Allocation]
    counters: ComplexityCounter

    @property
    def sum_tbs(self) -> int:
        return sum_metric(self.allocations)

    @property
    def resource_utilization(self) -> float:
        return sum(a.rb_count for a in self.allocations) / self.num_rbs


def _flat_mcs_ri(grid: LinkGrid, ue: int, rb_start: int, rb_count: int) -> tuple[int, int]:
    if rb_count < 1:
        raise ValueError("empty RB range")
    if rb_start < 0 or rb_start + rb_count > grid.num_rbs:
        raise ValueError(f"RB range [{rb_start}, {rb_start + rb_count}) outside BWP of {grid.num_rbs}")
    sl = slice(rb_start, rb_start + rb_count)
    total = int(grid.rate[ue, sl].sum())
    ri_eff = int(grid.ri[ue, sl].min())
    cap = int(grid.mcs[ue, sl].max())
    column = PER_RB_RATE[: MAX_MCS + 1, ri_eff - 1] * rb_count
    mcs = int(np.searchsorted(column, total, side="right")) - 1
    return min(mcs, cap), ri_eff


def final_mcs_over(grid: LinkGrid, ue: int, rb_start: int, rb_count: int) -> int:
    """Final MCS for a contiguous range.

    Largest MCS whose flat rate at the range's lowest rank fits within the
    summed per-RB rates, capped at the best per-RB MCS in the range.
    """
    return _flat_mcs_ri(grid, ue, rb_start, rb_count)[0]


def transport_block(grid: LinkGrid, ue: int, rb_start: int, rb_count: int) -> tuple[int, int]:
    """(final mcs, TBS) for UE ``ue`` over a contiguous range."""
    mcs, ri = _flat_mcs_ri(grid, ue, rb_start, rb_count)
    return mcs, rb_count * int(PER_RB_RATE[mcs, ri - 1])


def make_allocation(state: SlotState, ue: int, rb_start: int, rb_count: int) -> Allocation:
    """Final-MCS evaluation for a chosen range; counts as one metric call."""
    mcs, tbs = transport_block(state.grid, ue, rb_start, rb_count)
    state.counters.metric_calls += 1
    return Allocation(ue, rb_start, rb_count, mcs, min(tbs, int(state.payloads[ue])))


def rescore(alloc: Allocation, actual: LinkGrid) -> Allocation:
    """Cap delivered bits by what the real channel could carry on those RBs."""
    capacity = int(actual.rate[alloc.ue, alloc.rb_start : alloc.rb_stop].sum())
    if alloc.delivered_tbs <= capacity:
        return alloc
    return Allocation(alloc.ue, alloc.rb_start, alloc.rb_count, alloc.final_mcs, capacity)


def run_slot(state: SlotState, scheduler: Scheduler, actual_grid: LinkGrid | None = None) -> SlotResult:
    """Run allocation steps until no UE/RB remains or the scheduler declines.

    ``state`` is consumed. When ``actual_grid`` is given (CSI delay), the
    scheduler decides on ``state.grid`` and delivered bits are capped by the
    actual grid.
    """
    allocations = []
    while state.active:
        alloc = scheduler.step(state)
        if alloc is None:
            break
        state.check(alloc)
        if actual_grid is not None:
            alloc = rescore(alloc, actual_grid)
        state.apply(alloc)
        allocations.append(alloc)
    check_allocations(allocations, state.num_rbs)
    return SlotResult(state.slot, state.num_rbs, allocations, state.counters)


def sum_metric(allocations) -> int:
    return sum(a.delivered_tbs for a in allocations)


def check_allocations(allocations, num_rbs: int) -> None:
    """Raise InvariantViolation on overlap, out-of-BWP ranges or repeated UEs."""
    used = np.zeros(num_rbs, dtype=bool)
    seen = set()
    for a in allocations:
        if a.rb_count < 1 or a.rb_start < 0 or a.rb_stop > num_rbs:
            raise InvariantViolation(f"allocation {a} outside BWP of {num_rbs} RBs")
        if used[a.rb_start : a.rb_stop].any():
            raise InvariantViolation(f"allocation {a} overlaps an earlier one")
        if a.ue in seen:
            raise InvariantViolation(f"UE {a.ue} allocated twice in one slot")
        used[a.rb_start : a.rb_stop] = True
        seen.add(a.ue)
