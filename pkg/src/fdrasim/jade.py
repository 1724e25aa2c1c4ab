"""Joint allocation with dual ends (JADE)."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import Allocation, SlotState, make_allocation


class Direction(Enum):
    FROM_START = "from_start"
    FROM_END = "from_end"


@dataclass(frozen=True)
class JadeCandidate:
    ue: int
    direction: Direction
    n_rbs: int
    rb_start: int
    rate: int  # cumulative rate over the RBs, capped at the payload


def scan_direction(state: SlotState, ue: int, direction: Direction) -> JadeCandidate:
    """Grow a range one RB at a time from one window end until the payload fits.

    Every cumulative-rate evaluation counts as one metric call.
    """
    rates = state.grid.rate[ue, state.lo : state.hi]
    if direction is Direction.FROM_END:
        rates = rates[::-1]
    cum = np.cumsum(rates)
    payload = int(state.payloads[ue])
    n = int(np.searchsorted(cum, payload, side="left")) + 1
    n = min(n, len(cum))
    state.counters.metric_calls += n
    start = state.lo if direction is Direction.FROM_START else state.hi - n
    return JadeCandidate(ue, direction, n, start, min(int(cum[n - 1]), payload))


def candidate_for(state: SlotState, ue: int) -> JadeCandidate:
    fwd = scan_direction(state, ue, Direction.FROM_START)
    bwd = scan_direction(state, ue, Direction.FROM_END)
    return fwd if fwd.n_rbs <= bwd.n_rbs else bwd


def jade_step(state: SlotState) -> Allocation:
    best = None
    for k in sorted(state.remaining_ues):
        cand = candidate_for(state, k)
        # strict comparison: lowest UE index wins ties
        if best is None or cand.rate > best.rate:
            best = cand
    return make_allocation(state, best.ue, best.rb_start, best.n_rbs)


class JadeScheduler:
    name = "jade"

    def step(self, state: SlotState) -> Allocation | None:
        return jade_step(state) if state.active else None
