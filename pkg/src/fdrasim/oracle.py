"""Exhaustive sum-TBS optimum over contiguous, disjoint RB assignments.

Only meant for tiny instances; it is the ground truth the heuristics are
checked against.
"""
from __future__ import annotations

from dataclasses import asdict

import numpy as np

from .core import Allocation, SlotState, check_allocations, transport_block
from .link_model import SE_TABLE_SHA256, LinkGrid, LinkModelConfig, generate_link_grid
from .traffic import PRESETS


class InstanceTooLarge(ValueError):
    pass


def enumeration_size(num_ues: int, num_rbs: int) -> int:
    """Upper bound on visited assignments: (intervals + 1) ** UEs."""
    intervals = num_rbs * (num_rbs + 1) // 2
    return (intervals + 1) ** num_ues


def optimal_allocation(state: SlotState, max_ues: int = 3, max_rbs: int = 8) -> tuple[list[Allocation], int]:
    ues = sorted(state.remaining_ues)
    lo, hi = state.lo, state.hi
    if len(ues) > max_ues or hi - lo > max_rbs:
        raise InstanceTooLarge(
            f"K={len(ues)}, B={hi - lo} exceeds oracle limits ({max_ues}, {max_rbs}); "
            f"enumeration would visit up to {enumeration_size(len(ues), hi - lo)} assignments"
        )

    intervals = [(s, n) for s in range(lo, hi) for n in range(1, hi - s + 1)]
    masks = [((1 << n) - 1) << (s - lo) for s, n in intervals]
    # value[i][j] = (delivered bits, final mcs) for UE ues[i] on interval j
    value = []
    for k in ues:
        row = []
        for s, n in intervals:
            mcs, tbs = transport_block(state.grid, k, s, n)
            row.append((min(tbs, int(state.payloads[k])), mcs))
        value.append(row)

    best_val = -1
    best_pick: tuple = ()
    pick: list = []

    def visit(i, used, total):
        nonlocal best_val, best_pick
        if i == len(ues):
            if total > best_val:
                best_val, best_pick = total, tuple(pick)
            return
        pick.append(None)
        visit(i + 1, used, total)
        pick.pop()
        for j, m in enumerate(masks):
            if used & m:
                continue
            pick.append(j)
            visit(i + 1, used | m, total + value[i][j][0])
            pick.pop()

    visit(0, 0, 0)

    allocations = []
    for i, j in enumerate(best_pick):
        if j is None:
            continue
        s, n = intervals[j]
        bits, mcs = value[i][j]
        allocations.append(Allocation(ues[i], s, n, mcs, bits))
    allocations.sort(key=lambda a: a.rb_start)
    check_allocations(allocations, state.num_rbs)
    return allocations, max(best_val, 0)


def random_instance(num_ues: int, num_rbs: int, seed: int, coherence_rbs: int = 2) -> SlotState:
    """Small slot drawn from the link model, with 1-3 queued RDD or PD2 packets per UE."""
    cfg = LinkModelConfig(num_ues=num_ues, num_rbs=num_rbs, seed=seed, coherence_rbs=coherence_rbs)
    grid = generate_link_grid(cfg, 0)
    rng = np.random.default_rng([seed, 0x4F52])
    sizes = [m.packet_size_bits for m in PRESETS.values()]
    payloads = [int(rng.choice(sizes)) * int(rng.integers(1, 4)) for _ in range(num_ues)]
    return SlotState.initial(grid, payloads)


def instance_fixture(state: SlotState, seed: int | None = None, max_ues: int = 3, max_rbs: int = 8) -> dict:
    """JSON-ready record of an instance together with its optimum."""
    allocations, best = optimal_allocation(state.copy(), max_ues, max_rbs)
    return {
        "num_ues": state.num_ues,
        "num_rbs": state.num_rbs,
        "seed": seed,
        "se_table_sha256": SE_TABLE_SHA256,
        "mcs": state.grid.mcs.tolist(),
        "ri": state.grid.ri.tolist(),
        "rate": state.grid.rate.tolist(),
        "payloads": [int(p) for p in state.payloads],
        "optimum": best,
        "allocations": [asdict(a) for a in allocations],
    }


def state_from_fixture(fx: dict) -> SlotState:
    return SlotState.initial(LinkGrid.from_mcs_ri(fx["mcs"], fx["ri"]), fx["payloads"])
