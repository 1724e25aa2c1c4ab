"""DQN-driven scheduler: state encoding, action decoding and masked inference.

The agent picks (UE, RB count) per allocation step; RBs always start at the
first remaining RB. Action ``a`` selects UE ``a // A`` and RB count
``n_wb + a % A - h`` where ``A = 2h + 1`` and ``n_wb`` is the number of RBs
the wideband rate says the payload needs.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .core import Allocation, AllocationError, SlotState, make_allocation
from .link_model import MAX_MCS, MAX_RI, LinkGrid, wideband_rate
from .qnet import QNetwork

SENTINEL = -1.0
DEFAULT_HALF_WIDTH = 2
DEFAULT_PAYLOAD_SCALE = 16664.0
DEFAULT_QUALITY_SCALE = float(MAX_MCS * MAX_RI)


def actions_per_ue(half_width: int = DEFAULT_HALF_WIDTH) -> int:
    return 2 * half_width + 1


def encode_state(
    state: SlotState,
    payload_scale: float = DEFAULT_PAYLOAD_SCALE,
    quality_scale: float = DEFAULT_QUALITY_SCALE,
) -> np.ndarray:
    """Flat K(B+1) vector of per-UE blocks ``[L_k, g_k0, ..., g_k(B-1)]``.

    UEs with nothing left to schedule get an all-sentinel block; RBs outside
    the remaining window are sentinels too.
    """
    K, B = state.num_ues, state.num_rbs
    out = np.full((K, B + 1), SENTINEL, dtype=np.float32)
    live = [k for k in state.remaining_ues if state.payloads[k] > 0]
    if live:
        live = np.array(live)
        out[live, 0] = state.payloads[live] / payload_scale
        out[live, 1 + state.lo : 1 + state.hi] = state.grid.quality[live, state.lo : state.hi] / quality_scale
    return out.reshape(-1)


def wideband_rates(grid: LinkGrid) -> np.ndarray:
    return np.array([wideband_rate(grid, k) for k in range(grid.num_ues)], dtype=np.int64)


def rbs_needed(payload: int, wb_rate: int, num_rbs: int) -> int:
    if wb_rate <= 0:
        return num_rbs
    return math.ceil(payload / wb_rate)


def valid_action_mask(state: SlotState, half_width: int = DEFAULT_HALF_WIDTH) -> np.ndarray:
    per_ue = actions_per_ue(half_width)
    mask = np.zeros(per_ue * state.num_ues, dtype=bool)
    if state.hi > state.lo:
        for k in state.remaining_ues:
            if state.payloads[k] > 0:
                mask[k * per_ue : (k + 1) * per_ue] = True
    return mask


class Decoded(NamedTuple):
    ue: int
    n_rbs: int
    n_wb: int
    offset: int

    @property
    def n_raw(self) -> int:
        return self.n_wb + self.offset

    @property
    def clamped(self) -> bool:
        return self.n_rbs != self.n_raw


def decode_action(
    a: int, state: SlotState, wb_rates: np.ndarray, half_width: int = DEFAULT_HALF_WIDTH
) -> Decoded:
    per_ue = actions_per_ue(half_width)
    if not 0 <= a < per_ue * state.num_ues:
        raise ValueError(f"action {a} outside [0, {per_ue * state.num_ues - 1}]")
    ue, rem = divmod(a, per_ue)
    if ue not in state.remaining_ues or state.payloads[ue] <= 0 or state.hi <= state.lo:
        raise AllocationError(f"action {a} is masked in the current state")
    n_wb = rbs_needed(int(state.payloads[ue]), int(wb_rates[ue]), state.num_rbs)
    offset = rem - half_width
    n = min(max(n_wb + offset, 1), state.window_size)
    return Decoded(ue, n, n_wb, offset)


def masked_argmax(q: np.ndarray, mask: np.ndarray) -> int:
    return int(np.argmax(np.where(mask, q, -np.inf)))


def star_step(
    state: SlotState,
    net: QNetwork,
    wb_rates: np.ndarray | None = None,
    half_width: int = DEFAULT_HALF_WIDTH,
    payload_scale: float = DEFAULT_PAYLOAD_SCALE,
) -> tuple[Allocation, int, Decoded]:
    mask = valid_action_mask(state, half_width)
    if not mask.any():
        raise AllocationError("no valid action")
    if wb_rates is None:
        wb_rates = wideband_rates(state.grid)
    q = net(encode_state(state, payload_scale))
    a = masked_argmax(q, mask)
    dec = decode_action(a, state, wb_rates, half_width)
    return make_allocation(state, dec.ue, state.lo, dec.n_rbs), a, dec


class StarScheduler:
    name = "star"

    def __init__(self, net: QNetwork, half_width: int = DEFAULT_HALF_WIDTH, payload_scale: float = DEFAULT_PAYLOAD_SCALE):
        self.net = net
        self.half_width = half_width
        self.payload_scale = payload_scale
        self.clamp_events = 0
        self.actions: list[int] = []
        self._wb_grid = None
        self._wb = None

    def check_dimensions(self, num_ues: int, num_rbs: int) -> None:
        sizes = self.net.sizes
        want_in = num_ues * (num_rbs + 1)
        want_out = actions_per_ue(self.half_width) * num_ues
        if sizes[0] != want_in or sizes[-1] != want_out:
            raise ValueError(
                f"model expects input {sizes[0]} / output {sizes[-1]}, "
                f"config needs K(B+1)={want_in} / {want_out}"
            )

    def step(self, state: SlotState) -> Allocation | None:
        if not valid_action_mask(state, self.half_width).any():
            return None
        if self._wb_grid is not state.grid:
            self._wb_grid, self._wb = state.grid, wideband_rates(state.grid)
        alloc, a, dec = star_step(state, self.net, self._wb, self.half_width, self.payload_scale)
        self.actions.append(a)
        self.clamp_events += dec.clamped
        return alloc
