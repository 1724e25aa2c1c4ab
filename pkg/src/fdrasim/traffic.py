"""Periodic URLLC packet sources with head-of-line deadline dropping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace


@dataclass(frozen=True)
class TrafficModel:
    name: str
    packet_size_bits: int
    delay_threshold: int  # slots
    arrival_period: int = 1
    arrival_offset: int = 0

    def __post_init__(self):
        if self.packet_size_bits <= 0:
            raise ValueError("packet_size_bits must be positive")
        if self.delay_threshold < 1:
            raise ValueError("delay_threshold must be >= 1 slot")
        if self.arrival_period < 1:
            raise ValueError("arrival_period must be >= 1")
        if self.arrival_offset < 0:
            raise ValueError("arrival_offset must be >= 0")

    def arrives(self, slot: int) -> bool:
        return slot >= self.arrival_offset and (slot - self.arrival_offset) % self.arrival_period == 0


def delay_slots(delay_ms: float, slot_ms: float = 0.5) -> int:
    """Delay budget expressed in whole slots (rounded up)."""
    return max(1, math.ceil(delay_ms / slot_ms - 1e-9))


# 1 ms budget at 30 kHz SCS (0.5 ms slots)
RDD = TrafficModel("rdd", packet_size_bits=16664, delay_threshold=delay_slots(1.0))
PD2 = TrafficModel("pd2", packet_size_bits=2000, delay_threshold=delay_slots(1.0))

PRESETS = {m.name: m for m in (RDD, PD2)}


def get_model(name: str, **overrides) -> TrafficModel:
    try:
        base = PRESETS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown traffic model {name!r}; known: {sorted(PRESETS)}") from None
    return replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class Packet:
    remaining_bits: int
    arrival_slot: int
    size_bits: int


@dataclass(frozen=True)
class UeQueue:
    ue: int
    pending: tuple[Packet, ...] = ()
    dropped_packets: int = 0
    dropped_bits: int = 0
    delivered_bits: int = 0
    delivered_packets: int = 0
    generated_bits: int = 0
    generated_packets: int = 0
    last_slot: int = field(default=-1)

    @property
    def backlog_bits(self) -> int:
        return sum(p.remaining_bits for p in self.pending)

    def hol_delay(self, slot: int) -> int | None:
        return slot - self.pending[0].arrival_slot if self.pending else None


def advance_slot(queue: UeQueue, model: TrafficModel, slot: int, partial_credit: bool = False) -> UeQueue:
    """Expire overdue packets, then admit this slot's arrival."""
    if slot <= queue.last_slot:
        raise ValueError(f"slot must increase: got {slot} after {queue.last_slot}")
    kept = []
    dropped = dropped_bits = 0
    for p in queue.pending:
        if slot - p.arrival_slot > model.delay_threshold:
            dropped += 1
            # with partial credit the consumed bits were already counted as delivered
            dropped_bits += p.remaining_bits if partial_credit else p.size_bits
        else:
            kept.append(p)
    generated_bits, generated_packets = queue.generated_bits, queue.generated_packets
    if model.arrives(slot):
        kept.append(Packet(model.packet_size_bits, slot, model.packet_size_bits))
        generated_bits += model.packet_size_bits
        generated_packets += 1
    return replace(
        queue,
        pending=tuple(kept),
        dropped_packets=queue.dropped_packets + dropped,
        dropped_bits=queue.dropped_bits + dropped_bits,
        generated_bits=generated_bits,
        generated_packets=generated_packets,
        last_slot=slot,
    )


def consume(queue: UeQueue, bits: int, partial_credit: bool = False) -> UeQueue:
    """Serve ``bits`` from the head of the queue.

    Only completed packets are credited unless ``partial_credit`` is set.
    Bits beyond the backlog are discarded.
    """
    if bits < 0:
        raise ValueError("bits must be non-negative")
    if bits == 0 or not queue.pending:
        return queue
    pending = list(queue.pending)
    delivered = queue.delivered_bits
    completed = queue.delivered_packets
    while bits > 0 and pending:
        head = pending[0]
        used = min(bits, head.remaining_bits)
        bits -= used
        if partial_credit:
            delivered += used
        if used == head.remaining_bits:
            pending.pop(0)
            completed += 1
            if not partial_credit:
                delivered += head.size_bits
        else:
            pending[0] = replace(head, remaining_bits=head.remaining_bits - used)
    return replace(queue, pending=tuple(pending), delivered_bits=delivered, delivered_packets=completed)
