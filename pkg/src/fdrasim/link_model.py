"""Synthetic per-UE, per-RB link quality.

Stands in for channel estimation + CSI reporting. Each UE gets a static
large-scale SNR (normal in dB) plus a block-fading term that is constant over
``coherence_rbs`` consecutive RBs and evolves across slots as an AR(1)
process. SNR is mapped to (MCS, RI) by fixed thresholds with rank adaptation,
and (MCS, RI) to bits per RB through a spectral-efficiency table.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

MAX_MCS = 27
MAX_RI = 4
# 12 subcarriers x 14 symbols x 0.9 overhead factor = 151.2 REs per RB,
# kept as the exact fraction 1512/10 so rates are integer arithmetic.
_RE_NUM = 12 * 14 * 9
_SE_SCALE = 10_000  # table is stored with 4 decimals
_RE_DEN = 10 * _SE_SCALE

# Shannon-gap style loss used to place the MCS switching thresholds.
_THRESHOLD_EFFICIENCY = 0.8
# Extra per-layer SNR loss (inter-layer interference / antenna correlation);
# without it rank 4 wins almost everywhere.
RANK_PENALTY_DB = 3.0

_STREAM_LARGE_SCALE = 0x4C53
_STREAM_FADING = 0x4644

SE_TABLE_FILE = "se_table_v1.csv"


def _load_se_table() -> tuple[np.ndarray, str]:
    raw = resources.files("fdrasim").joinpath("data", SE_TABLE_FILE).read_bytes()
    rows = [line for line in raw.decode("utf-8").splitlines() if line and not line.startswith("#")]
    se_e4 = {}
    for rec in csv.DictReader(rows):
        whole, _, frac = rec["bits_per_symbol"].partition(".")
        se_e4[int(rec["mcs_index"])] = int(whole) * _SE_SCALE + int(frac.ljust(4, "0")[:4])
    if sorted(se_e4) != list(range(MAX_MCS + 1)):
        raise ValueError(f"{SE_TABLE_FILE}: expected MCS indices 0..{MAX_MCS}")
    table = np.array([se_e4[m] for m in range(MAX_MCS + 1)], dtype=np.int64)
    if table[0] != 0 or np.any(np.diff(table) <= 0):
        raise ValueError(f"{SE_TABLE_FILE}: table must start at 0 and be strictly increasing")
    return table, hashlib.sha256(raw).hexdigest()


SE_E4, SE_TABLE_SHA256 = _load_se_table()

# PER_RB_RATE[mcs, ri - 1] in bits per slot
PER_RB_RATE = (
    np.arange(1, MAX_RI + 1, dtype=np.int64)[None, :] * SE_E4[:, None] * _RE_NUM
) // _RE_DEN

# SNR (dB, per layer) at which each MCS becomes usable; index 0 unused.
MCS_THRESHOLDS_DB = np.array(
    [-np.inf]
    + [10 * math.log10(2 ** (SE_E4[m] / _SE_SCALE / _THRESHOLD_EFFICIENCY) - 1) for m in range(1, MAX_MCS + 1)]
)


def spectral_efficiency(mcs: int) -> float:
    return SE_E4[mcs] / _SE_SCALE


def per_rb_rate(mcs: int, ri: int) -> int:
    _check_mcs_ri(mcs, ri)
    return int(PER_RB_RATE[mcs, ri - 1])


def rate_for(mcs: int, ri: int, num_rbs: int) -> int:
    """Bits carried by ``num_rbs`` RBs at a flat (mcs, ri)."""
    _check_mcs_ri(mcs, ri)
    if num_rbs < 0:
        raise ValueError(f"num_rbs must be >= 0, got {num_rbs}")
    return num_rbs * int(PER_RB_RATE[mcs, ri - 1])


def _check_mcs_ri(mcs, ri):
    if not 0 <= mcs <= MAX_MCS:
        raise ValueError(f"mcs {mcs} outside [0, {MAX_MCS}]")
    if not 1 <= ri <= MAX_RI:
        raise ValueError(f"ri {ri} outside [1, {MAX_RI}]")


@dataclass(frozen=True, eq=False)
class LinkGrid:
    """Per-UE per-RB MCS, RI and rate (K x B integer arrays)."""

    mcs: np.ndarray
    ri: np.ndarray
    rate: np.ndarray

    def __post_init__(self):
        if not (self.mcs.shape == self.ri.shape == self.rate.shape) or self.mcs.ndim != 2:
            raise ValueError("mcs, ri and rate must be K x B arrays of equal shape")

    @classmethod
    def from_mcs_ri(cls, mcs, ri) -> "LinkGrid":
        mcs = np.asarray(mcs, dtype=np.int64)
        ri = np.asarray(ri, dtype=np.int64)
        if mcs.ndim == 1:
            mcs, ri = mcs[None, :], ri[None, :]
        if mcs.min(initial=0) < 0 or mcs.max(initial=0) > MAX_MCS:
            raise ValueError("mcs outside [0, 27]")
        if ri.size and (ri.min() < 1 or ri.max() > MAX_RI):
            raise ValueError("ri outside [1, 4]")
        return cls(mcs=mcs, ri=ri, rate=PER_RB_RATE[mcs, ri - 1])

    @property
    def num_ues(self) -> int:
        return self.mcs.shape[0]

    @property
    def num_rbs(self) -> int:
        return self.mcs.shape[1]

    @property
    def quality(self) -> np.ndarray:
        return self.mcs * self.ri

    def __eq__(self, other):
        if not isinstance(other, LinkGrid):
            return NotImplemented
        return (
            np.array_equal(self.mcs, other.mcs)
            and np.array_equal(self.ri, other.ri)
            and np.array_equal(self.rate, other.rate)
        )

    __hash__ = None


@dataclass(frozen=True)
class LinkModelConfig:
    num_ues: int = 5
    num_rbs: int = 50
    seed: int = 0
    coherence_rbs: int = 5
    snr_mean_db: float = 18.0
    snr_std_db: float = 6.0
    fading_std_db: float = 4.0
    slot_correlation: float = 0.9

    def __post_init__(self):
        if self.num_ues < 0 or self.num_rbs < 1:
            raise ValueError("need num_ues >= 0 and num_rbs >= 1")
        if self.coherence_rbs < 1:
            raise ValueError("coherence_rbs must be >= 1")
        if not 0.0 <= self.slot_correlation <= 1.0:
            raise ValueError("slot_correlation must lie in [0, 1]")
        if self.snr_std_db < 0 or self.fading_std_db < 0:
            raise ValueError("standard deviations must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def num_blocks(self) -> int:
        return -(-self.num_rbs // self.coherence_rbs)


def snr_to_mcs_ri(snr_db: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pick, per entry, the rank maximizing ri * rate(mcs at per-layer SNR).

    Ties go to the lower rank.
    """
    snr_db = np.asarray(snr_db, dtype=float)
    best_rate = np.full(snr_db.shape, -1, dtype=np.int64)
    best_mcs = np.zeros(snr_db.shape, dtype=np.int64)
    best_ri = np.ones(snr_db.shape, dtype=np.int64)
    for ri in range(1, MAX_RI + 1):
        layer_snr = snr_db - 10 * math.log10(ri) - RANK_PENALTY_DB * (ri - 1)
        mcs = np.searchsorted(MCS_THRESHOLDS_DB[1:], layer_snr, side="right")
        rate = PER_RB_RATE[mcs, ri - 1]
        better = rate > best_rate
        best_rate = np.where(better, rate, best_rate)
        best_mcs = np.where(better, mcs, best_mcs)
        best_ri = np.where(better, ri, best_ri)
    return best_mcs, best_ri


class LinkModel:
    """Stateful generator; ``grid(slot)`` is a pure function of (cfg, slot).

    The AR(1) fading state is cached so sequential slot access is O(1);
    requesting an earlier slot replays from slot 0.
    """

    def __init__(self, cfg: LinkModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, _STREAM_LARGE_SCALE])
        self.large_scale_db = rng.normal(cfg.snr_mean_db, cfg.snr_std_db, size=cfg.num_ues)
        self._slot = -1
        self._fading = None

    def _innovation(self, slot):
        rng = np.random.default_rng([self.cfg.seed, _STREAM_FADING, slot])
        return rng.standard_normal((self.cfg.num_ues, self.cfg.num_blocks))

    def fading_db(self, slot: int) -> np.ndarray:
        if slot < 0:
            raise ValueError("slot must be non-negative")
        if slot < self._slot:
            self._slot, self._fading = -1, None
        rho = self.cfg.slot_correlation
        sigma = self.cfg.fading_std_db
        while self._slot < slot:
            nxt = self._slot + 1
            w = self._innovation(nxt)
            if self._fading is None:
                self._fading = sigma * w
            else:
                self._fading = rho * self._fading + math.sqrt(1.0 - rho * rho) * sigma * w
            self._slot = nxt
        return self._fading

    def snr_db(self, slot: int) -> np.ndarray:
        blocks = self.fading_db(slot)
        per_rb = np.repeat(blocks, self.cfg.coherence_rbs, axis=1)[:, : self.cfg.num_rbs]
        return self.large_scale_db[:, None] + per_rb

    def grid(self, slot: int) -> LinkGrid:
        mcs, ri = snr_to_mcs_ri(self.snr_db(slot))
        return LinkGrid(mcs=mcs, ri=ri, rate=PER_RB_RATE[mcs, ri - 1])


def generate_link_grid(cfg: LinkModelConfig, slot: int) -> LinkGrid:
    return LinkModel(cfg).grid(slot)


def wideband_summary(grid: LinkGrid, ue: int) -> tuple[int, int]:
    """Wideband (mcs, ri) of one UE over the whole BWP.

    The per-RB wideband rate is the geometric mean of the per-RB rates; the
    wideband rank is the rounded mean rank, and the wideband MCS is the
    largest index whose per-RB rate at that rank does not exceed the mean.
    The result is clipped to the per-RB extremes of the row.
    """
    rates = grid.rate[ue]
    mcs_row = grid.mcs[ue]
    ri_row = grid.ri[ue]
    wb_ri = int(math.floor(float(ri_row.mean()) + 0.5))
    if np.any(rates <= 0):
        geo = 0.0
    else:
        geo = math.exp(float(np.log(rates.astype(float)).mean()))
    # PER_RB_RATE is increasing in mcs, so count entries <= geo
    # (small slack absorbs exp/log round-off on constant rows)
    wb_mcs = int(np.searchsorted(PER_RB_RATE[:, wb_ri - 1], geo * (1 + 1e-12), side="right")) - 1
    wb_mcs = min(max(wb_mcs, int(mcs_row.min())), int(mcs_row.max()))
    return wb_mcs, wb_ri


def wideband_rate(grid: LinkGrid, ue: int) -> int:
    wb_mcs, wb_ri = wideband_summary(grid, ue)
    return int(PER_RB_RATE[wb_mcs, wb_ri - 1])
