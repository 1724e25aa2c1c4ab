import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_state
from fdrasim.core import AllocationError, SlotState, make_allocation
from fdrasim.env import Cell, CellConfig
from fdrasim.link_model import LinkModelConfig, wideband_rate
from fdrasim.qnet import QNetwork
from fdrasim.star import (
    DEFAULT_PAYLOAD_SCALE,
    StarScheduler,
    decode_action,
    encode_state,
    masked_argmax,
    star_step,
    valid_action_mask,
    wideband_rates,
)
from fdrasim.traffic import PD2

DATA = Path(__file__).parent / "data"


def flat_state(k, b, payloads, mcs=10, ri=2):
    return make_state([[mcs] * b] * k, [[ri] * b] * k, payloads)


def one_hot_net(in_dim, out_dim, a):
    """Net whose output is e_a for any non-negative input (a ReLU path through bias)."""
    w = [np.zeros((in_dim, 4), np.float32), np.zeros((4, out_dim), np.float32)]
    b = [np.ones(4, np.float32), np.zeros(out_dim, np.float32)]
    w[1][:, a] = 1.0
    return QNetwork(w, b)


def test_all_zero_payloads_encode_to_sentinels():
    s = flat_state(3, 4, [0, 0, 0])
    v = encode_state(s)
    assert v.shape == (15,)
    assert (v == -1).all()


def test_encode_single_ue_example():
    s = make_state([[3, 5]], [[1, 2]], [1000])
    v = encode_state(s)
    assert v.tolist() == pytest.approx([1000 / DEFAULT_PAYLOAD_SCALE, 3 / 108, 10 / 108])
    # unnormalized view
    assert encode_state(s, payload_scale=1.0, quality_scale=1.0).tolist() == [1000, 3, 10]


def test_scheduled_ue_block_flips_to_sentinel():
    s = flat_state(2, 6, [500, 800])
    s.apply(make_allocation(s, 0, 0, 2))
    v = encode_state(s).reshape(2, 7)
    assert (v[0] == -1).all()
    # consumed RBs are sentinels for the remaining UE too
    assert (v[1, 1:3] == -1).all() and (v[1, 3:] > 0).all()


@given(st.integers(1, 6), st.integers(1, 30))
def test_encode_length(k, b):
    assert encode_state(flat_state(k, b, [100] * k)).shape == (k * (b + 1),)


def test_mask_cases():
    s = flat_state(4, 5, [100] * 4)
    assert valid_action_mask(s).all()
    s.remaining_ues.remove(2)
    m = valid_action_mask(s)
    assert not m[10:15].any() and m[:10].all() and m[15:].all()
    s.lo = s.hi
    assert not valid_action_mask(s).any()


def test_decode_examples():
    # wideband rate per RB for mcs 10, ri 2 under the frozen table
    s = flat_state(2, 20, [3000, 3000])
    wb = wideband_rates(s.grid)
    n_wb = math.ceil(3000 / wb[1])
    d = decode_action(7, s, wb)
    assert (d.ue, d.offset, d.n_rbs) == (1, 0, n_wb)
    d = decode_action(0, s, wb)
    assert (d.ue, d.n_rbs) == (0, max(n_wb - 2, 1))


def test_decode_clamps_floor():
    s = flat_state(1, 10, [50])
    d = decode_action(0, s, wideband_rates(s.grid))
    assert d.n_wb == 1 and d.n_raw == -1 and d.n_rbs == 1 and d.clamped


def test_decode_errors():
    s = flat_state(2, 4, [100, 0])
    wb = wideband_rates(s.grid)
    with pytest.raises(ValueError):
        decode_action(10, s, wb)
    with pytest.raises(AllocationError):
        decode_action(6, s, wb)


def test_decode_exhaustive_with_window_clamps():
    k = 4
    s = make_state([[6] * 12, [15] * 12, [22] * 12, [2] * 12], [[1] * 12, [2] * 12, [4] * 12, [1] * 12],
                   [900, 5000, 20000, 3000])
    s.lo, s.hi = 3, 10  # window of 7 RBs
    wb = wideband_rates(s.grid)
    for a in range(5 * k):
        d = decode_action(a, s, wb)
        n_wb = math.ceil(int(s.payloads[a // 5]) / wideband_rate(s.grid, a // 5))
        assert d.ue == a // 5
        assert d.n_wb == n_wb
        assert d.n_rbs == min(max(n_wb + a % 5 - 2, 1), 7)


def test_one_hot_network_forces_action():
    s = flat_state(3, 4, [100, 200, 300])
    for a in range(15):
        net = one_hot_net(15, 15, a)
        _, chosen, _ = star_step(s.copy(), net)
        assert chosen == a


def test_masked_argmax_skips_invalid():
    q = np.array([0.1, 5.0, 0.3, 0.2])
    mask = np.array([True, False, True, True])
    assert masked_argmax(q, mask) == 2


def test_star_step_counts_one_metric_call():
    s = flat_state(3, 10, [400, 900, 2000])
    net = QNetwork.for_problem(3, 10, np.random.default_rng(0))
    star_step(s, net)
    assert s.counters.metric_calls == 1


def test_golden_trace():
    fx = json.loads((DATA / "star_trace.json").read_text())
    net = QNetwork.for_problem(3, 12, np.random.default_rng(fx["net_seed"]))
    cell = Cell(CellConfig(LinkModelConfig(**fx["link"]), (PD2, PD2, PD2)))
    sched = StarScheduler(net)
    res = cell.run(sched, fx["slots"])
    got = [[[a.ue, a.rb_start, a.rb_count, a.final_mcs, a.delivered_tbs] for a in r.allocations] for r in res]
    assert sched.actions == fx["actions"]
    assert got == fx["allocations"]
    assert sched.clamp_events == fx["clamp_events"]


def test_dimension_check():
    sched = StarScheduler(QNetwork.for_problem(3, 12, np.random.default_rng(0)))
    sched.check_dimensions(3, 12)
    with pytest.raises(ValueError):
        sched.check_dimensions(5, 50)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_star_stays_in_window(seed):
    rng = np.random.default_rng(seed)
    k, b = int(rng.integers(1, 5)), int(rng.integers(1, 15))
    net = QNetwork.for_problem(k, b, rng)
    s = make_state(rng.integers(0, 28, (k, b)), rng.integers(1, 5, (k, b)), rng.integers(0, 20000, k))
    sched = StarScheduler(net)
    while valid_action_mask(s).any():
        before = (s.lo, s.hi, list(s.remaining_ues))
        alloc = sched.step(s)
        assert alloc.ue in before[2]
        assert alloc.rb_start == before[0] and alloc.rb_stop <= before[1]
        s.apply(alloc)
