"""DQN training for the STAR scheduler.

One environment step is one allocation step. Within a slot the next state
is the post-allocation state; after a slot's last allocation it is the
first state of the next slot, so the chain only terminates at the episode
horizon.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .core import SlotResult, SlotState, make_allocation
from .env import Cell, CellConfig
from .qnet import Adam, QNetwork, td_loss_and_grads
from .star import (
    DEFAULT_HALF_WIDTH,
    DEFAULT_PAYLOAD_SCALE,
    StarScheduler,
    actions_per_ue,
    decode_action,
    encode_state,
    masked_argmax,
    valid_action_mask,
    wideband_rates,
)

log = logging.getLogger(__name__)

_STREAM_INIT = 1
_STREAM_EXPLORE = 2
_STREAM_REPLAY = 3
_STREAM_EPISODE = 4


class TrainingDiverged(RuntimeError):
    pass


def step_reward(step_tbs, payloads) -> tuple[float, float]:
    """(p_i, r_i) after the last of ``step_tbs``.

    ``step_tbs[j]`` is the TBS delivered at allocation step j, either a
    scalar or a per-UE vector. ``p_i`` is the step's delivered share of the
    slot's total payload; ``r_i`` is the cumulative share, which equals the
    sum of the p_j because delivered bits never exceed the payload.
    """
    total = float(np.sum(payloads))
    if total <= 0:
        raise ValueError("reward undefined for a slot with zero total payload")
    per_step = [float(np.sum(t)) for t in step_tbs]
    if not per_step:
        return 0.0, 0.0
    p_i = min(per_step[-1], total) / total
    r_i = min(sum(per_step), total) / total
    return p_i, r_i


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    next_mask: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity ring of transitions held in preallocated arrays."""

    def __init__(self, capacity: int, state_dim: int, num_actions: int, rng: np.random.Generator):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.rng = rng
        self.s = np.zeros((capacity, state_dim), dtype=np.float32)
        self.s_next = np.zeros((capacity, state_dim), dtype=np.float32)
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity, dtype=np.float32)
        self.next_mask = np.zeros((capacity, num_actions), dtype=bool)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.head = 0
        self.added = 0

    def __len__(self):
        return self.size

    def add(self, t: Transition) -> None:
        i = self.head
        self.s[i], self.a[i], self.r[i] = t.s, t.a, t.r
        self.s_next[i], self.next_mask[i], self.terminal[i] = t.s_next, t.next_mask, t.terminal
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.added += 1

    def sample_indices(self, batch_size: int) -> np.ndarray:
        if batch_size > self.size:
            raise ValueError(f"cannot sample {batch_size} from {self.size} transitions")
        return self.rng.choice(self.size, size=batch_size, replace=False)

    def get(self, idx) -> Transition:
        return Transition(self.s[idx], int(self.a[idx]), float(self.r[idx]), self.s_next[idx],
                          self.next_mask[idx], bool(self.terminal[idx]))


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 200
    horizon: int = 32  # slots per episode
    epsilon_start: float = 1.0
    epsilon_decay: float = 0.996  # per episode
    epsilon_min: float = 0.05
    learning_rate: float = 1e-6
    batch_size: int = 1024
    gamma: float = 0.95
    target_sync_period: int = 500  # training steps
    buffer_capacity: int = 16400
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_every: int = 10  # episodes; 0 disables
    eval_slots: int = 64
    eval_seed: int = 10_000
    checkpoint_every: int = 0  # episodes; 0 disables

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.batch_size < 1 or self.batch_size > self.buffer_capacity:
            raise ValueError("need 1 <= batch_size <= buffer_capacity")
        if not 0.0 <= self.epsilon_min <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_min <= epsilon_start <= 1")


def epsilon_at(episode: int, cfg: TrainConfig) -> float:
    return max(cfg.epsilon_min, cfg.epsilon_start * cfg.epsilon_decay**episode)


def derive_seed(seed: int, stream: int, index: int = 0) -> int:
    return int(np.random.SeedSequence([seed, stream, index]).generate_state(1)[0])


class SchedulingEnv:
    """Gym-style view of a cell where each action is one allocation step."""

    def __init__(self, cell_cfg: CellConfig, horizon: int, half_width: int = DEFAULT_HALF_WIDTH,
                 payload_scale: float = DEFAULT_PAYLOAD_SCALE):
        self.cell_cfg = cell_cfg
        self.horizon = horizon
        self.half_width = half_width
        self.payload_scale = payload_scale
        self.num_actions = actions_per_ue(half_width) * cell_cfg.num_ues
        self.state_dim = cell_cfg.num_ues * (cell_cfg.num_rbs + 1)

    def reset(self, link_seed: int | None = None):
        cfg = self.cell_cfg
        if link_seed is not None:
            cfg = replace(cfg, link=replace(cfg.link, seed=link_seed))
        self.cell = Cell(cfg)
        self.slots_done = 0
        self.results: list[SlotResult] = []
        self.done = False
        self._begin_slot()
        return self.observe()

    def _begin_slot(self):
        # slots with nothing to schedule still use up the horizon
        while self.slots_done < self.horizon:
            self.state = self.cell.begin_slot()
            self.wb = wideband_rates(self.state.grid)
            self.slot_payload = int(self.state.payloads.sum())
            self.step_tbs: list[int] = []
            self.allocations = []
            if self.state.active and self.slot_payload > 0:
                return
            self.results.append(SlotResult(self.state.slot, self.state.num_rbs, [], self.state.counters))
            self.slots_done += 1
        self.done = True

    def observe(self) -> tuple[np.ndarray, np.ndarray]:
        return encode_state(self.state, self.payload_scale), valid_action_mask(self.state, self.half_width)

    def step(self, a: int):
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        state: SlotState = self.state
        dec = decode_action(a, state, self.wb, self.half_width)
        alloc = self.cell.rescore(make_allocation(state, dec.ue, state.lo, dec.n_rbs))
        state.apply(alloc)
        self.cell.commit(alloc)
        self.allocations.append(alloc)
        self.step_tbs.append(alloc.delivered_tbs)
        _, reward = step_reward(self.step_tbs, [self.slot_payload])
        info = {"allocation": alloc, "clamped": dec.clamped, "slot_end": False}
        if not state.active:
            self.results.append(SlotResult(state.slot, state.num_rbs, self.allocations, state.counters))
            self.slots_done += 1
            info["slot_end"] = True
            if self.slots_done < self.horizon:
                self._begin_slot()
            else:
                self.done = True
        obs, mask = self.observe()
        if self.done:
            mask = np.zeros_like(mask)
        return obs, mask, reward, self.done, info


def select_action(net: QNetwork, obs, mask, epsilon: float, rng: np.random.Generator) -> int:
    if rng.random() < epsilon:
        return int(rng.choice(np.flatnonzero(mask)))
    return masked_argmax(net(obs), mask)


def td_targets(target_net: QNetwork, rewards, next_states, next_masks, terminals, gamma: float) -> np.ndarray:
    q_next = np.where(next_masks, target_net(next_states), -np.inf)
    best = q_next.max(axis=1)
    best = np.where(np.isfinite(best) & ~terminals, best, 0.0)
    return (rewards + gamma * best).astype(np.float32)


class DQNTrainer:
    def __init__(self, cell_cfg: CellConfig, cfg: TrainConfig, half_width: int = DEFAULT_HALF_WIDTH,
                 payload_scale: float = DEFAULT_PAYLOAD_SCALE):
        self.cfg = cfg
        self.cell_cfg = cell_cfg
        self.env = SchedulingEnv(cell_cfg, cfg.horizon, half_width, payload_scale)
        init_rng = np.random.default_rng(derive_seed(cfg.seed, _STREAM_INIT))
        self.net = QNetwork.for_problem(cell_cfg.num_ues, cell_cfg.num_rbs, init_rng, actions_per_ue(half_width))
        self.target = self.net.copy()
        self.opt = Adam(self.net.params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        self.explore_rng = np.random.default_rng(derive_seed(cfg.seed, _STREAM_EXPLORE))
        self.buffer = ReplayBuffer(
            cfg.buffer_capacity, self.env.state_dim, self.env.num_actions,
            np.random.default_rng(derive_seed(cfg.seed, _STREAM_REPLAY)),
        )
        self.train_steps = 0

    def update(self) -> float:
        idx = self.buffer.sample_indices(self.cfg.batch_size)
        b = self.buffer
        y = td_targets(self.target, b.r[idx], b.s_next[idx], b.next_mask[idx], b.terminal[idx], self.cfg.gamma)
        loss, grads = td_loss_and_grads(self.net, b.s[idx], b.a[idx], y)
        if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads):
            raise TrainingDiverged(f"non-finite loss/gradient at training step {self.train_steps}")
        self.opt.step(grads)
        self.train_steps += 1
        if self.train_steps % self.cfg.target_sync_period == 0:
            self.target.load_from(self.net)
        return loss

    def run_episode(self, episode: int) -> dict:
        eps = epsilon_at(episode, self.cfg)
        obs, mask = self.env.reset(derive_seed(self.cfg.seed, _STREAM_EPISODE, episode))
        losses, total_reward = [], 0.0
        while not self.env.done:
            a = select_action(self.net, obs, mask, eps, self.explore_rng)
            nxt, nmask, r, terminal, _ = self.env.step(a)
            self.buffer.add(Transition(obs, a, r, nxt, nmask, terminal))
            total_reward += r
            obs, mask = nxt, nmask
            if len(self.buffer) >= self.cfg.batch_size:
                losses.append(self.update())
        slots = max(len(self.env.results), 1)
        return {
            "episode": episode,
            "epsilon": eps,
            "mean_loss": float(np.mean(losses)) if losses else float("nan"),
            "mean_return": total_reward / slots,
            "mean_sum_tbs": float(np.mean([r.sum_tbs for r in self.env.results])) if self.env.results else 0.0,
        }

    def evaluate(self, slots: int | None = None, seed: int | None = None) -> float:
        cfg = replace(self.cell_cfg, link=replace(self.cell_cfg.link, seed=self.cfg.eval_seed if seed is None else seed))
        sched = StarScheduler(self.net, self.env.half_width, self.env.payload_scale)
        results = Cell(cfg).run(sched, slots or self.cfg.eval_slots)
        return float(np.mean([r.sum_tbs for r in results]))


LOG_FIELDS = ["episode", "epsilon", "mean_loss", "mean_return", "mean_sum_tbs", "sum_tbs_eval"]


def config_hash(*parts) -> str:
    def plain(x):
        if hasattr(x, "__dataclass_fields__"):
            return asdict(x)
        return x
    blob = json.dumps([plain(p) for p in parts], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def train(cell_cfg: CellConfig, cfg: TrainConfig, out_dir=None, half_width: int = DEFAULT_HALF_WIDTH,
          payload_scale: float = DEFAULT_PAYLOAD_SCALE) -> tuple[QNetwork, list[dict]]:
    """Train a Q-network; optionally write the CSV log and weight files to ``out_dir``.

    ``out_dir`` receives train_log.csv, model.qnet (final weights), best.qnet
    (best periodic greedy evaluation, when evaluation is enabled) and
    checkpoints if configured.
    """
    trainer = DQNTrainer(cell_cfg, cfg, half_width, payload_scale)
    header = {
        "num_ues": cell_cfg.num_ues,
        "num_rbs": cell_cfg.num_rbs,
        "half_width": half_width,
        "payload_scale": payload_scale,
        "config_hash": config_hash(cell_cfg, cfg),
    }
    out = Path(out_dir) if out_dir is not None else None
    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "train_log.csv", "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        writer.writeheader()
    rows = []
    best_eval = -math.inf
    try:
        for ep in range(cfg.episodes):
            row = trainer.run_episode(ep)
            last = ep == cfg.episodes - 1
            if cfg.eval_every and ((ep + 1) % cfg.eval_every == 0 or last):
                row["sum_tbs_eval"] = trainer.evaluate()
                # keep the best greedy policy on the held-out eval seed
                if out is not None and row["sum_tbs_eval"] > best_eval:
                    best_eval = row["sum_tbs_eval"]
                    trainer.net.save(out / "best.qnet", episode=ep + 1, sum_tbs_eval=best_eval, **header)
            else:
                row["sum_tbs_eval"] = float("nan")
            rows.append(row)
            log.info("episode %d eps=%.3f loss=%.4g return=%.3f tbs=%.0f eval=%.0f", ep, row["epsilon"],
                     row["mean_loss"], row["mean_return"], row["mean_sum_tbs"], row["sum_tbs_eval"])
            if writer is not None:
                writer.writerow({k: _fmt(row[k]) for k in LOG_FIELDS})
                fh.flush()
                if cfg.checkpoint_every and (ep + 1) % cfg.checkpoint_every == 0:
                    trainer.net.save(out / f"checkpoint_{ep + 1:05d}.qnet", episode=ep + 1, **header)
        if out is not None:
            trainer.net.save(out / "model.qnet", episode=cfg.episodes, **header)
    finally:
        if fh is not None:
            fh.close()
    return trainer.net, rows


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v
