"""Scheduler comparison runs and their CSV / plot-data outputs."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .config import ExperimentConfig, SchedulerSpec, named_seed
from .core import (
    Allocation,
    InvariantViolation,
    SlotResult,
    SlotState,
    check_allocations,
    make_allocation,
    rescore,
    run_slot,
)
from .env import Cell
from .jade import JadeScheduler
from .oracle import optimal_allocation
from .qnet import QNetwork
from .star import StarScheduler


def random_scheduler_step(state: SlotState, rng: np.random.Generator) -> Allocation:
    """Uniform UE among those remaining, uniform RB count in [1, window]."""
    ue = state.remaining_ues[int(rng.integers(len(state.remaining_ues)))]
    n = int(rng.integers(1, state.window_size + 1))
    return make_allocation(state, ue, state.lo, n)


class RandomScheduler:
    name = "random"

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def step(self, state: SlotState) -> Allocation | None:
        return random_scheduler_step(state, self.rng) if state.active else None


def oracle_slot(cell: Cell, max_ues: int, max_rbs: int) -> SlotResult:
    """One slot scheduled by exhaustive search (not bound to the window-end rule)."""
    state = cell.begin_slot()
    allocations, _ = optimal_allocation(state, max_ues, max_rbs)
    if cell.sched_grid is not cell.actual_grid:
        allocations = [rescore(a, cell.actual_grid) for a in allocations]
    state.counters.metric_calls += len(state.remaining_ues) * (state.num_rbs * (state.num_rbs + 1) // 2)
    state.counters.allocation_steps += len(allocations)
    for a in allocations:
        cell.commit(a)
    return SlotResult(state.slot, state.num_rbs, allocations, state.counters)


def load_star(entry: SchedulerSpec, cfg: ExperimentConfig) -> StarScheduler:
    path = Path(entry.model)
    if not path.exists():
        raise FileNotFoundError(f"STAR model not found: {path}")
    net, header = QNetwork.load(path)
    sched = StarScheduler(net, header.get("half_width", cfg.half_width), header.get("payload_scale", cfg.payload_scale))
    sched.check_dimensions(cfg.num_ues, cfg.num_rbs)
    return sched


@dataclass
class CellRun:
    """Results of one (scheduler, seed) cell."""

    scheduler: str
    seed: int
    results: list[SlotResult]
    ue_classes: list[str]
    dropped: dict[str, int] = field(default_factory=dict)
    generated: dict[str, int] = field(default_factory=dict)
    clamp_events: int = 0
    oracle_violations: int = 0


def run_cell(cfg: ExperimentConfig, entry: SchedulerSpec, seed: int, star: StarScheduler | None = None,
             shadow_oracle: bool = False) -> CellRun:
    cell = Cell(cfg.cell_config(seed))
    classes = cfg.ue_classes()
    results = []
    violations = 0
    if entry.kind == "star":
        star.clamp_events = 0
        star.actions.clear()
    sched = {
        "jade": lambda: JadeScheduler(),
        "random": lambda: RandomScheduler(np.random.default_rng(named_seed(seed, "random-scheduler"))),
        "star": lambda: star,
        "oracle": lambda: None,
    }[entry.kind]()
    for _ in range(cfg.slots):
        if entry.kind == "oracle":
            results.append(oracle_slot(cell, cfg.oracle_max_ues, cfg.oracle_max_rbs))
            continue
        if shadow_oracle:
            state = cell.begin_slot()
            _, best = optimal_allocation(state.copy(), cfg.oracle_max_ues, cfg.oracle_max_rbs)
            actual = None if cell.sched_grid is cell.actual_grid else cell.actual_grid
            res = run_slot(state, sched, actual)
            for a in res.allocations:
                cell.commit(a)
            violations += res.sum_tbs > best
        else:
            res = cell.run_slot(sched)
        check_allocations(res.allocations, res.num_rbs)
        results.append(res)
    run = CellRun(entry.label, seed, results, classes, oracle_violations=violations)
    for cls in set(classes):
        run.dropped[cls] = sum(q.dropped_packets for q, c in zip(cell.queues, classes) if c == cls)
        run.generated[cls] = sum(q.generated_packets for q, c in zip(cell.queues, classes) if c == cls)
    if entry.kind == "star":
        run.clamp_events = star.clamp_events
    return run


REPORT_FIELDS = [
    "scheduler", "traffic_class", "seeds", "slots",
    "mean_sum_tbs", "sum_tbs_ci95", "resource_utilization", "utilization_ci95",
    "packet_drop_rate", "metric_calls_per_slot", "allocation_steps_per_slot",
    "mean_rbs_per_allocation", "clamp_events",
]


def _ci95(values) -> float:
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return 0.0
    return float(stats.t.ppf(0.975, len(values) - 1) * values.std(ddof=1) / math.sqrt(len(values)))


@dataclass
class ComparisonReport:
    rows: list[dict]
    runs: list[CellRun]

    def row(self, scheduler: str, traffic_class: str = "all") -> dict:
        for r in self.rows:
            if r["scheduler"] == scheduler and r["traffic_class"] == traffic_class:
                return r
        raise KeyError((scheduler, traffic_class))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r[k]) for k in REPORT_FIELDS})
        return buf.getvalue()

    def allocations_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scheduler", "seed", "slot", "step", "kind", "ue", "rb_start", "rb_count", "mcs", "tbs",
                    "utilization", "metric_calls"])
        for run in self.runs:
            for res in run.results:
                for i, a in enumerate(res.allocations):
                    w.writerow([run.scheduler, run.seed, res.slot, i, "alloc", a.ue, a.rb_start, a.rb_count,
                                a.final_mcs, a.delivered_tbs, "", ""])
                w.writerow([run.scheduler, run.seed, res.slot, len(res.allocations), "slot", "", "", "", "",
                            res.sum_tbs, f"{res.resource_utilization:.6f}", res.counters.metric_calls])
        return buf.getvalue()

    def plot_data(self) -> dict:
        schedulers = list(dict.fromkeys(r["scheduler"] for r in self.rows))
        classes = list(dict.fromkeys(r["traffic_class"] for r in self.rows))
        data = {"schedulers": schedulers, "traffic_classes": classes, "sum_tbs": {}, "resource_utilization": {}}
        for r in self.rows:
            data["sum_tbs"].setdefault(r["scheduler"], {})[r["traffic_class"]] = round(r["mean_sum_tbs"], 6)
            data["resource_utilization"].setdefault(r["scheduler"], {})[r["traffic_class"]] = round(
                r["resource_utilization"], 6)
        return data

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"report": out / "report.csv", "allocations": out / "allocations.csv", "plot": out / "plot_data.json"}
        paths["report"].write_text(self.to_csv())
        paths["allocations"].write_text(self.allocations_csv())
        paths["plot"].write_text(json.dumps(self.plot_data(), indent=2, sort_keys=True) + "\n")
        return paths


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def summarize(cfg: ExperimentConfig, runs: list[CellRun]) -> list[dict]:
    rows = []
    for label in dict.fromkeys(r.scheduler for r in runs):
        mine = [r for r in runs if r.scheduler == label]
        for cls in ["all"] + cfg.classes():
            tbs, util = [], []
            for run in mine:
                ues = {k for k, c in enumerate(run.ue_classes) if cls in ("all", c)}
                tbs.append(np.mean([sum(a.delivered_tbs for a in res.allocations if a.ue in ues) for res in run.results]))
                util.append(np.mean([sum(a.rb_count for a in res.allocations if a.ue in ues) / res.num_rbs
                                     for res in run.results]))
            names = cfg.classes() if cls == "all" else [cls]
            dropped = sum(run.dropped.get(c, 0) for run in mine for c in names)
            generated = sum(run.generated.get(c, 0) for run in mine for c in names)
            all_res = [res for run in mine for res in run.results]
            n_alloc = sum(len(res.allocations) for res in all_res)
            row = {
                "scheduler": label,
                "traffic_class": cls,
                "seeds": len(mine),
                "slots": cfg.slots,
                "mean_sum_tbs": float(np.mean(tbs)),
                "sum_tbs_ci95": _ci95(tbs),
                "resource_utilization": float(np.mean(util)),
                "utilization_ci95": _ci95(util),
                "packet_drop_rate": dropped / generated if generated else 0.0,
                "metric_calls_per_slot": "",
                "allocation_steps_per_slot": "",
                "mean_rbs_per_allocation": "",
                "clamp_events": "",
            }
            if cls == "all":
                row["metric_calls_per_slot"] = float(np.mean([res.counters.metric_calls for res in all_res]))
                row["allocation_steps_per_slot"] = float(np.mean([res.counters.allocation_steps for res in all_res]))
                row["mean_rbs_per_allocation"] = (
                    sum(a.rb_count for res in all_res for a in res.allocations) / n_alloc if n_alloc else 0.0
                )
                row["clamp_events"] = sum(run.clamp_events for run in mine)
            rows.append(row)
    return rows


def run_experiment(cfg: ExperimentConfig, star_overrides: dict | None = None) -> ComparisonReport:
    """Every configured scheduler on every seed.

    ``star_overrides`` maps a scheduler label to a ready StarScheduler, which
    skips loading the model file. When the oracle is configured, every other
    scheduler's slots are also checked against the per-slot optimum.
    """
    star_overrides = star_overrides or {}
    use_oracle = any(s.kind == "oracle" for s in cfg.schedulers)
    runs = []
    for entry in cfg.schedulers:
        star = None
        if entry.kind == "star":
            star = star_overrides.get(entry.label) or load_star(entry, cfg)
            star.check_dimensions(cfg.num_ues, cfg.num_rbs)
        for seed in cfg.seeds:
            runs.append(run_cell(cfg, entry, seed, star, shadow_oracle=use_oracle and entry.kind != "oracle"))
    bad = sum(r.oracle_violations for r in runs)
    if bad:
        raise InvariantViolation(f"{bad} slots beat the exhaustive optimum")
    return ComparisonReport(summarize(cfg, runs), runs)
