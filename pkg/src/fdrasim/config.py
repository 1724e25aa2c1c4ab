"""Experiment configuration, loaded from YAML."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .dqn import TrainConfig
from .env import CellConfig
from .link_model import LinkModelConfig
from .star import DEFAULT_HALF_WIDTH, DEFAULT_PAYLOAD_SCALE
from .traffic import TrafficModel, get_model

SCHEDULER_KINDS = ("jade", "star", "random", "oracle")


@dataclass(frozen=True)
class SchedulerSpec:
    kind: str
    model: str | None = None

    def __post_init__(self):
        if self.kind not in SCHEDULER_KINDS:
            raise ValueError(f"unknown scheduler {self.kind!r}; expected one of {SCHEDULER_KINDS}")
        if self.kind == "star" and not self.model:
            raise ValueError("star scheduler needs a model path")

    @property
    def label(self) -> str:
        return self.kind

    @classmethod
    def parse(cls, raw) -> "SchedulerSpec":
        if isinstance(raw, str):
            return cls(raw)
        if isinstance(raw, dict) and len(raw) == 1:
            (kind, arg), = raw.items()
            if isinstance(arg, dict):
                return cls(kind, arg.get("model"))
            return cls(kind, arg)
        raise ValueError(f"cannot parse scheduler entry {raw!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    num_ues: int = 5
    num_rbs: int = 50
    traffic_mix: tuple[tuple[str, int], ...] = (("pd2", 1), ("rdd", 4))
    traffic_overrides: dict = field(default_factory=dict)
    slots: int = 200
    seeds: tuple[int, ...] = (1, 2, 3)
    schedulers: tuple[SchedulerSpec, ...] = (SchedulerSpec("jade"), SchedulerSpec("random"))
    link: dict = field(default_factory=dict)
    csi_delay: bool = True
    partial_credit: bool = False
    random_phase: bool = True
    half_width: int = DEFAULT_HALF_WIDTH
    payload_scale: float = DEFAULT_PAYLOAD_SCALE
    oracle_max_ues: int = 3
    oracle_max_rbs: int = 8
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        total = sum(n for _, n in self.traffic_mix)
        if total != self.num_ues:
            raise ValueError(f"traffic mix covers {total} UEs but num_ues is {self.num_ues}")
        if any(n < 0 for _, n in self.traffic_mix):
            raise ValueError("traffic mix counts must be non-negative")
        if self.slots < 1 or not self.seeds:
            raise ValueError("need slots >= 1 and at least one seed")
        unknown = set(self.link) - {f.name for f in fields(LinkModelConfig)}
        if unknown or {"num_ues", "num_rbs", "seed"} & set(self.link):
            raise ValueError(f"bad link options: {sorted(unknown | ({'num_ues', 'num_rbs', 'seed'} & set(self.link)))}")
        for entry in self.schedulers:
            if entry.kind == "oracle" and (self.num_ues > self.oracle_max_ues or self.num_rbs > self.oracle_max_rbs):
                raise ValueError(
                    f"oracle scheduler needs K <= {self.oracle_max_ues} and B <= {self.oracle_max_rbs}"
                )

    def with_mix(self, mix) -> "ExperimentConfig":
        return replace(self, traffic_mix=tuple(mix))

    def ue_models(self) -> list[TrafficModel]:
        """Traffic model of every UE, in mix order (UE 0 first)."""
        out = []
        for name, count in self.traffic_mix:
            model = get_model(name, **self.traffic_overrides.get(name, {}))
            out += [model] * count
        return out

    def ue_classes(self) -> list[str]:
        return [m.name for m in self.ue_models()]

    def classes(self) -> list[str]:
        return [name for name, count in self.traffic_mix if count > 0]

    def cell_config(self, seed: int) -> CellConfig:
        """Cell for one seed; link realization and traffic phase use separate streams."""
        phase_rng = np.random.default_rng(named_seed(seed, "traffic"))
        models = []
        for m in self.ue_models():
            offset = int(phase_rng.integers(m.arrival_period)) if self.random_phase else m.arrival_offset
            models.append(replace(m, arrival_offset=offset) if offset != m.arrival_offset else m)
        link = LinkModelConfig(num_ues=self.num_ues, num_rbs=self.num_rbs, seed=named_seed(seed, "link"), **self.link)
        return CellConfig(link, tuple(models), self.csi_delay, self.partial_credit)

    def training_cell(self) -> CellConfig:
        return self.cell_config(self.train.seed)


def named_seed(seed: int, name: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


def parse_mix(raw) -> tuple[tuple[str, int], ...]:
    if isinstance(raw, dict):
        return tuple((str(k).lower(), int(v)) for k, v in raw.items())
    if isinstance(raw, str):
        # "pd2:rdd = 1:4"
        names, _, counts = raw.partition("=")
        names = [n.strip().lower() for n in names.split(":")]
        counts = [int(c) for c in counts.split(":")]
        if len(names) != len(counts):
            raise ValueError(f"cannot parse traffic mix {raw!r}")
        return tuple(zip(names, counts))
    return tuple((str(k).lower(), int(v)) for k, v in raw)


def from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw or {})
    kw = {}
    for key in ("num_ues", "num_rbs", "slots", "half_width", "oracle_max_ues", "oracle_max_rbs"):
        if key in raw:
            kw[key] = int(raw.pop(key))
    for key in ("csi_delay", "partial_credit", "random_phase"):
        if key in raw:
            kw[key] = bool(raw.pop(key))
    if "payload_scale" in raw:
        kw["payload_scale"] = float(raw.pop("payload_scale"))
    if "traffic_mix" in raw:
        kw["traffic_mix"] = parse_mix(raw.pop("traffic_mix"))
    if "seeds" in raw:
        kw["seeds"] = tuple(int(s) for s in raw.pop("seeds"))
    if "schedulers" in raw:
        kw["schedulers"] = tuple(SchedulerSpec.parse(s) for s in raw.pop("schedulers"))
    if "link" in raw:
        kw["link"] = dict(raw.pop("link") or {})
    if "traffic" in raw:
        kw["traffic_overrides"] = {str(k).lower(): dict(v or {}) for k, v in (raw.pop("traffic") or {}).items()}
    if "train" in raw:
        kw["train"] = TrainConfig(**(raw.pop("train") or {}))
    if raw:
        raise ValueError(f"unknown config keys: {sorted(raw)}")
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    cfg = from_dict(raw)
    # relative model paths are resolved against the config file
    specs = tuple(
        replace(s, model=str((path.parent / s.model).resolve())) if s.model and not Path(s.model).is_absolute() else s
        for s in cfg.schedulers
    )
    return replace(cfg, schedulers=specs)
