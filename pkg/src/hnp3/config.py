"""Experiment configuration: one JSON document with four blocks."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields

from .core import Hyperparams
from .inference import InferenceConfig
from .simulator import SimulationConfig


@dataclass
class EvalConfig:
    train_frac: float = 0.8
    horizon: int = 100
    checkpoint_every: int = 1000
    grid_points: int = 200
    jitter: float = 1e-9

    def __post_init__(self):
        if not 0 < self.train_frac < 1:
            raise ValueError("train_frac must be in (0, 1)")
        if self.horizon < 1 or self.checkpoint_every < 1 or self.grid_points < 1:
            raise ValueError("horizon, checkpoint_every and grid_points must be >= 1")


@dataclass
class ExperimentConfig:
    hyper: Hyperparams
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"hyper", "simulation", "inference", "eval"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config blocks: {sorted(unknown)}")
        sim = _build(SimulationConfig, d.get("simulation", {}))
        hyper_d = dict(d.get("hyper", {}))
        hyper_d.setdefault("n_users", sim.n_users)
        hyper_d.setdefault("vocab_size", sim.vocab_size)
        return cls(
            hyper=_build(Hyperparams, hyper_d),
            simulation=sim,
            inference=_build(InferenceConfig, d.get("inference", {})),
            eval=_build(EvalConfig, d.get("eval", {})),
        )

    @classmethod
    def load(cls, path: str | os.PathLike | None) -> "ExperimentConfig":
        if path is None:
            return cls.from_dict({})
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


def _build(kind, d: dict):
    names = {f.name for f in fields(kind)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {kind.__name__} fields: {sorted(unknown)}")
    return kind(**d)
