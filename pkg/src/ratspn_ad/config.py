"""Run configuration: INI-style ``[section]`` / ``key = value`` files.

Every stage draws its seed from the global seed through a fixed counter:
``stage_seed(global, name) = SeedSequence([global, STAGE_COUNTERS[name]])``.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import os
from dataclasses import dataclass, field, fields

import numpy as np

OUTPUT_ENV = "RATSPN_AD_OUTPUT"

STAGE_COUNTERS = {
    "synth-data": 1,
    "extract-patches": 2,
    "split": 3,
    "train-ae": 4,
    "encode": 5,
    "train-spn": 6,
    "em": 7,
    "score": 8,
}


def stage_seed(global_seed: int, stage: str) -> int:
    ss = np.random.SeedSequence([global_seed, STAGE_COUNTERS[stage]])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class PathsSection:
    data_root: str = "data"
    output_root: str = field(default_factory=lambda: os.environ.get(OUTPUT_ENV, "runs"))


@dataclass
class SeedsSection:
    seed: int = 0


@dataclass
class AESection:
    variant: str = "CAE"
    epochs: int = 100
    lr: float = 1e-5
    batch: int = 64
    latent_dim: int = 64
    channels: str = "32,64,128"
    beta: float = 0.1
    commitment: float = 0.25
    codebook_size: int = 256
    embedding_dim: int = 64


@dataclass
class SPNSection:
    depth: int = 1
    replicas: int = 50
    roots: int = 1
    sums: int = 0  # sum nodes per inner region; 0 means the same as inputs
    inputs: int = 45
    em_epochs: int = 50
    em_batch: int = 64
    em_step: float = 1e-4
    em_mode: str = "stochastic"


@dataclass
class PipelineSection:
    patches_per_image: int = 120
    train_frac: float = 0.9
    stride: int = 16
    percentile: float = 99.0
    image_size: int = 128
    n_healthy: int = 200
    n_mass: int = 40
    n_calc: int = 20
    hist_bins: int = 50


SECTIONS = {
    "paths": PathsSection,
    "seeds": SeedsSection,
    "ae": AESection,
    "spn": SPNSection,
    "pipeline": PipelineSection,
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    paths: PathsSection = field(default_factory=PathsSection)
    seeds: SeedsSection = field(default_factory=SeedsSection)
    ae: AESection = field(default_factory=AESection)
    spn: SPNSection = field(default_factory=SPNSection)
    pipeline: PipelineSection = field(default_factory=PipelineSection)

    def set(self, section: str, key: str, raw) -> None:
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        sec = getattr(self, section)
        types = {f.name: f.type for f in fields(sec)}
        if key not in types:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        kind = types[key]
        try:
            value = {"int": int, "float": float}.get(kind, str)(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind}") from exc
        setattr(sec, key, value)

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for name in SECTIONS:
            sec = getattr(self, name)
            cp[name] = {f.name: repr(v) if isinstance(v := getattr(sec, f.name), float) else str(v) for f in fields(sec)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def seed_for(self, stage: str) -> int:
        return stage_seed(self.seeds.seed, stage)

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.ae.channels.split(","))


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``{(section, key): value}`` overrides."""
    cfg = RunConfig()
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as f:
                cp.read_file(f)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section in cp.sections():
            for key, raw in cp[section].items():
                cfg.set(section, key, raw)
    for (section, key), value in (overrides or {}).items():
        if value is not None:
            cfg.set(section, key, value)
    return cfg
