"""Configuration dataclasses and config-file loading.

Defaults are desk-scale: a 60 m window at 2 m grid pitch keeps graphs small
enough for CPU training while a turning maneuver still spans dozens of nodes.
Full-scale values (120 m window, 1 m pitch) are noted next to each field.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any

from .errors import ParseError


@dataclass
class DAConfig:
    """Drivable-area grid layer parameters.

    Desk-scale pitch is 1.25 m: the farthest point of a grid cell is then
    0.88 m from a node, so the 1 m positive radius of the heatmap labels
    always captures at least one node. (Full scale: pitch 1.0, extent 120.)
    """

    pitch: float = 1.25       # grid spacing, meters
    extent: float = 60.0      # square window edge, meters
    r_occ: float = 1.5        # occupancy radius around each node, meters
    K: int = 4                # dilation levels, offsets 2^k cells, k in [0, K)


@dataclass
class LSConfig:
    """Lane-segment layer parameters."""

    seg_len: float = 2.0      # target segment arc length, meters
    L: int = 4                # dilation levels, exponents 2^l hops, l in [0, L)


@dataclass
class EdgeConfig:
    """Inter-layer edge radii, meters."""

    r_da_ls: float = 2.0      # grid node <-> lane segment
    r_agent_ls: float = 10.0  # agent anchor <-> lane segment
    r_da_agent: float = 6.0   # grid node -> agent anchor


@dataclass
class NetConfig:
    """Network dimensions and block counts."""

    d_da: int = 32
    d_ls: int = 128
    d_agt: int = 128
    K: int = 4                  # grid-layer dilation levels per block
    L: int = 4                  # lane-conv dilation levels
    num_da_blocks: int = 2
    num_laneconv_layers: int = 2
    M: int = 6                  # goal hypotheses / decoder headers
    K_sel: int = 64             # top-scoring candidates fed to the goal decoder
    d_dec: int = 64             # candidate embedding width in the goal decoder
    d_comp: int = 128           # completion MLP hidden width

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"NetConfig.{f.name} must be positive")


@dataclass
class TrainConfig:
    """Loss weights and optimization schedule."""

    w1: float = 0.8             # (goal terms) vs trajectory term
    w2: float = 0.8             # classification vs goal regression
    focal_alpha: float = 2.0
    focal_beta: float = 4.0
    positive_radius: float = 1.0   # meters; nodes closer than this are positives
    sigma_label: float = 2.0       # Gaussian soft-label width, meters
    lr_start: float = 1e-3
    lr_end: float = 1e-4
    lr_decay_start_epoch: int = 25  # constant lr before, linear decay after
    epochs: int = 30
    batch_size: int = 4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99    # short desk-scale runs want a short window
    seed: int = 0
    augment: bool = True        # random rotation + mirroring per training visit
    eval_every: int = 5         # holdout evaluation cadence, epochs

    def __post_init__(self):
        if not (0.0 < self.w1 < 1.0) and self.w1 != 1.0:
            if not (0.0 <= self.w1 <= 1.0):
                raise ValueError("TrainConfig.w1 must lie in [0, 1]")
        if not (0.0 <= self.w2 <= 1.0):
            raise ValueError("TrainConfig.w2 must lie in [0, 1]")
        if self.focal_alpha <= 0 or self.focal_beta <= 0:
            raise ValueError("focal parameters must be positive")


@dataclass
class DecoderConfig:
    """Goal decoder selection and baseline parameters."""

    kind: str = "nn"            # nn | nms | kmeans
    nms_radius: float = 2.8     # initial suppression radius, meters
    nms_decay: float = 0.8      # radius discount when the queue is exhausted
    kmeans_iters: int = 32
    kmeans_seed: int = 0
    kmeans_top_k: int = 64      # cluster only the top-scoring nodes (0 = all)


@dataclass
class Config:
    """Bundle of every stage's configuration."""

    da: DAConfig = field(default_factory=DAConfig)
    ls: LSConfig = field(default_factory=LSConfig)
    edges: EdgeConfig = field(default_factory=EdgeConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "da": DAConfig,
    "ls": LSConfig,
    "edges": EdgeConfig,
    "net": NetConfig,
    "train": TrainConfig,
    "decoder": DecoderConfig,
}


def config_from_dict(data: dict[str, Any]) -> Config:
    """Build a Config from nested dicts; unknown keys are rejected."""
    kwargs = {}
    for section, cls in _SECTIONS.items():
        payload = data.get(section, {})
        if not isinstance(payload, dict):
            raise ParseError(f"config section '{section}' must be an object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ParseError(
                f"unknown config key '{section}.{sorted(unknown)[0]}'"
            )
        kwargs[section] = cls(**payload)
    unknown_sections = set(data) - set(_SECTIONS)
    if unknown_sections:
        raise ParseError(f"unknown config section '{sorted(unknown_sections)[0]}'")
    return Config(**kwargs)


def load_config(path: str | None) -> Config:
    """Load a JSON config file; None gives pure defaults."""
    if path is None:
        return Config()
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"config file {path}: {exc}") from exc
    return config_from_dict(data)
