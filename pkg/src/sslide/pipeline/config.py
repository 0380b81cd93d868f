"""Experiment configuration and its key-value text format.

A config file holds one ``key = value`` pair per line.  Keys are the field
names of :class:`ExperimentConfig`; values are JSON literals (numbers,
``true``/``false``, ``null``, strings in double quotes, lists, objects).
Blank lines and lines starting with ``#`` are ignored, and missing keys keep
their defaults.  ``arrays`` is a list of objects with ``center``, ``K``,
``spacing`` and ``orientation``.  Example::

    # desk-scale run
    T = 100
    rt60s = [0.6]
    source_kind = "bandlimited-noise"
    enc_channels = [16, 32, 64, 64]
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from ..acoustics import MicArray
from ..beamform import CartesianGrid, PolarGrid
from ..nnet.model import ModelConfig
from ..nnet.train import TrainConfig


def paper_arrays(inset: float = 0.1) -> list[dict]:
    """The three-ULA layout: one array at the middle of the left, bottom and right walls."""
    return [
        {"center": [inset, 2.5, 2.0], "K": 4, "spacing": 0.026, "orientation": [0.0, -1.0, 0.0]},
        {"center": [4.0, inset, 2.0], "K": 4, "spacing": 0.026, "orientation": [1.0, 0.0, 0.0]},
        {"center": [8.0 - inset, 2.5, 2.0], "K": 4, "spacing": 0.026, "orientation": [0.0, 1.0, 0.0]},
    ]


# fields that change the generated data; everything else only affects training/eval
DATA_FIELDS = (
    "room_dims", "arrays", "rt60s", "snr_db", "fs", "c", "T", "source_kind", "source_duration",
    "source_band", "source_path", "n_fft", "polar_U", "polar_V", "d_max", "grid_Y", "grid_X",
    "peak_threshold", "sigma", "bin_weighted_range", "max_order", "wall_clearance",
    "array_clearance", "source_z", "seed",
)


@dataclass
class ExperimentConfig:
    room_dims: list = field(default_factory=lambda: [8.0, 5.0, 4.0])
    arrays: list = field(default_factory=paper_arrays)
    rt60s: list = field(default_factory=lambda: [0.6])
    snr_db: float = 35.0
    fs: float = 16000.0
    c: float = 340.0
    T: int = 100
    source_kind: str = "bandlimited-noise"
    source_duration: float = 1.0
    source_band: list = field(default_factory=lambda: [300.0, 6000.0])
    source_path: str | None = None
    n_fft: int = 256
    polar_U: int = 91
    polar_V: int = 64
    d_max: float | None = None
    grid_Y: int = 41
    grid_X: int = 65
    peak_threshold: float = 0.5
    sigma: float = 0.25
    bin_weighted_range: bool = False
    max_order: int | None = None
    wall_clearance: float = 0.3
    array_clearance: float = 0.5
    source_z: float = 2.0
    enc_channels: list = field(default_factory=lambda: [16, 32, 64, 64])
    l1_weight: float = 5e-4
    lr: float = 1e-5
    batch_size: int = 32
    weight_decay: float = 1e-5
    epochs: int = 50
    selection: str = "val_loss"
    split: list = field(default_factory=lambda: [0.7, 0.15, 0.15])
    seed: int = 0
    train_seed: int | None = None
    out_dir: str = "runs"

    def __post_init__(self):
        if not self.rt60s:
            raise ValueError("rt60s must list at least one reverberation time")
        if self.T < 1:
            raise ValueError("need at least one datapoint")
        if len(self.split) != 3 or abs(sum(self.split) - 1) > 1e-9:
            raise ValueError("split must be three fractions summing to 1")
        self.mic_arrays()

    # derived objects
    def mic_arrays(self) -> list[MicArray]:
        return [MicArray(center=tuple(a["center"]), K=int(a.get("K", 4)), spacing=float(a.get("spacing", 0.026)),
                         orientation=tuple(a.get("orientation", (0.0, 1.0, 0.0)))) for a in self.arrays]

    def polar_grid(self) -> PolarGrid:
        d_max = self.d_max if self.d_max is not None else float(np.linalg.norm(self.room_dims))
        return PolarGrid.uniform(self.polar_U, self.polar_V, d_max)

    def cartesian_grid(self) -> CartesianGrid:
        return CartesianGrid.for_room(self.room_dims, self.grid_Y, self.grid_X)

    def model_config(self) -> ModelConfig:
        return ModelConfig(input_channels=len(self.arrays), height=self.grid_Y, width=self.grid_X,
                           enc_channels=tuple(self.enc_channels), l1_weight=self.l1_weight,
                           seed=self.effective_train_seed)

    @property
    def effective_train_seed(self) -> int:
        return self.seed if self.train_seed is None else self.train_seed

    def train_config(self, ablate: bool = False) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, weight_decay=self.weight_decay,
                           epochs=self.epochs, seed=self.effective_train_seed, ablate=ablate,
                           selection=self.selection)

    @property
    def snapshots(self) -> int:
        return int(round(self.source_duration * self.fs)) // self.n_fft

    # digests and serialization
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def data_digest(self) -> str:
        d = self.to_dict()
        blob = json.dumps({k: d[k] for k in DATA_FIELDS}, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {json.dumps(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path):
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in names:
                raise ValueError(f"line {lineno}: unknown or malformed entry {raw!r}")
            try:
                values[key] = json.loads(value.strip())
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {lineno}: value for {key} is not a JSON literal") from exc
        return cls(**values)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.loads(Path(path).read_text())


def desk_preset(**changes) -> ExperimentConfig:
    """100 datapoints on the 41 x 65 grid at RT60 0.2 and 0.6 s."""
    base = dict(T=100, rt60s=[0.2, 0.6])
    base.update(changes)
    return ExperimentConfig(**base)


def full_preset(**changes) -> ExperimentConfig:
    """Mirror of the published simulation: 600 datapoints, 101 x 161 grid, RT60 0.2-0.8 s."""
    base = dict(T=600, rt60s=[0.2, 0.4, 0.6, 0.8], grid_Y=101, grid_X=161)
    base.update(changes)
    return ExperimentConfig(**base)


def split_counts(T: int, fractions=(0.7, 0.15, 0.15)) -> tuple[int, int, int]:
    """Datapoints per split; validation and test are floored, the remainder trains."""
    n_val = math.floor(fractions[1] * T + 1e-9)
    n_test = math.floor(fractions[2] * T + 1e-9)
    return T - n_val - n_test, n_val, n_test
