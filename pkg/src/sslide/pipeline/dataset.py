"""Dataset generation and the on-disk record format.

A dataset directory holds four files:

``records.bin``
    ``C`` fixed-size records, back to back, little-endian.  Each record is a
    28-byte header (uint32 record id, uint32 datapoint id, uint32 snapshot
    id, float64 truth x, float64 truth y) followed by three float32 blocks
    in row-major order: the uncompensated input stack (N, Y, X), the
    range-compensated multipath labels (N, Y, X) and the target heatmap
    (Y, X).
``signals.bin``
    For every datapoint, its (M, L) float32 microphone signals.  Baselines
    read these.
``manifest.txt``
    Everything needed to decode the two binary files; see :class:`Manifest`.
``config.txt``
    The generating :class:`ExperimentConfig`, for convenience only.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..acoustics import MicArray, RoomScenario, make_source_signal, scenario_rirs, synthesize_mic_signals
from ..beamform import CartesianGrid, SurfaceBuilder
from ..spectral import median_frequency, positive_freqs, stft
from ..targets import make_multipath_labels, make_target_heatmap
from .config import ExperimentConfig, split_counts

log = logging.getLogger(__name__)

MANIFEST_MAGIC = "sslide-dataset 1"
HEADER_BYTES = 28


def record_dtype(N: int, Y: int, X: int) -> np.dtype:
    return np.dtype([
        ("record_id", "<u4"), ("datapoint", "<u4"), ("snapshot", "<u4"),
        ("truth_x", "<f8"), ("truth_y", "<f8"),
        ("input", "<f4", (N, Y, X)), ("labels", "<f4", (N, Y, X)), ("heatmap", "<f4", (Y, X)),
    ])


@dataclass
class Manifest:
    """Text manifest.

    The header is ``key = value`` lines after the magic line; two tables
    follow.  ``[records]`` rows are ``record_id datapoint snapshot offset
    truth_x truth_y`` and ``[datapoints]`` rows are ``datapoint rt60 x y z
    signal_offset``.  Offsets are byte offsets into ``records.bin`` and
    ``signals.bin``.
    """

    config_digest: str
    N: int
    Y: int
    X: int
    M: int
    L: int
    S: int
    fs: float
    n_fft: int
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    arrays: list
    c: float = 340.0
    records_sha256: str = ""
    signals_sha256: str = ""
    records: list = field(default_factory=list)
    datapoints: list = field(default_factory=list)

    @property
    def record_count(self) -> int:
        return len(self.records)

    @property
    def T(self) -> int:
        return len(self.datapoints)

    @property
    def record_bytes(self) -> int:
        return record_dtype(self.N, self.Y, self.X).itemsize

    def grid(self) -> CartesianGrid:
        return CartesianGrid(np.linspace(*self.x_range, self.X), np.linspace(*self.y_range, self.Y))

    def mic_arrays(self) -> list[MicArray]:
        return [MicArray(center=tuple(a["center"]), K=a["K"], spacing=a["spacing"],
                         orientation=tuple(a["orientation"])) for a in self.arrays]

    def dumps(self) -> str:
        head = [
            MANIFEST_MAGIC,
            f"config_digest = {self.config_digest}",
            f"record_count = {self.record_count}",
            f"datapoints = {self.T}",
            f"snapshots = {self.S}",
            f"arrays = {self.N}",
            f"grid = {self.Y} {self.X}",
            f"x_range = {self.x_range[0]!r} {self.x_range[1]!r}",
            f"y_range = {self.y_range[0]!r} {self.y_range[1]!r}",
            f"mics = {self.M}",
            f"signal_length = {self.L}",
            f"fs = {self.fs!r}",
            f"c = {self.c!r}",
            f"n_fft = {self.n_fft}",
            f"record_bytes = {self.record_bytes}",
            f"record_header = u4:record_id u4:datapoint u4:snapshot f8:truth_x f8:truth_y",
            f"record_blocks = f4:input[N,Y,X] f4:labels[N,Y,X] f4:heatmap[Y,X]",
            f"array_geometry = {json.dumps(self.arrays, sort_keys=True)}",
            f"records_sha256 = {self.records_sha256}",
            f"signals_sha256 = {self.signals_sha256}",
            "[records]",
        ]
        head += [f"{r} {d} {s} {o} {x!r} {y!r}" for r, d, s, o, x, y in self.records]
        head.append("[datapoints]")
        head += [f"{d} {rt!r} {x!r} {y!r} {z!r} {o}" for d, rt, x, y, z, o in self.datapoints]
        return "\n".join(head) + "\n"

    def write(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "Manifest":
        lines = text.splitlines()
        if not lines or lines[0] != MANIFEST_MAGIC:
            raise ValueError("not a dataset manifest")
        head, records, datapoints = {}, [], []
        section = None
        for line in lines[1:]:
            if line in ("[records]", "[datapoints]"):
                section = line
                continue
            if section is None:
                k, _, v = line.partition(" = ")
                head[k] = v
            elif section == "[records]":
                r, d, s, o, x, y = line.split()
                records.append((int(r), int(d), int(s), int(o), float(x), float(y)))
            else:
                d, rt, x, y, z, o = line.split()
                datapoints.append((int(d), float(rt), float(x), float(y), float(z), int(o)))
        Y, X = (int(v) for v in head["grid"].split())
        m = cls(
            config_digest=head["config_digest"], N=int(head["arrays"]), Y=Y, X=X, M=int(head["mics"]),
            L=int(head["signal_length"]), S=int(head["snapshots"]), fs=float(head["fs"]),
            n_fft=int(head["n_fft"]), x_range=tuple(float(v) for v in head["x_range"].split()),
            y_range=tuple(float(v) for v in head["y_range"].split()), arrays=json.loads(head["array_geometry"]),
            c=float(head["c"]), records_sha256=head["records_sha256"], signals_sha256=head["signals_sha256"],
            records=records, datapoints=datapoints,
        )
        if int(head["record_count"]) != m.record_count or int(head["record_bytes"]) != m.record_bytes:
            raise ValueError("manifest header disagrees with its record table")
        offsets = [r[3] for r in records]
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise ValueError("record offsets must be strictly increasing")
        return m

    @classmethod
    def read(cls, path) -> "Manifest":
        return cls.loads(Path(path).read_text())


def sample_source_position(config: ExperimentConfig, rng: np.random.Generator) -> tuple[float, float, float]:
    """Uniform position in the array plane, clear of the walls and of every array."""
    lx, ly, _ = config.room_dims
    wc = config.wall_clearance
    centers = np.array([a["center"][:2] for a in config.arrays])
    for _ in range(10000):
        p = rng.uniform([wc, wc], [lx - wc, ly - wc])
        if np.all(np.linalg.norm(centers - p, axis=1) >= config.array_clearance):
            return float(p[0]), float(p[1]), float(config.source_z)
    raise ValueError("no source position satisfies the clearance constraints")


def datapoint_rng(seed: int, t: int) -> np.random.Generator:
    return np.random.default_rng([seed, t])


def make_builder(config: ExperimentConfig) -> SurfaceBuilder:
    return SurfaceBuilder(config.mic_arrays(), config.polar_grid(), config.cartesian_grid(),
                          positive_freqs(config.fs, config.n_fft), median_frequency(config.fs, config.n_fft),
                          config.c, config.bin_weighted_range)


def generate_datapoint(config: ExperimentConfig, t: int, builder: SurfaceBuilder | None = None) -> dict:
    """Simulate one datapoint and build every snapshot's training record."""
    builder = builder or make_builder(config)
    rng = datapoint_rng(config.seed, t)
    source = sample_source_position(config, rng)
    rt60 = float(config.rt60s[t % len(config.rt60s)])
    scenario = RoomScenario(tuple(config.room_dims), source, tuple(config.mic_arrays()), rt60=rt60,
                            c=config.c, fs=config.fs)
    sig_seed = int(rng.integers(2**63))
    noise_seed = int(rng.integers(2**63))
    s = make_source_signal(config.source_kind, config.source_duration, config.fs, seed=sig_seed,
                           band=tuple(config.source_band), path=config.source_path, period=config.n_fft)
    rirs = scenario_rirs(scenario, max_order=config.max_order)
    signals = synthesize_mic_signals(rirs, s, config.snr_db, L=s.size, rng=noise_seed)
    K = scenario.arrays[0].K
    spec = stft(signals, config.n_fft, K=K)
    if spec.S == 0:
        raise ValueError("signal too short for a single snapshot")
    grid = builder.cart
    heat = make_target_heatmap(source[:2], grid, config.sigma).values
    inputs, labels, d_hats = [], [], []
    for frame in spec.frames:
        inputs.append(builder.stack(frame))
        lab, d_hat, d_true = make_multipath_labels(frame, scenario, builder, config.peak_threshold, return_ranges=True)
        labels.append(lab)
        d_hats.append(d_hat)
    return {
        "t": t, "scenario": scenario, "rt60": rt60, "signals": signals.samples.astype("<f4"),
        "inputs": np.stack(inputs).astype("<f4"), "labels": np.stack(labels).astype("<f4"),
        "heatmap": heat.astype("<f4"), "d_hat": np.array(d_hats), "d_true": d_true,
    }


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def generate_dataset(config: ExperimentConfig, out_dir, workers: int = 1, progress=None) -> Manifest:
    """Simulate ``config.T`` datapoints and persist all ``T * S`` records."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    N, (Y, X) = len(config.arrays), (config.grid_Y, config.grid_X)
    dtype = record_dtype(N, Y, X)
    grid = config.cartesian_grid()
    manifest = Manifest(
        config_digest=config.data_digest(), N=N, Y=Y, X=X, M=sum(a.K for a in config.mic_arrays()),
        L=int(round(config.source_duration * config.fs)), S=config.snapshots, fs=float(config.fs),
        n_fft=config.n_fft, x_range=(float(grid.xs[0]), float(grid.xs[-1])),
        y_range=(float(grid.ys[0]), float(grid.ys[-1])),
        arrays=[{"center": list(a.center), "K": a.K, "spacing": a.spacing, "orientation": list(a.orientation)}
                for a in config.mic_arrays()],
        c=float(config.c),
    )

    def results():
        if workers > 1:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(workers) as pool:
                yield from pool.map(generate_datapoint, [config] * config.T, range(config.T))
        else:
            builder = make_builder(config)
            for t in range(config.T):
                yield generate_datapoint(config, t, builder)

    rec_id, rec_off, sig_off = 0, 0, 0
    with open(out / "records.bin", "wb") as rf, open(out / "signals.bin", "wb") as sf:
        for dp in results():
            t = dp["t"]
            x, y, z = dp["scenario"].source_pos
            S = dp["inputs"].shape[0]
            if S != manifest.S:
                raise ValueError(f"datapoint {t} produced {S} snapshots, expected {manifest.S}")
            block = np.zeros(S, dtype=dtype)
            block["record_id"] = np.arange(rec_id, rec_id + S)
            block["datapoint"] = t
            block["snapshot"] = np.arange(S)
            block["truth_x"], block["truth_y"] = x, y
            block["input"] = dp["inputs"]
            block["labels"] = dp["labels"]
            block["heatmap"] = dp["heatmap"][None]
            rf.write(block.tobytes())
            for s in range(S):
                manifest.records.append((rec_id + s, t, s, rec_off + s * dtype.itemsize, x, y))
            manifest.datapoints.append((t, dp["rt60"], x, y, z, sig_off))
            sf.write(dp["signals"].tobytes())
            rec_id += S
            rec_off += S * dtype.itemsize
            sig_off += dp["signals"].nbytes
            if progress is not None:
                progress(t)
            log.info("datapoint %d/%d done", t + 1, config.T)
    manifest.records_sha256 = _sha256(out / "records.bin")
    manifest.signals_sha256 = _sha256(out / "signals.bin")
    manifest.write(out / "manifest.txt")
    config.save(out / "config.txt")
    return manifest


class Dataset:
    """Read-only view of a generated dataset directory."""

    def __init__(self, path, verify: bool = False):
        self.path = Path(path)
        self.manifest = Manifest.read(self.path / "manifest.txt")
        m = self.manifest
        if verify:
            if _sha256(self.path / "records.bin") != m.records_sha256:
                raise ValueError("records.bin does not match its manifest digest")
            if _sha256(self.path / "signals.bin") != m.signals_sha256:
                raise ValueError("signals.bin does not match its manifest digest")
        self.records = np.memmap(self.path / "records.bin", dtype=record_dtype(m.N, m.Y, m.X), mode="r")
        if len(self.records) != m.record_count:
            raise ValueError("records.bin length disagrees with the manifest")
        self._signals = np.memmap(self.path / "signals.bin", dtype="<f4", mode="r")

    def __len__(self):
        return self.manifest.record_count

    @property
    def grid(self) -> CartesianGrid:
        return self.manifest.grid()

    @property
    def datapoint_ids(self) -> np.ndarray:
        return np.asarray(self.records["datapoint"], dtype=np.int64)

    @property
    def truths(self) -> np.ndarray:
        return np.stack([np.asarray(self.records["truth_x"]), np.asarray(self.records["truth_y"])], axis=1)

    def arrays(self, name: str) -> np.ndarray:
        """Contiguous in-memory copy of one record block: input, labels or heatmap."""
        return np.ascontiguousarray(self.records[name])

    def signals(self, t: int) -> np.ndarray:
        m = self.manifest
        offset = m.datapoints[t][5] // 4
        return np.asarray(self._signals[offset : offset + m.M * m.L]).reshape(m.M, m.L).astype(float)

    def datapoint_rt60(self, t: int) -> float:
        return self.manifest.datapoints[t][1]

    def datapoint_position(self, t: int) -> tuple[float, float, float]:
        return tuple(self.manifest.datapoints[t][2:5])

    def content_hash(self) -> str:
        return hashlib.sha256((self.manifest.records_sha256 + self.manifest.signals_sha256).encode()).hexdigest()[:16]


def split_datapoints(seed: int, T: int, fractions=(0.7, 0.15, 0.15)) -> dict[str, np.ndarray]:
    """Deterministic train/validation/test partition of datapoint ids."""
    n_train, n_val, n_test = split_counts(T, fractions)
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"T = {T} is too small for a non-empty 3-way split")
    perm = np.random.default_rng([seed, 104729]).permutation(T)
    return {"train": np.sort(perm[:n_train]), "val": np.sort(perm[n_train : n_train + n_val]),
            "test": np.sort(perm[n_train + n_val :])}


def split_records(datapoint_ids: np.ndarray, split: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.nonzero(np.isin(datapoint_ids, v))[0] for k, v in split.items()}
