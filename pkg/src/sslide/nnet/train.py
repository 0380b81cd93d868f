"""Mini-batch training and argmax inference."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .model import ModelConfig, Params, forward, init_params, loss_and_grads
from .optim import Adam

log = logging.getLogger(__name__)

SELECTIONS = ("val_loss", "val_error")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-5
    batch_size: int = 32
    weight_decay: float = 1e-5
    epochs: int = 50
    seed: int = 0
    ablate: bool = False
    # "val_loss" keeps the epoch with the lowest validation localization loss,
    # "val_error" the one whose argmax lands closest to the target peaks
    selection: str = "val_loss"

    def __post_init__(self):
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}")


@dataclass
class TrainResult:
    params: Params
    initial_loss: float
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    val_errors: list = field(default_factory=list)
    best_epoch: int = -1
    seconds: float = 0.0


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def mean_loss(params, config: ModelConfig, inputs, labels, heatmaps, idx, batch_size=64, ablate=False) -> float:
    total = 0.0
    for sl in _batches(len(idx), batch_size):
        rows = idx[sl]
        loss, _, _ = loss_and_grads(params, config, inputs[rows], labels[rows], heatmaps[rows], ablate)
        total += loss * len(rows)
    return total / len(idx)


def validation_error(params, config: ModelConfig, inputs, heatmaps, idx, grid=None, batch_size=64) -> float:
    """Mean distance between output and target peaks; meters with ``grid``, else cells."""
    shape = (config.height, config.width)
    total = 0.0
    for sl in _batches(len(idx), batch_size):
        rows = idx[sl]
        out = forward(params, config, inputs[rows], heads=("loc",))["loc"].reshape(len(rows), -1)
        py, px = np.unravel_index(out.argmax(axis=1), shape)
        ty, tx = np.unravel_index(np.asarray(heatmaps[rows]).reshape(len(rows), -1).argmax(axis=1), shape)
        if grid is not None:
            py, ty = grid.ys[py], grid.ys[ty]
            px, tx = grid.xs[px], grid.xs[tx]
        total += float(np.sum(np.hypot(py - ty, px - tx)))
    return total / len(idx)


def validation_loss(params, config: ModelConfig, inputs, heatmaps, idx, batch_size=64) -> float:
    """Mean localization loss, evaluating only the encoder and localization decoder."""
    lam = config.l1_weight
    total = 0.0
    for sl in _batches(len(idx), batch_size):
        rows = idx[sl]
        out = forward(params, config, inputs[rows], heads=("loc",))["loc"].astype(np.float64)
        r = (out - heatmaps[rows]).reshape(len(rows), -1)
        total += float(np.sum(np.linalg.norm(r, axis=1) + lam * np.abs(out).reshape(len(rows), -1).sum(axis=1)))
    return total / len(idx)


def train(inputs, labels, heatmaps, train_idx, val_idx, config: ModelConfig, tc: TrainConfig,
          params: Params | None = None, callback=None, grid=None) -> TrainResult:
    """Adam training returning the parameters of the best validation epoch.

    ``tc.selection`` picks the criterion; ``grid`` puts the validation error
    in meters rather than cells.

    ``inputs``/``labels``/``heatmaps`` are indexable by record; the splits
    are arrays of record indices.
    """
    train_idx = np.asarray(train_idx)
    val_idx = np.asarray(val_idx)
    if train_idx.size == 0 or val_idx.size == 0:
        raise ValueError("training and validation splits must be non-empty")
    params = init_params(config) if params is None else {k: v.copy() for k, v in params.items()}
    opt = Adam(params, lr=tc.lr, weight_decay=tc.weight_decay)
    frozen = {k for k in params if k.startswith("mp")} if tc.ablate else set()
    rng = np.random.default_rng([tc.seed, 7919])
    t0 = time.perf_counter()
    result = TrainResult(params=params, initial_loss=mean_loss(params, config, inputs, labels, heatmaps,
                                                             np.sort(train_idx), ablate=tc.ablate))
    best = np.inf
    best_params = {k: v.copy() for k, v in params.items()}
    for epoch in range(tc.epochs):
        order = rng.permutation(train_idx)
        seen, running = 0, 0.0
        for sl in _batches(order.size, tc.batch_size):
            rows = np.sort(order[sl])
            loss, _, grads = loss_and_grads(params, config, inputs[rows], labels[rows], heatmaps[rows], tc.ablate)
            opt.step(params, grads, frozen)
            running += loss * rows.size
            seen += rows.size
        result.train_losses.append(running / seen)
        val = validation_loss(params, config, inputs, heatmaps, val_idx)
        err = validation_error(params, config, inputs, heatmaps, val_idx, grid)
        result.val_losses.append(val)
        result.val_errors.append(err)
        score = val if tc.selection == "val_loss" else err
        if score < best:
            best, result.best_epoch = score, epoch
            best_params = {k: v.copy() for k, v in params.items()}
        log.info("epoch %d train %.5f val %.5f val error %.4f", epoch, result.train_losses[-1], val, err)
        if callback is not None:
            callback(epoch, result)
    result.params = best_params
    result.seconds = time.perf_counter() - t0
    return result


def localization_maps(params, config: ModelConfig, inputs, batch_size=64) -> np.ndarray:
    """Localization decoder outputs for a batch of inputs (multipath decoder off)."""
    inputs = np.asarray(inputs) if not hasattr(inputs, "shape") else inputs
    outs = [forward(params, config, inputs[sl], heads=("loc",))["loc"] for sl in _batches(len(inputs), batch_size)]
    return np.concatenate(outs)


def argmax_coords(maps: np.ndarray, grid) -> np.ndarray:
    """(x, y) of each map's maximum; ties resolve to the lowest linear index."""
    flat = np.asarray(maps).reshape(len(maps), -1).argmax(axis=1)
    iy, ix = np.unravel_index(flat, grid.shape)
    return np.stack([grid.xs[ix], grid.ys[iy]], axis=1)


def predict_location(params, config: ModelConfig, x, grid) -> tuple[float, float]:
    out = forward(params, config, x, heads=("loc",))["loc"]
    return grid.coords(int(np.argmax(out)))
