"""Training and evaluation runs on a generated dataset."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from ..baselines import music_doa, srp_phat_doa
from ..evaluation import EvalReport, doa_from_coords, fold_bearing, localization_errors, report_digest
from ..nnet.checkpoint import load_checkpoint, save_checkpoint
from ..nnet.train import argmax_coords, localization_maps, train
from ..spectral import positive_freqs, stft
from .config import ExperimentConfig
from .dataset import Dataset, split_datapoints, split_records

log = logging.getLogger(__name__)

BASELINE_METHODS = ("music", "srp-phat")


def check_digest(config: ExperimentConfig, dataset: Dataset):
    if dataset.manifest.config_digest != config.data_digest():
        raise ValueError(
            f"dataset {dataset.path} was generated from config {dataset.manifest.config_digest}, "
            f"not {config.data_digest()}")


def run_training(config: ExperimentConfig, data_dir, out_dir=None, ablate: bool = False, callback=None) -> dict:
    """Train on the 70/15/15 datapoint split; writes ``model.ckpt`` and ``train_log.csv``."""
    ds = Dataset(data_dir)
    check_digest(config, ds)
    out = Path(out_dir or Path(config.out_dir) / ("ablated" if ablate else "full"))
    out.mkdir(parents=True, exist_ok=True)
    split = split_datapoints(config.seed, ds.manifest.T, config.split)
    rows = split_records(ds.datapoint_ids, split)
    inputs, labels, heat = ds.arrays("input"), ds.arrays("labels"), ds.arrays("heatmap")
    mc = config.model_config()
    result = train(inputs, labels, heat, rows["train"], rows["val"], mc, config.train_config(ablate),
                   callback=callback, grid=ds.grid)
    meta = {
        "config": config.dumps(), "data_digest": config.data_digest(), "dataset_hash": ds.content_hash(),
        "split_seed": config.seed, "split": list(config.split), "ablate": ablate,
        "best_epoch": result.best_epoch, "initial_loss": result.initial_loss, "train_seconds": result.seconds,
    }
    ckpt = out / "model.ckpt"
    save_checkpoint(ckpt, result.params, mc, meta)
    with open(out / "train_log.csv", "w") as fh:
        fh.write("epoch,train_loss,val_loss,val_error_m\n")
        fh.write(f"init,{result.initial_loss!r},,\n")
        for e, (tr, va, er) in enumerate(zip(result.train_losses, result.val_losses, result.val_errors)):
            fh.write(f"{e},{tr!r},{va!r},{er!r}\n")
    log.info("trained in %.1f s, best epoch %d", result.seconds, result.best_epoch)
    return {"checkpoint": ckpt, "result": result, "split": split}


def naive_coords(inputs: np.ndarray, grid) -> np.ndarray:
    """Argmax of the product of the per-array input surfaces."""
    fused = np.prod(np.asarray(inputs, dtype=np.float64), axis=1)
    return argmax_coords(fused, grid)


def truth_doas(dataset: Dataset, t: int) -> np.ndarray:
    x, y, _ = dataset.datapoint_position(t)
    return np.array([float(fold_bearing(a.to_local(np.array([x, y]))[0])) for a in dataset.manifest.mic_arrays()])


def baseline_doa_errors(dataset: Dataset, datapoints, method: str) -> dict[int, np.ndarray]:
    """Per-datapoint absolute DOA errors (degrees) of a classical estimator, one per array."""
    if method not in BASELINE_METHODS:
        raise ValueError(f"unknown baseline {method!r}; choose from {BASELINE_METHODS}")
    m = dataset.manifest
    arrays = m.mic_arrays()
    K = arrays[0].K
    freqs = positive_freqs(m.fs, m.n_fft)
    out = {}
    for t in datapoints:
        sig = dataset.signals(int(t))
        truth = truth_doas(dataset, int(t))
        if method == "music":
            cube = stft(sig, m.n_fft, K=K, fs=m.fs).tensor()
            est = [music_doa(cube[:, :, n, :], a, freqs, c=m.c).theta for n, a in enumerate(arrays)]
        else:
            est = [srp_phat_doa(sig[n * K : (n + 1) * K], a, m.fs, c=m.c, n_fft=m.n_fft).theta
                   for n, a in enumerate(arrays)]
        out[int(t)] = np.abs(np.array(est) - truth)
    return out


def _per_rt60(dataset: Dataset, per_dp: dict[int, np.ndarray]) -> dict[str, float]:
    groups: dict[str, list] = {}
    for t, errs in per_dp.items():
        groups.setdefault(repr(dataset.datapoint_rt60(t)), []).append(np.mean(errs))
    return {k: float(np.mean(v)) for k, v in sorted(groups.items())}


def run_eval(checkpoint, data_dir, out_dir=None, baselines: bool = False) -> EvalReport:
    """Evaluate a checkpoint on its test split; writes ``report.txt`` and ``cdf.csv``."""
    params, mc, meta = load_checkpoint(checkpoint)
    ds = Dataset(data_dir)
    if meta.get("data_digest") != ds.manifest.config_digest:
        raise ValueError("checkpoint was trained on a different dataset configuration")
    split = split_datapoints(int(meta["split_seed"]), ds.manifest.T, meta["split"])
    rows = split_records(ds.datapoint_ids, split)["test"]
    if rows.size == 0:
        raise ValueError("dataset has no test split")
    grid = ds.grid
    inputs = np.ascontiguousarray(ds.records["input"][rows])
    truths = ds.truths[rows]
    maps = localization_maps(params, mc, inputs)
    pred = argmax_coords(maps, grid)
    errors = localization_errors(pred, truths)
    naive = localization_errors(naive_coords(inputs, grid), truths)

    arrays = ds.manifest.mic_arrays()
    dps = ds.datapoint_ids[rows]
    per_array = np.empty((rows.size, len(arrays)))
    for r in range(rows.size):
        truth = truth_doas(ds, int(dps[r]))
        for n, a in enumerate(arrays):
            try:
                per_array[r, n] = abs(doa_from_coords(pred[r], a) - truth[n])
            except ValueError:
                per_array[r, n] = 90.0
    sslide_dp = {int(t): per_array[dps == t].mean(axis=0) for t in np.unique(dps)}
    extras = {
        "naive_mae_m": float(naive.mean()),
        "doa_mae_per_array_deg": [float(v) for v in per_array.mean(axis=0)],
        "sslide_doa_mae_by_rt60": _per_rt60(ds, sslide_dp),
        "ablate": bool(meta.get("ablate", False)),
        "test_datapoints": [int(t) for t in split["test"]],
    }
    if baselines:
        for method in BASELINE_METHODS:
            per_dp = baseline_doa_errors(ds, split["test"], method)
            extras[f"{method}_doa_mae_deg"] = float(np.mean([e.mean() for e in per_dp.values()]))
            extras[f"{method}_doa_mae_by_rt60"] = _per_rt60(ds, per_dp)
    config = ExperimentConfig.loads(meta["config"])
    report = EvalReport(
        errors=errors,
        digest=report_digest(config.digest(), int(meta["split_seed"]), ds.content_hash()),
        seed=int(meta["split_seed"]),
        doa_mae_deg=float(per_array.mean()),
        extras=extras,
        record_ids=np.asarray(ds.records["record_id"][rows]),
    )
    out = Path(out_dir or Path(checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "report.txt", out / "cdf.csv")
    return report


def run_baseline(data_dir, method: str, seed: int | None = None, fractions=None, out_path=None) -> dict:
    """DOA MAE of one classical estimator over the test split, split by RT60."""
    ds = Dataset(data_dir)
    cfg_path = Path(data_dir) / "config.txt"
    cfg = ExperimentConfig.load(cfg_path) if cfg_path.exists() else None
    if seed is None:
        seed = cfg.seed if cfg is not None else 0
    if fractions is None:
        fractions = cfg.split if cfg is not None else (0.7, 0.15, 0.15)
    test = split_datapoints(seed, ds.manifest.T, fractions)["test"]
    per_dp = baseline_doa_errors(ds, test, method)
    summary = {
        "method": method, "seed": seed, "datapoints": [int(t) for t in test],
        "doa_mae_deg": float(np.mean([e.mean() for e in per_dp.values()])),
        "doa_mae_by_rt60": _per_rt60(ds, per_dp),
    }
    out = Path(out_path) if out_path else Path(data_dir) / f"baseline_{method}.txt"
    out.write_text("".join(f"{k} = {json.dumps(v)}\n" for k, v in summary.items()))
    return summary
