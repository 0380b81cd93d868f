"""Localization metrics, error CDFs, DOA from coordinates and report files."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acoustics import MicArray

REPORT_MAGIC = "sslide-report 1"


def localization_error(pred, truth) -> float:
    (px, py), (tx, ty) = pred, truth
    return float(np.hypot(px - tx, py - ty))


def localization_errors(preds, truths) -> np.ndarray:
    p, t = np.asarray(preds, dtype=float), np.asarray(truths, dtype=float)
    return np.hypot(p[:, 0] - t[:, 0], p[:, 1] - t[:, 1])


def fold_bearing(theta_deg):
    """Reflect bearings behind a linear array into [-90, 90]."""
    t = (np.asarray(theta_deg, dtype=float) + 180.0) % 360.0 - 180.0
    t = np.where(t > 90, 180 - t, t)
    t = np.where(t < -90, -180 - t, t)
    return t


def doa_from_coords(pred, array: MicArray) -> float:
    """Bearing of ``pred`` in the array's local frame, folded into [-90, 90]."""
    rel = np.asarray(pred, dtype=float) - np.asarray(array.center[:2])
    if np.hypot(*rel) < 1e-12:
        raise ValueError("prediction coincides with the array center")
    theta, _ = array.to_local(np.asarray(pred, dtype=float))
    return float(fold_bearing(theta))


def error_cdf(errors, abscissae=None) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF ``P(error <= a)`` sampled at ``abscissae``.

    By default the abscissae are the sorted unique errors themselves, so the
    curve ends at exactly 1.
    """
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("no errors to summarise")
    a = np.unique(e) if abscissae is None else np.asarray(abscissae, dtype=float)
    frac = np.searchsorted(np.sort(e), a, side="right") / e.size
    return a, frac


@dataclass
class EvalReport:
    errors: np.ndarray
    digest: str = ""
    seed: int = 0
    doa_mae_deg: float = float("nan")
    extras: dict = field(default_factory=dict)
    record_ids: np.ndarray | None = None

    @property
    def mae(self) -> float:
        return float(np.mean(self.errors))

    def cdf(self, abscissae=None):
        return error_cdf(self.errors, abscissae)

    def write(self, path: str | Path, cdf_path: str | Path | None = None):
        """Write the key-value report, plus the CDF as CSV when ``cdf_path`` is given."""
        path = Path(path)
        lines = [REPORT_MAGIC,
                 f"digest = {self.digest}",
                 f"seed = {self.seed}",
                 f"records = {self.errors.size}",
                 f"mae_m = {self.mae!r}",
                 f"median_m = {float(np.median(self.errors))!r}",
                 f"doa_mae_deg = {self.doa_mae_deg!r}"]
        for k in sorted(self.extras):
            lines.append(f"{k} = {json.dumps(self.extras[k], sort_keys=True)}")
        ids = self.record_ids if self.record_ids is not None else np.arange(self.errors.size)
        lines.append("[errors]")
        lines.extend(f"{int(i)} {float(e)!r}" for i, e in zip(ids, self.errors))
        path.write_text("\n".join(lines) + "\n")
        if cdf_path is not None:
            a, frac = self.cdf()
            with open(cdf_path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["error_m", "cumulative_fraction"])
                for x, y in zip(a, frac):
                    w.writerow([repr(float(x)), repr(float(y))])

    @classmethod
    def read(cls, path: str | Path) -> "EvalReport":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != REPORT_MAGIC:
            raise ValueError(f"{path} is not an evaluation report")
        head, ids, errs = {}, [], []
        body = False
        for line in lines[1:]:
            if line == "[errors]":
                body = True
            elif body:
                i, e = line.split()
                ids.append(int(i))
                errs.append(float(e))
            else:
                k, _, v = line.partition(" = ")
                head[k] = v
        known = {"digest", "seed", "records", "mae_m", "median_m", "doa_mae_deg"}
        extras = {k: json.loads(v) for k, v in head.items() if k not in known}
        return cls(errors=np.array(errs), digest=head["digest"], seed=int(head["seed"]),
                   doa_mae_deg=float(head["doa_mae_deg"]), extras=extras, record_ids=np.array(ids))


def ablation_compare(full: EvalReport, ablated: EvalReport) -> dict:
    """Paired comparison of a full model and its ablated twin on identical records."""
    ids_f = full.record_ids if full.record_ids is not None else np.arange(full.errors.size)
    ids_a = ablated.record_ids if ablated.record_ids is not None else np.arange(ablated.errors.size)
    if full.errors.shape != ablated.errors.shape or not np.array_equal(ids_f, ids_a):
        raise ValueError("reports come from different data splits")
    if full.seed != ablated.seed:
        raise ValueError("reports come from different seeds")
    diff = ablated.errors - full.errors
    return {
        "mae_full_m": full.mae,
        "mae_ablated_m": ablated.mae,
        "mae_difference_m": float(ablated.mae - full.mae),
        "mean_paired_difference_m": float(np.mean(diff)),
        "full_win_rate": float(np.mean(full.errors < ablated.errors)),
        "ties": float(np.mean(full.errors == ablated.errors)),
    }


def report_digest(config_digest: str, seed: int, dataset_hash: str) -> str:
    blob = f"{config_digest}:{seed}:{dataset_hash}".encode()
    return hashlib.sha256(blob).hexdigest()[:16]
