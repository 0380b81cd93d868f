"""Training targets: source heatmaps and range-compensated multipath labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acoustics import RoomScenario
from .beamform import CartesianGrid, SurfaceBuilder, estimate_direct_path_range, range_compensate
from .spectral import SpectralFrame


@dataclass(frozen=True, eq=False)
class TargetHeatmap:
    values: np.ndarray
    grid: CartesianGrid
    truth: tuple[float, float]
    sigma: float


def make_target_heatmap(truth, grid: CartesianGrid, sigma: float = 0.25) -> TargetHeatmap:
    """Negative-exponential label ``exp(-dist**2 / sigma**2)`` around ``truth``.

    ``sigma`` is in meters.  Cells far enough away underflow to exactly 0.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x, y = (float(v) for v in truth)
    if not grid.contains((x, y)):
        raise ValueError(f"truth {(x, y)} lies outside the grid")
    gx, gy = np.meshgrid(grid.xs - x, grid.ys - y)
    values = np.exp(-(gx**2 + gy**2) / sigma**2)
    return TargetHeatmap(values=values, grid=grid, truth=(x, y), sigma=float(sigma))


def true_ranges(scenario: RoomScenario) -> np.ndarray:
    """Distance from each array center to the source."""
    src = np.asarray(scenario.source_pos)
    return np.array([np.linalg.norm(src - np.asarray(a.center)) for a in scenario.arrays])


def make_multipath_labels(frame: SpectralFrame, scenario: RoomScenario, builder: SurfaceBuilder,
                          peak_threshold: float = 0.5, return_ranges: bool = False):
    """Per-array Cartesian surfaces after moving the direct path to its true range.

    Returns an (N, Y, X) stack, and the estimated/true ranges when
    ``return_ranges`` is set.
    """
    if frame.N != builder.N or len(scenario.arrays) != builder.N:
        raise ValueError("frame, scenario and builder disagree on the number of arrays")
    d_true = true_ranges(scenario)
    d_hat = np.empty_like(d_true)
    labels = []
    for n in range(builder.N):
        polar = builder.polar_surface(frame, n)
        d_hat[n] = estimate_direct_path_range(polar, peak_threshold)
        comp = range_compensate(frame, n, d_hat[n], d_true[n], scenario.c)
        labels.append(builder.cartesian(builder.polar(comp, n), n))
    out = np.stack(labels)
    if return_ranges:
        return out, d_hat, d_true
    return out
