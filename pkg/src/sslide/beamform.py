"""Range-angle beam-power surfaces and their mapping onto the room plane."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .acoustics import MicArray
from .spectral import SpectralFrame


def _check_uniform(v: np.ndarray, name: str):
    if v.ndim != 1 or v.size < 2:
        raise ValueError(f"{name} needs at least two points")
    step = np.diff(v)
    if np.any(step <= 0) or not np.allclose(step, step[0], rtol=1e-9, atol=0):
        raise ValueError(f"{name} must be strictly increasing and uniformly spaced")


@dataclass(frozen=True, eq=False)
class PolarGrid:
    thetas: np.ndarray
    dists: np.ndarray

    def __post_init__(self):
        thetas = np.asarray(self.thetas, dtype=float)
        dists = np.asarray(self.dists, dtype=float)
        _check_uniform(thetas, "thetas")
        _check_uniform(dists, "dists")
        if thetas[0] < -90 - 1e-9 or thetas[-1] > 90 + 1e-9:
            raise ValueError("angles must lie within [-90, 90] degrees")
        if dists[0] <= 0:
            raise ValueError("ranges must be positive")
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "dists", dists)

    @classmethod
    def uniform(cls, U: int = 91, V: int = 64, d_max: float = 10.25) -> "PolarGrid":
        return cls(np.linspace(-90.0, 90.0, U), d_max * np.arange(1, V + 1) / V)

    @property
    def shape(self) -> tuple[int, int]:
        return self.thetas.size, self.dists.size

    @property
    def d_theta(self) -> float:
        return float(self.thetas[1] - self.thetas[0])

    @property
    def d_dist(self) -> float:
        return float(self.dists[1] - self.dists[0])


@dataclass(frozen=True, eq=False)
class CartesianGrid:
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        _check_uniform(xs, "xs")
        _check_uniform(ys, "ys")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @classmethod
    def for_room(cls, room_dims, Y: int = 41, X: int = 65) -> "CartesianGrid":
        return cls(np.linspace(0.0, room_dims[0], X), np.linspace(0.0, room_dims[1], Y))

    @property
    def shape(self) -> tuple[int, int]:
        return self.ys.size, self.xs.size

    @property
    def cell(self) -> tuple[float, float]:
        """(dx, dy) spacing in meters."""
        return float(self.xs[1] - self.xs[0]), float(self.ys[1] - self.ys[0])

    def points(self) -> np.ndarray:
        """Cell centers, shape (Y, X, 2) holding (x, y)."""
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.stack([gx, gy], axis=-1)

    def coords(self, flat_index: int) -> tuple[float, float]:
        iy, ix = np.unravel_index(flat_index, self.shape)
        return float(self.xs[ix]), float(self.ys[iy])

    def nearest_index(self, xy) -> tuple[int, int]:
        """(row, col) of the cell nearest to ``xy``; ties go to the lower index."""
        x, y = xy
        ix = int(np.argmin(np.abs(self.xs - x)))
        iy = int(np.argmin(np.abs(self.ys - y)))
        return iy, ix

    def contains(self, xy) -> bool:
        x, y = xy
        return bool(self.xs[0] <= x <= self.xs[-1] and self.ys[0] <= y <= self.ys[-1])

    def digest_fields(self) -> dict:
        return {"x0": self.xs[0], "x1": self.xs[-1], "X": self.xs.size,
                "y0": self.ys[0], "y1": self.ys[-1], "Y": self.ys.size}


@dataclass(frozen=True, eq=False)
class LikelihoodSurface:
    values: np.ndarray
    grid: PolarGrid | CartesianGrid
    array_index: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ValueError(f"surface shape {values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("likelihood values must be finite and non-negative")
        object.__setattr__(self, "values", values)

    @property
    def is_polar(self) -> bool:
        return isinstance(self.grid, PolarGrid)

    def argmax(self) -> tuple[float, float]:
        """Grid coordinates of the maximum: (theta, d) or (x, y)."""
        i, j = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        if self.is_polar:
            return float(self.grid.thetas[i]), float(self.grid.dists[j])
        return float(self.grid.xs[j]), float(self.grid.ys[i])


def steering_matrices(K: int, u: float, freqs: np.ndarray, grid: PolarGrid, f0: float, c: float,
                      bin_weighted_range: bool = False):
    """Angle steering (U, K) and range steering (F, V) phasors of the beam-power sum."""
    sin_t = np.sin(np.radians(grid.thetas))
    angle = np.exp(2j * np.pi * np.outer(sin_t, np.arange(K) * u) * f0 / c)
    f = np.asarray(freqs, dtype=float)
    if bin_weighted_range:
        f = f * np.arange(1, f.size + 1)
    rng = np.exp(2j * np.pi * np.outer(f, grid.dists) / c)
    return angle, rng


def beam_power(Y: np.ndarray, array: MicArray, freqs: np.ndarray, grid: PolarGrid, f0: float,
               c: float = 340.0, bin_weighted_range: bool = False) -> np.ndarray:
    """Beam power for one array's (K, F) spectra; returns a (U, V) array.

    ``P[theta, d] = |sum_i sum_l Y[i, l] exp(j 2 pi i u sin(theta) f0 / c)
    exp(j 2 pi f_l d / c)|`` with the element index ``i`` counted from 0.
    ``bin_weighted_range`` multiplies the range exponent by the 1-based bin
    number instead.
    """
    Y = np.asarray(Y)
    K = Y.shape[0]
    angle, rng = steering_matrices(K, array.spacing, freqs, grid, f0, c, bin_weighted_range)
    return np.abs(angle @ Y @ rng)


def beam_power_surface(frame: SpectralFrame, array: MicArray, grid: PolarGrid, f0: float,
                       c: float = 340.0, array_index: int = 0,
                       bin_weighted_range: bool = False) -> LikelihoodSurface:
    values = beam_power(frame.array(array_index), array, frame.freqs, grid, f0, c, bin_weighted_range)
    return LikelihoodSurface(values=values, grid=grid, array_index=array_index)


def local_maxima(values: np.ndarray) -> np.ndarray:
    """Boolean mask of cells no smaller than any of their 8 neighbours."""
    return ndimage.maximum_filter(values, size=3, mode="nearest") == values


def estimate_direct_path_range(surface: LikelihoodSurface, peak_threshold: float = 0.5) -> float:
    """Least range among the surface's significant local maxima."""
    if not surface.is_polar:
        raise ValueError("direct-path range needs a polar surface")
    if not 0 < peak_threshold < 1:
        raise ValueError("peak_threshold must lie in (0, 1)")
    v = surface.values
    top = v.max()
    if top <= 0:
        raise ValueError("no peak in an all-zero surface")
    peaks = local_maxima(v) & (v >= peak_threshold * top)
    cols = np.nonzero(peaks.any(axis=0))[0]
    return float(surface.grid.dists[cols.min()])


def range_compensate(frame: SpectralFrame, array_index: int, d_hat: float, d_true: float,
                     c: float = 340.0) -> SpectralFrame:
    """Shift array ``array_index``'s range response from ``d_hat`` to ``d_true``."""
    if d_hat <= 0 or d_true <= 0:
        raise ValueError("ranges must be positive")
    phase = np.exp(2j * np.pi * frame.freqs * (d_hat - d_true) / c)
    return frame.with_array(array_index, frame.array(array_index) * phase[None, :])


class PolarToCartesian:
    """Precomputed bilinear resampling of one array's polar grid onto the room plane."""

    def __init__(self, array: MicArray, polar: PolarGrid, cart: CartesianGrid):
        self.array, self.polar, self.cart = array, polar, cart
        theta, dist = array.to_local(cart.points())
        ti = (theta - polar.thetas[0]) / polar.d_theta
        di = (dist - polar.dists[0]) / polar.d_dist
        U, V = polar.shape
        tol = 1e-9
        inside = (ti >= -tol) & (ti <= U - 1 + tol) & (di >= -tol) & (di <= V - 1 + tol)
        # ranges between 0 and the first grid range clamp onto the first column
        near = (dist > 0) & (di < 0) & (ti >= -tol) & (ti <= U - 1 + tol)
        inside |= near
        ti = np.clip(ti, 0, U - 1)
        di = np.clip(di, 0, V - 1)
        t0 = np.minimum(np.floor(ti).astype(int), U - 2)
        d0 = np.minimum(np.floor(di).astype(int), V - 2)
        wt, wd = ti - t0, di - d0
        self.inside = inside
        self.t0, self.d0, self.wt, self.wd = t0, d0, wt, wd

    def __call__(self, values: np.ndarray, normalize: bool = True) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        t0, d0, wt, wd = self.t0, self.d0, self.wt, self.wd
        out = ((1 - wt) * (1 - wd) * v[t0, d0] + wt * (1 - wd) * v[t0 + 1, d0]
               + (1 - wt) * wd * v[t0, d0 + 1] + wt * wd * v[t0 + 1, d0 + 1])
        out = np.where(self.inside, out, 0.0)
        if normalize:
            top = out.max()
            if top > 0:
                out = out / top
        return out


def polar_to_cartesian(surface: LikelihoodSurface, array: MicArray, cart_grid: CartesianGrid,
                       mapper: PolarToCartesian | None = None) -> LikelihoodSurface:
    if not surface.is_polar:
        raise ValueError("expected a polar surface")
    mapper = mapper or PolarToCartesian(array, surface.grid, cart_grid)
    return LikelihoodSurface(values=mapper(surface.values), grid=cart_grid, array_index=surface.array_index)


class SurfaceBuilder:
    """Beam-power surfaces of every array mapped onto one Cartesian grid.

    Steering matrices and coordinate maps are computed once, so building
    many snapshots' stacks stays cheap.
    """

    def __init__(self, arrays: Sequence[MicArray], polar: PolarGrid | Sequence[PolarGrid],
                 cart: CartesianGrid, freqs: np.ndarray, f0: float, c: float = 340.0,
                 bin_weighted_range: bool = False):
        self.arrays = tuple(arrays)
        grids = [polar] * len(self.arrays) if isinstance(polar, PolarGrid) else list(polar)
        if len(grids) != len(self.arrays):
            raise ValueError("need one polar grid per array")
        self.polar_grids = grids
        self.cart = cart
        self.freqs = np.asarray(freqs, dtype=float)
        self.f0, self.c = f0, c
        self._steer = [steering_matrices(a.K, a.spacing, self.freqs, g, f0, c, bin_weighted_range)
                       for a, g in zip(self.arrays, grids)]
        self._maps = [PolarToCartesian(a, g, cart) for a, g in zip(self.arrays, grids)]

    @property
    def N(self) -> int:
        return len(self.arrays)

    def polar(self, frame: SpectralFrame, n: int) -> np.ndarray:
        angle, rng = self._steer[n]
        return np.abs(angle @ frame.array(n) @ rng)

    def polar_surface(self, frame: SpectralFrame, n: int) -> LikelihoodSurface:
        return LikelihoodSurface(self.polar(frame, n), self.polar_grids[n], array_index=n)

    def cartesian(self, polar_values: np.ndarray, n: int) -> np.ndarray:
        return self._maps[n](polar_values)

    def stack(self, frame: SpectralFrame) -> np.ndarray:
        """The uncompensated (N, Y, X) input stack of one snapshot."""
        return np.stack([self.cartesian(self.polar(frame, n), n) for n in range(self.N)])


def build_input_stack(frame: SpectralFrame, arrays: Sequence[MicArray], grids: PolarGrid | Sequence[PolarGrid],
                      cart_grid: CartesianGrid, f0: float, c: float = 340.0) -> np.ndarray:
    if frame.N != len(arrays):
        raise ValueError(f"frame holds {frame.N} arrays but {len(arrays)} were given")
    return SurfaceBuilder(arrays, grids, cart_grid, frame.freqs, f0, c).stack(frame)
