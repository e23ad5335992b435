"""Spatial discretization, measurement assignment and sampled-map construction.

Grid indices are 1-based in the docs and 0-based in code. Point ``(i, j)``
sits at ``origin + [(i + 1) * delta_x, (j + 1) * delta_y]`` for 0-based
``i < ny`` and ``j < nx``, so the row index runs along the x axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Grid:
    ny: int
    nx: int
    delta_x: float
    delta_y: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.ny < 1 or self.nx < 1:
            raise ValueError(f"grid needs ny, nx >= 1, got {self.ny}x{self.nx}")
        if not (self.delta_x > 0 and self.delta_y > 0):
            raise ValueError("grid spacing must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.ny * self.nx

    @property
    def side_x(self) -> float:
        return self.ny * self.delta_x

    @property
    def side_y(self) -> float:
        return self.nx * self.delta_y

    def axis_x(self) -> np.ndarray:
        return self.origin[0] + self.delta_x * np.arange(1, self.ny + 1)

    def axis_y(self) -> np.ndarray:
        return self.origin[1] + self.delta_y * np.arange(1, self.nx + 1)

    def point(self, i: int, j: int) -> np.ndarray:
        """Coordinates in meters of the 0-based grid point (i, j)."""
        return np.array([self.origin[0] + (i + 1) * self.delta_x,
                         self.origin[1] + (j + 1) * self.delta_y])

    def points(self) -> np.ndarray:
        """All grid points as an ``(ny*nx, 2)`` array in row-major order."""
        gx, gy = np.meshgrid(self.axis_x(), self.axis_y(), indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)


def build_grid(side_x: float, side_y: float, ny: int, nx: int,
               origin: tuple[float, float] = (0.0, 0.0)) -> Grid:
    """Cover a ``side_x`` by ``side_y`` rectangle with an ``ny`` by ``nx`` grid.

    Rows advance along x and columns along y, hence ``delta_x = side_x / ny``
    and ``delta_y = side_y / nx``.
    """
    if ny < 1 or nx < 1:
        raise ValueError(f"grid dimensions must be >= 1, got ny={ny}, nx={nx}")
    if not (side_x > 0 and side_y > 0):
        raise ValueError(f"sides must be positive, got {side_x}, {side_y}")
    return Grid(int(ny), int(nx), side_x / ny, side_y / nx,
                (float(origin[0]), float(origin[1])))


@dataclass
class MeasurementSet:
    locations: np.ndarray  # (N, 2) meters
    values: np.ndarray  # (N, nf) dBm
    frequencies: np.ndarray = field(default_factory=lambda: np.array([900e6]))

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=float).reshape(-1, 2)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        self.values = values
        self.frequencies = np.atleast_1d(np.asarray(self.frequencies, dtype=float))
        if len(self.locations) != len(self.values):
            raise ValueError("locations and values must have the same length")
        if self.values.shape[1] != len(self.frequencies):
            raise ValueError("values must have one column per frequency")
        if np.any(np.diff(self.frequencies) <= 0):
            raise ValueError("frequencies must be strictly increasing")

    def __len__(self):
        return len(self.locations)


@dataclass
class AssignmentSets:
    """Per-grid-point lists of measurement indices (0-based)."""
    sets: np.ndarray  # (ny, nx) object array of lists

    def counts(self) -> np.ndarray:
        return np.vectorize(len, otypes=[int])(self.sets)


@dataclass
class SampledMap:
    values: np.ndarray  # (ny, nx, nf), zeros at misses
    mask: np.ndarray  # (ny, nx) uint8

    @property
    def omega(self) -> list[tuple[int, int]]:
        return [tuple(ix) for ix in np.argwhere(self.mask)]

    @property
    def omega_size(self) -> int:
        return int(self.mask.sum())


@dataclass
class TrueMap:
    values: np.ndarray  # (ny, nx, nf) dBm


def _nearest_axis_index(coord: np.ndarray, start: float, delta: float, n: int) -> np.ndarray:
    # 0-based index k sits at start + (k + 1) * delta; ties go to the lower index
    t = (coord - start) / delta - 1.0
    lo = np.clip(np.floor(t), 0, n - 1).astype(int)
    hi = np.clip(lo + 1, 0, n - 1)
    d_lo = np.abs(coord - (start + (lo + 1) * delta))
    d_hi = np.abs(coord - (start + (hi + 1) * delta))
    return np.where(d_hi < d_lo, hi, lo)


def nearest_grid_indices(grid: Grid, locations: np.ndarray) -> np.ndarray:
    """Nearest grid point of each location as ``(N, 2)`` 0-based indices.

    Squared distance separates over the axes, so the set of 2-D minimizers is
    the product of the per-axis minimizers and taking the lowest index on each
    axis yields the smallest row-major (i, j).
    """
    locations = np.asarray(locations, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(locations)):
        raise ValueError("measurement locations must be finite")
    i = _nearest_axis_index(locations[:, 0], grid.origin[0], grid.delta_x, grid.ny)
    j = _nearest_axis_index(locations[:, 1], grid.origin[1], grid.delta_y, grid.nx)
    return np.stack([i, j], axis=1)


def assign_measurements(grid: Grid, ms: MeasurementSet) -> AssignmentSets:
    idx = nearest_grid_indices(grid, ms.locations)
    sets = np.empty(grid.shape, dtype=object)
    for i in range(grid.ny):
        for j in range(grid.nx):
            sets[i, j] = []
    for n, (i, j) in enumerate(idx):
        sets[i, j].append(n)
    return AssignmentSets(sets)


def aggregate(grid: Grid, ms: MeasurementSet, a: AssignmentSets) -> SampledMap:
    """Average the dBm measurements assigned to each grid point.

    Points without measurements (misses) are filled with 0 and masked out.
    """
    nf = ms.values.shape[1]
    values = np.zeros(grid.shape + (nf,))
    mask = np.zeros(grid.shape, dtype=np.uint8)
    for i in range(grid.ny):
        for j in range(grid.nx):
            members = a.sets[i, j]
            if members:
                values[i, j] = ms.values[members].mean(axis=0)
                mask[i, j] = 1
    return SampledMap(values, mask)


def make_mask(omega: Iterable[Sequence[int]], ny: int, nx: int) -> np.ndarray:
    mask = np.zeros((ny, nx), dtype=np.uint8)
    idx = np.asarray(list(omega), dtype=int).reshape(-1, 2)
    if len(idx):
        if idx.min() < 0 or np.any(idx[:, 0] >= ny) or np.any(idx[:, 1] >= nx):
            raise IndexError(f"sampling set has indices outside a {ny}x{nx} grid")
        mask[idx[:, 0], idx[:, 1]] = 1
    return mask


def project(a: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero out every entry of ``a`` whose grid point is not in the mask."""
    m = mask.astype(bool)
    if a.ndim > m.ndim:
        m = m.reshape(m.shape + (1,) * (a.ndim - m.ndim))
    return np.where(m, a, 0)


@dataclass(frozen=True)
class Normalizer:
    """Affine dBm standardization fitted on the observed training values."""
    mean: float = 0.0
    std: float = 1.0

    @classmethod
    def fit(cls, values: np.ndarray, mask: np.ndarray | None = None) -> "Normalizer":
        values = np.asarray(values, dtype=float)
        if mask is not None:
            m = np.asarray(mask, dtype=bool)
            if values.ndim > m.ndim:
                m = np.broadcast_to(m.reshape(m.shape + (1,) * (values.ndim - m.ndim)),
                                    values.shape)
            values = values[m]
        std = float(values.std()) if values.size else 1.0
        return cls(float(values.mean()) if values.size else 0.0, std if std > 0 else 1.0)

    def forward(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z) * self.std + self.mean


def concat_input(sm: SampledMap, f_index: int = 0,
                 normalizer: Normalizer | None = None,
                 with_mask: bool = True) -> np.ndarray:
    """Network input for one frequency: normalized values plus the mask slab.

    Misses are zero after normalization. ``with_mask=False`` drops the mask
    slab and returns an ``(ny, nx, 1)`` tensor.
    """
    if not 0 <= f_index < sm.values.shape[2]:
        raise IndexError(f"frequency index {f_index} out of range")
    normalizer = normalizer or Normalizer()
    mask = sm.mask.astype(float)
    slab = np.where(mask > 0, normalizer.forward(sm.values[:, :, f_index]), 0.0)
    if not with_mask:
        return slab[:, :, None]
    return np.stack([slab, mask], axis=2)
