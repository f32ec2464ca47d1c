"""levyid - Lévy SDE drift identification : Fourier-space grids and ECFs."""

import csv
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from .drift import flat_index, mode_indices
from .errors import LevyIdError
from .simulator import Dataset

logger = logging.getLogger(__name__)


class GridError(LevyIdError, ValueError):
    """Error class for grids that do not fit the model or the data."""


@dataclass(frozen=True)
class SpectralGrid:
    """Frequencies j * ds with |j_l| <= M and ds = 1 / (n_L L)."""

    L: int
    M: int
    n_L: int
    dim: int = 1

    def __post_init__(self) -> None:
        """Check all sizes are positive."""
        for name in ("L", "M", "n_L", "dim"):
            if getattr(self, name) < 1:
                raise GridError(f"{name} must be a positive integer")

    @property
    def ds(self) -> float:
        """Frequency spacing."""
        return 1.0 / (self.n_L * self.L)

    @property
    def size(self) -> int:
        """Points per axis."""
        return 2 * self.M + 1

    @property
    def shape(self) -> Tuple[int, ...]:
        """Shape of the values as a d-dimensional box."""
        return (self.size,) * self.dim

    @property
    def n_points(self) -> int:
        """Total number of grid points."""
        return self.size**self.dim

    @property
    def center(self) -> int:
        """Flat position of j = 0."""
        return self.n_points // 2

    @cached_property
    def indices(self) -> np.ndarray:
        """Integer multi-indices, shape (n_points, d), row-major."""
        return mode_indices(self.M, self.dim)

    @property
    def frequencies(self) -> np.ndarray:
        """Frequency vectors j * ds, shape (n_points, d)."""
        return self.indices * self.ds

    def position(self, j: Sequence[int]) -> int:
        """Flat position of multi-index j."""
        return flat_index(j, self.M)

    def padded(self, pad: int) -> "SpectralGrid":
        """Same spacing with pad extra points on each side of every axis."""
        if pad < 0:
            raise GridError(f"pad must be non-negative (got {pad})")
        return SpectralGrid(
            L=self.L, M=self.M + pad, n_L=self.n_L, dim=self.dim
        )

    def window(self, M: int) -> np.ndarray:
        """Flat positions of the points with every |j_l| <= M.

        The positions come in the row-major order of the smaller grid.
        """
        if not 0 <= M <= self.M:
            raise GridError(f"window half-width {M} outside [0, {self.M}]")
        return np.flatnonzero(np.all(np.abs(self.indices) <= M, axis=1))

    def check_modes(self, J: int, L: int) -> None:
        """Raise unless a model with cutoff J and multiplier L fits."""
        if L != self.L:
            raise GridError(f"model L={L} differs from grid L={self.L}")
        if self.n_L * J > self.M:
            raise GridError(
                f"mode shifts n_L*J={self.n_L * J} exceed grid half-width "
                f"M={self.M}"
            )

    def shift(self, offset: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        """Pairs (p, q) of flat positions where index(q) = index(p) + offset.

        Pairs whose shifted index leaves the grid are omitted.
        """
        target = self.indices + np.asarray(offset, dtype=int)
        inside = np.all(np.abs(target) <= self.M, axis=1)
        rows = np.flatnonzero(inside)
        cols = np.ravel_multi_index(
            tuple((target[inside] + self.M).T), self.shape
        )
        return rows, cols


@dataclass(frozen=True, eq=False)
class CFField:
    """Characteristic function samples on a grid, stored flat."""

    grid: SpectralGrid
    values: np.ndarray
    time_label: float = 0.0

    def __post_init__(self) -> None:
        """Check the value count and freeze the array."""
        values = np.array(self.values, dtype=complex).ravel()
        if values.size != self.grid.n_points:
            raise GridError(
                f"expected {self.grid.n_points} values, got {values.size}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def at(self, j: Sequence[int]) -> complex:
        """Value at multi-index j."""
        return complex(self.values[self.grid.position(j)])

    def conjugate_asymmetry(self) -> float:
        """max |psi(-j) - conj(psi(j))|."""
        return float(np.max(np.abs(self.values[::-1] - np.conj(self.values))))


def _axis_factors(
    points: np.ndarray, grid: SpectralGrid, gaussian_reg: float
) -> List[np.ndarray]:
    """Per-axis factors exp(i s x_l - reg s^2), each of shape (B, size)."""
    s = np.arange(-grid.M, grid.M + 1) * grid.ds
    damping = np.exp(-gaussian_reg * s**2)
    return [
        np.exp(1j * np.outer(points[:, axis], s)) * damping
        for axis in range(grid.dim)
    ]


def _check_points(points: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != grid.dim:
        raise GridError(f"points must have {grid.dim} columns")
    if not np.all(np.isfinite(points)):
        raise GridError("points must be finite")
    return points


def ecf_values(
    points: np.ndarray, grid: SpectralGrid, gaussian_reg: float = 0.0
) -> np.ndarray:
    """Averaged CF values of a point cloud of shape (B, d), flat."""
    points = _check_points(points, grid)
    count = points.shape[0]
    factors = _axis_factors(points, grid, gaussian_reg)
    if grid.dim == 1:
        return factors[0].sum(axis=0) / count

    partial = factors[0]
    for factor in factors[1:-1]:
        partial = (partial[:, :, None] * factor[:, None, :]).reshape(
            count, -1
        )
    return (partial.T @ factors[-1]).ravel() / count


def point_cf_values(
    points: np.ndarray, grid: SpectralGrid, gaussian_reg: float = 0.0
) -> np.ndarray:
    """One CF per point, shape (B, n_points)."""
    points = _check_points(points, grid)
    factors = _axis_factors(points, grid, gaussian_reg)
    values = factors[0]
    for factor in factors[1:]:
        values = (values[:, :, None] * factor[:, None, :]).reshape(
            points.shape[0], -1
        )
    return values


def empirical_cf(
    dataset: Dataset,
    snapshot_index: int,
    grid: SpectralGrid,
    gaussian_reg: float = 0.0,
) -> CFField:
    """Average exp(i s.X) over the valid trajectories at one snapshot."""
    if dataset.dim != grid.dim:
        raise GridError(f"dataset dim {dataset.dim} != grid dim {grid.dim}")
    if gaussian_reg < 0.0:
        raise GridError("gaussian_reg must be non-negative")
    points = dataset.snapshot(snapshot_index)
    return CFField(
        grid=grid,
        values=ecf_values(points, grid, gaussian_reg),
        time_label=snapshot_index * dataset.dt,
    )


def per_trajectory_cf(
    x: np.ndarray, grid: SpectralGrid, gaussian_reg: float = 0.0
) -> CFField:
    """CF exp(i s.x - gaussian_reg s.s) of a single state."""
    if gaussian_reg < 0.0:
        raise GridError("gaussian_reg must be non-negative")
    return CFField(
        grid=grid, values=point_cf_values(x, grid, gaussian_reg)[0]
    )


def write_cf_csv(cf_field: CFField, path: Union[str, Path]) -> None:
    """Write multi-index, real and imaginary part, one row per point."""
    grid = cf_field.grid
    with open(path, "w", newline="") as file_handle:
        writer = csv.writer(file_handle)
        writer.writerow(
            [f"j{axis + 1}" for axis in range(grid.dim)] + ["real", "imag"]
        )
        for j, value in zip(grid.indices, cf_field.values):
            writer.writerow(
                [int(v) for v in j]
                + [repr(float(value.real)), repr(float(value.imag))]
            )
    logger.info("Wrote %d CF values to %s", grid.n_points, path)
