"""Periodic 2D grids, test potentials and the pseudospectral Hamiltonian.

Vectors on the grid are stored row-major over the point index
``j = j1 * side + j2`` with ``x = j1 / side`` and ``y = j2 / side``.  Blocks of
vectors are ``(n, N)`` arrays.  All transforms use the unitary FFT, so the
kinetic symbol ``2 pi^2 |k|^2`` acts without extra factors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


DENSE_CAP = 16384


class NearResonanceError(ValueError):
    """The constant-coefficient resolvent symbol (nearly) vanishes."""


@dataclass(frozen=True)
class SpectralGrid:
    cells_per_dim: int
    pts_per_cell: int = 8

    def __post_init__(self):
        if self.cells_per_dim < 1:
            raise ValueError("cells_per_dim must be >= 1")
        if self.pts_per_cell < 1:
            raise ValueError("pts_per_cell must be >= 1")
        if self.side % 2:
            raise ValueError(f"grid side {self.side} is odd")

    @property
    def side(self) -> int:
        return self.cells_per_dim * self.pts_per_cell

    @property
    def n(self) -> int:
        return self.side * self.side

    @cached_property
    def frequencies(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer frequencies ``(k1, k2)`` as ``(side, side)`` arrays in FFT order.

        Every component lies in ``[-side/2, side/2)``.
        """
        k = np.fft.fftfreq(self.side, d=1.0 / self.side).round().astype(np.int64)
        return np.meshgrid(k, k, indexing="ij")

    @cached_property
    def k_squared(self) -> np.ndarray:
        k1, k2 = self.frequencies
        return (k1 * k1 + k2 * k2).astype(float)

    @cached_property
    def kinetic_symbol(self) -> np.ndarray:
        return 2.0 * np.pi**2 * self.k_squared

    def frequency_index(self, k1: int, k2: int) -> int:
        """Flat (FFT-ordered) index of the centered frequency ``(k1, k2)``."""
        half = self.side // 2
        if not (-half <= k1 < half and -half <= k2 < half):
            raise ValueError(f"frequency ({k1}, {k2}) outside the grid")
        return (k1 % self.side) * self.side + (k2 % self.side)

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        j = np.arange(self.side) / self.side
        x, y = np.meshgrid(j, j, indexing="ij")
        return x.ravel(), y.ravel()

    def planewave(self, k1: int, k2: int) -> np.ndarray:
        """Unit-norm grid samples of ``exp(2 pi i k . x)``."""
        x, y = self.points()
        return np.exp(2j * np.pi * (k1 * x + k2 * y)) / np.sqrt(self.n)


def build_grid(cells: int, pts_per_cell: int = 8) -> SpectralGrid:
    if pts_per_cell % 2:
        raise ValueError("pts_per_cell must be even")
    return SpectralGrid(cells, pts_per_cell)


def _as_grid_block(grid: SpectralGrid, X: np.ndarray) -> np.ndarray:
    if X.shape[0] != grid.n:
        raise ValueError(f"expected {grid.n} rows, got {X.shape[0]}")
    return X.reshape((grid.side, grid.side) + X.shape[1:])


def fft(grid: SpectralGrid, X: np.ndarray) -> np.ndarray:
    """Unitary 2D FFT of every column; output rows are in FFT frequency order."""
    Xg = _as_grid_block(grid, X)
    return np.fft.fft2(Xg, axes=(0, 1), norm="ortho").reshape(X.shape)


def ifft(grid: SpectralGrid, Xk: np.ndarray) -> np.ndarray:
    Xg = _as_grid_block(grid, Xk)
    return np.fft.ifft2(Xg, axes=(0, 1), norm="ortho").reshape(Xk.shape)


def apply_symbol(grid: SpectralGrid, symbol: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Apply the Fourier multiplier ``symbol`` (``(side, side)`` or flat) to each column.

    Real input with an even real symbol gives real output.
    """
    Xg = _as_grid_block(grid, X)
    symbol = np.asarray(symbol).reshape(grid.side, grid.side)
    s = symbol.reshape(symbol.shape + (1,) * (Xg.ndim - 2))
    out = np.fft.ifft2(s * np.fft.fft2(Xg, axes=(0, 1)), axes=(0, 1))
    if np.isrealobj(X) and np.isrealobj(symbol):
        out = out.real
    return out.reshape(X.shape)


# -- potentials ---------------------------------------------------------------

VACANCY_MODES = ("none", "fixed_count", "fraction")


@dataclass(frozen=True)
class PotentialSpec:
    """Periodic lattice of Gaussian wells, one per unit cell.

    ``vacancy_mode`` is ``"none"``, ``"fixed_count"`` (``vacancies`` is the
    number of empty cells) or ``"fraction"`` (``vacancies`` is the fraction).
    """

    well_depth: float = 40.0
    well_width: float = 0.15
    global_scale: float = 1.0
    vacancy_mode: str = "none"
    vacancies: float = 0
    rng_seed: int = 0

    def __post_init__(self):
        if self.well_depth <= 0 or self.well_width <= 0:
            raise ValueError("well depth and width must be positive")
        if self.vacancy_mode not in VACANCY_MODES:
            raise ValueError(f"unknown vacancy mode {self.vacancy_mode!r}")
        if self.vacancy_mode == "fraction" and not 0 <= self.vacancies <= 1:
            raise ValueError("vacancy fraction must lie in [0, 1]")
        if self.vacancy_mode == "fixed_count" and (
            self.vacancies < 0 or int(self.vacancies) != self.vacancies
        ):
            raise ValueError("vacancy count must be a non-negative integer")

    def vacancy_count(self, cells: int) -> int:
        total = cells * cells
        if self.vacancy_mode == "none":
            return 0
        if self.vacancy_mode == "fixed_count":
            m = int(self.vacancies)
            if m > total:
                raise ValueError(f"{m} vacancies requested for {total} cells")
            return m
        return int(np.floor(self.vacancies * total + 0.5))


def occupancy(cells: int, spec: PotentialSpec) -> np.ndarray:
    """Boolean ``(cells, cells)`` mask of occupied cells."""
    m = spec.vacancy_count(cells)
    mask = np.ones(cells * cells, dtype=bool)
    if m:
        rng = np.random.default_rng(spec.rng_seed)
        mask[rng.choice(cells * cells, size=m, replace=False)] = False
    return mask.reshape(cells, cells)


def sample_potential(grid: SpectralGrid, spec: PotentialSpec) -> np.ndarray:
    """Sampled, scaled potential ``scale * l^2 * V0`` at the grid points."""
    cells = grid.cells_per_dim
    mask = occupancy(cells, spec)
    j = np.arange(grid.side)
    cell = j // grid.pts_per_cell
    local = (j % grid.pts_per_cell) / grid.pts_per_cell - 0.5
    r2 = local[:, None] ** 2 + local[None, :] ** 2
    well = -spec.well_depth * np.exp(-r2 / (2.0 * spec.well_width**2))
    V0 = np.where(mask[cell[:, None], cell[None, :]], well, 0.0)
    return (spec.global_scale * cells**2 * V0).ravel()


def write_field_csv(grid: SpectralGrid, values: np.ndarray, path) -> None:
    x, y = grid.points()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "x", "y", "value"])
        for i in range(grid.n):
            w.writerow([i, repr(float(x[i])), repr(float(y[i])), repr(float(values[i]))])


# -- Hamiltonian --------------------------------------------------------------


@dataclass
class HamiltonianOp:
    """``-1/2 Laplacian + diag(V) - shift`` on a periodic grid."""

    grid: SpectralGrid
    potential: np.ndarray
    shift: float = 0.0
    _dense: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.potential = np.asarray(self.potential, dtype=float)
        if self.potential.shape != (self.grid.n,):
            raise ValueError("potential must have one value per grid point")
        if not np.all(np.isfinite(self.potential)):
            raise ValueError("potential has non-finite entries")

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def kinetic_symbol(self) -> np.ndarray:
        return self.grid.kinetic_symbol

    def shifted(self, sigma: float) -> "HamiltonianOp":
        """Same operator with ``sigma`` subtracted from the diagonal."""
        return HamiltonianOp(self.grid, self.potential, self.shift + sigma)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return apply_hamiltonian(self, X)

    __matmul__ = apply


def apply_hamiltonian(H: HamiltonianOp, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    if X.shape[0] != H.n:
        raise ValueError(f"block has {X.shape[0]} rows, operator acts on {H.n}")
    V = H.potential if X.ndim == 1 else H.potential[:, None]
    return apply_symbol(H.grid, H.kinetic_symbol, X) + (V - H.shift) * X


def apply_const_resolvent(grid: SpectralGrid, l: complex, z: complex, b: np.ndarray) -> np.ndarray:
    """``(-1/2 Laplacian + l - z)^{-1} b`` by diagonal division in k-space."""
    symbol = grid.kinetic_symbol + (l - z)
    check_resonance(symbol)
    return apply_symbol(grid, 1.0 / symbol, np.asarray(b, dtype=complex))


def check_resonance(symbol: np.ndarray, rtol: float = 1e-10) -> None:
    mags = np.abs(symbol)
    if mags.min() < rtol * mags.max():
        raise NearResonanceError(
            f"resolvent symbol nearly singular (min {mags.min():.3e}, max {mags.max():.3e})"
        )


def kinetic_kernel(grid: SpectralGrid) -> np.ndarray:
    """First column of the kinetic matrix as a ``(side, side)`` real array."""
    return np.fft.ifft2(grid.kinetic_symbol).real


def densify(H: HamiltonianOp, cap: int = DENSE_CAP) -> np.ndarray:
    """Exact dense matrix of ``H`` (real symmetric)."""
    n = H.n
    if n > cap:
        raise ValueError(f"n = {n} exceeds the dense cap {cap}")
    s = H.grid.side
    kern = kinetic_kernel(H.grid)
    j = np.arange(s)
    d1 = (j[:, None] - j[None, :]) % s
    # K[(a1,a2),(b1,b2)] = kern[a1-b1, a2-b2]
    K = kern[d1[:, None, :, None], d1[None, :, None, :]].reshape(n, n)
    K = 0.5 * (K + K.T)
    K[np.diag_indices(n)] += H.potential - H.shift
    return K
