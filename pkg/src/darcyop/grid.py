"""Structured grids and log-normal permeability realizations.

Cells are enumerated x-fastest, then y, then z::

    cell_id(x, y, z) = x + nx * (y + ny * z)

Per-cell fields are flat float64 arrays in that order. Directional slots are
ordered ``+x, -x, +y, -y, +z, -z`` (the z pair only exists when ``nz > 1``).
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, NumericalError

DIRECTIONS = ("+x", "-x", "+y", "-y", "+z", "-z")

# (axis, step) for every direction slot
_DIR_AXIS = (0, 0, 1, 1, 2, 2)
_DIR_STEP = (1, -1, 1, -1, 1, -1)

JITTERS = (1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    nz: int = 1
    dx: float = 1.0
    dy: float = 1.0
    dz: float = 1.0

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidArgument(f"{name} must be a positive integer, got {v!r}")
        for name in ("dx", "dy", "dz"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise InvalidArgument(f"{name} must be > 0, got {v!r}")

    @property
    def ncell(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def ndim(self) -> int:
        return 2 if self.nz == 1 else 3

    @property
    def ndir(self) -> int:
        return 2 * self.ndim

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape (nz, ny, nx) matching the flat cell ordering."""
        return (self.nz, self.ny, self.nx)

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy * self.dz

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.dx, self.dy, self.dz)

    @property
    def extent(self) -> tuple[float, float, float]:
        return (self.nx * self.dx, self.ny * self.dy, self.nz * self.dz)

    def face_area(self, axis: int) -> float:
        return (self.dy * self.dz, self.dx * self.dz, self.dx * self.dy)[axis]

    def cell_id(self, x: int, y: int, z: int = 0) -> int:
        if not (0 <= x < self.nx and 0 <= y < self.ny and 0 <= z < self.nz):
            raise InvalidArgument(f"cell ({x}, {y}, {z}) outside grid {self.shape[::-1]}")
        return x + self.nx * (y + self.ny * z)

    def coords(self, cell_id: int) -> tuple[int, int, int]:
        self._check_id(cell_id)
        x = cell_id % self.nx
        y = (cell_id // self.nx) % self.ny
        z = cell_id // (self.nx * self.ny)
        return int(x), int(y), int(z)

    def _check_id(self, cell_id):
        if int(cell_id) != cell_id or not 0 <= cell_id < self.ncell:
            raise InvalidArgument(f"cell id {cell_id!r} out of range [0, {self.ncell})")

    def neighbors(self, cell_id: int) -> list[tuple[int, float, float, str]]:
        """Interior-face neighbours of a cell.

        Returns ``(neighbor_id, face_area, center_distance, direction)`` tuples in
        direction-slot order. Boundary faces are no-flow and omitted.
        """
        ijk = self.coords(cell_id)
        dims = (self.nx, self.ny, self.nz)
        out = []
        for slot in range(self.ndir):
            axis, step = _DIR_AXIS[slot], _DIR_STEP[slot]
            c = list(ijk)
            c[axis] += step
            if 0 <= c[axis] < dims[axis]:
                out.append((self.cell_id(*c), self.face_area(axis),
                            self.spacing[axis], DIRECTIONS[slot]))
        return out

    def faces(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Interior faces as arrays ``(lo, hi, axis)``.

        ``hi`` is the +axis neighbour of ``lo``. Faces are enumerated x-faces
        first, then y, then z, each block in cell order of ``lo``.
        """
        return _faces(self.nx, self.ny, self.nz)

    @property
    def num_interior_faces(self) -> int:
        return len(self.faces()[0])

    def cell_centers(self) -> np.ndarray:
        """(ncell, 3) array of cell-center coordinates in metres."""
        z, y, x = np.meshgrid(np.arange(self.nz), np.arange(self.ny),
                              np.arange(self.nx), indexing="ij")
        return np.stack([(x.ravel() + 0.5) * self.dx,
                         (y.ravel() + 0.5) * self.dy,
                         (z.ravel() + 0.5) * self.dz], axis=1)


def build_grid(nx, ny, nz=1, dx=1.0, dy=1.0, dz=1.0) -> Grid:
    return Grid(nx, ny, nz, dx, dy, dz)


@functools.lru_cache(maxsize=32)
def _faces(nx, ny, nz):
    ids = np.arange(nx * ny * nz).reshape(nz, ny, nx)
    lo, hi, axis = [], [], []
    for ax, (a, b) in enumerate([(ids[:, :, :-1], ids[:, :, 1:]),
                                 (ids[:, :-1, :], ids[:, 1:, :]),
                                 (ids[:-1, :, :], ids[1:, :, :])]):
        lo.append(a.ravel())
        hi.append(b.ravel())
        axis.append(np.full(a.size, ax))
    out = tuple(np.concatenate(v).astype(np.int64) for v in (lo, hi, axis))
    for v in out:
        v.setflags(write=False)
    return out


@dataclass(frozen=True)
class CovarianceSpec:
    """Stationary covariance of the log-permeability field (natural log)."""

    model: str = "exponential"
    lx: float = 1.0
    ly: float = 1.0
    lz: float = 1.0
    mean_log_k: float = float(np.log(1e-13))
    std_log_k: float = 1.0

    def __post_init__(self):
        if self.model not in ("exponential", "gaussian"):
            raise InvalidArgument(f"unknown covariance model {self.model!r}")
        if min(self.lx, self.ly, self.lz) <= 0:
            raise InvalidArgument("correlation lengths must be > 0")
        if self.std_log_k < 0:
            raise InvalidArgument("std_log_k must be >= 0")


def default_covariance(grid: Grid, **overrides) -> CovarianceSpec:
    """Exponential model with correlation length a quarter of the domain per axis."""
    ex, ey, ez = grid.extent
    params = dict(lx=0.25 * ex, ly=0.25 * ey, lz=0.25 * ez)
    params.update(overrides)
    return CovarianceSpec(**params)


def correlation_matrix(grid: Grid, cov: CovarianceSpec) -> np.ndarray:
    c = grid.cell_centers() / np.array([cov.lx, cov.ly, cov.lz])
    d2 = ((c[:, None, :] - c[None, :, :]) ** 2).sum(-1)
    if cov.model == "exponential":
        return np.exp(-np.sqrt(d2))
    return np.exp(-d2)


@functools.lru_cache(maxsize=8)
def _factor(grid: Grid, model: str, lx: float, ly: float, lz: float) -> np.ndarray:
    if grid.ncell > 8192:
        raise InvalidArgument(f"{grid.ncell} cells is too many for dense factorization (max 8192)")
    c = correlation_matrix(grid, CovarianceSpec(model=model, lx=lx, ly=ly, lz=lz))
    eye = np.eye(grid.ncell)
    for eps in JITTERS:
        try:
            chol = np.linalg.cholesky(c + eps * eye)
        except np.linalg.LinAlgError:
            continue
        chol.setflags(write=False)
        return chol
    raise NumericalError(f"covariance factorization failed with jitter up to {JITTERS[-1]}")


def standard_gaussian_field(grid: Grid, cov: CovarianceSpec, seed) -> np.ndarray:
    """Draw Z ~ N(0, C) over cell centres (unit marginal variance)."""
    chol = _factor(grid, cov.model, cov.lx, cov.ly, cov.lz)
    rng = np.random.default_rng(seed)
    return chol @ rng.standard_normal(grid.ncell)


def sample_log_perm_field(grid: Grid, cov: CovarianceSpec, seed) -> np.ndarray:
    """Permeability realization K = exp(mean + std * Z) in m^2, flat per cell."""
    if cov.std_log_k == 0:
        return np.full(grid.ncell, np.exp(cov.mean_log_k))
    z = standard_gaussian_field(grid, cov, seed)
    return np.exp(cov.mean_log_k + cov.std_log_k * z)
