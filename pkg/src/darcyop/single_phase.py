"""TPFA transmissibilities and implicit single-phase pressure stepping.

Discrete balance per cell i (all terms at n+1 except the accumulation lag)::

    V phi c_t / dt (P_i' - P_i) = sum_j T_ij (P_j' - P_i') - PI_i (P_i' - P_wf)

The well term is folded into the matrix diagonal so the system stays SPD.
The step is solved for the increment P' - P, which keeps the right-hand side
at flux scale and makes the no-flow equilibrium an exact fixed point.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .errors import InvalidArgument, NumericalError
from .grid import Grid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SinglePhaseConfig:
    porosity: float = 0.2
    compressibility: float = 1e-9  # total, 1/Pa
    viscosity: float = 1e-3  # Pa s
    initial_pressure: float = 3e7  # Pa
    dt: float = 1000.0  # s
    num_steps: int = 50

    def __post_init__(self):
        if not 0 < self.porosity < 1:
            raise InvalidArgument("porosity must lie in (0, 1)")
        if self.compressibility <= 0 or self.viscosity <= 0 or self.dt <= 0:
            raise InvalidArgument("compressibility, viscosity and dt must be > 0")
        if self.num_steps < 0:
            raise InvalidArgument("num_steps must be >= 0")


@dataclass(frozen=True)
class Well:
    cell_id: int
    bhp: float = 2e7  # bottom-hole pressure, Pa
    pi: float = 1e-12  # production index, m^3/(Pa s)
    kind: str = "producer"

    def __post_init__(self):
        if self.pi < 0:
            raise InvalidArgument("production index must be >= 0")
        if self.kind not in ("producer", "injector"):
            raise InvalidArgument(f"unknown well kind {self.kind!r}")


@dataclass
class Transmissibility:
    """Directional face transmissibilities, shape (ncell, 2*ndim).

    Column order follows :data:`darcyop.grid.DIRECTIONS`; boundary slots are 0.
    """

    grid: Grid
    values: np.ndarray

    def face_values(self) -> np.ndarray:
        """T for every interior face, aligned with ``grid.faces()``."""
        lo, _, axis = self.grid.faces()
        return self.values[lo, 2 * axis]


@dataclass
class PressureTrajectory:
    pressure: np.ndarray  # (num_steps, ncell)
    rates: np.ndarray  # (num_steps, nwells), positive = production
    initial_pressure: np.ndarray = field(default=None)


def cell_half_transmissibility(k, area, dist, mu):
    """K A / (mu d) with d the centre-to-face distance."""
    if np.any(np.asarray(area) <= 0) or np.any(np.asarray(dist) <= 0) or mu <= 0:
        raise InvalidArgument("area, distance and viscosity must be > 0")
    return k * area / (mu * dist)


def face_transmissibility(ti, tj):
    """Harmonic combination (1/T_i + 1/T_j)^-1; zero if either side is zero."""
    ti = np.asarray(ti, dtype=float)
    tj = np.asarray(tj, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where((ti > 0) & (tj > 0), ti * tj / (ti + tj), 0.0)
    return t if t.ndim else float(t)


def assemble_transmissibility(grid: Grid, perm, mu=1.0) -> Transmissibility:
    perm = np.asarray(perm, dtype=float)
    if perm.shape != (grid.ncell,):
        raise InvalidArgument(f"permeability must have {grid.ncell} entries, got {perm.shape}")
    if np.any(perm < 0) or not np.all(np.isfinite(perm)):
        raise InvalidArgument("permeability must be finite and >= 0")
    lo, hi, axis = grid.faces()
    area = np.array([grid.face_area(a) for a in range(3)])[axis]
    half = 0.5 * np.array(grid.spacing)[axis]
    t = face_transmissibility(cell_half_transmissibility(perm[lo], area, half, mu),
                              cell_half_transmissibility(perm[hi], area, half, mu))
    values = np.zeros((grid.ncell, grid.ndir))
    values[lo, 2 * axis] = t
    values[hi, 2 * axis + 1] = t
    return Transmissibility(grid, values)


def well_rate(p, well: Well) -> float:
    """PI (P - P_wf); positive means production."""
    return well.pi * (p - well.bhp)


def flux_matrix(grid: Grid, face_t) -> sp.csr_matrix:
    """Sparse matrix A with (A p)_i = sum_j T_ij (p_i - p_j)."""
    lo, hi, _ = grid.faces()
    n = grid.ncell
    rows = np.concatenate([lo, hi, lo, hi])
    cols = np.concatenate([lo, hi, hi, lo])
    vals = np.concatenate([face_t, face_t, -face_t, -face_t])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def net_flux(grid: Grid, face_t, p) -> np.ndarray:
    """sum_j T_ij (p_j - p_i) per cell, exactly zero for uniform p."""
    lo, hi, _ = grid.faces()
    f = face_t * (p[hi] - p[lo])
    out = np.bincount(lo, weights=f, minlength=grid.ncell)
    out -= np.bincount(hi, weights=f, minlength=grid.ncell)
    return out


def solve_spd(matrix, rhs, rel_tol=1e-10, max_iters=None, x0=None):
    """Jacobi-preconditioned conjugate gradients.

    Guarantees ``||A x - b|| <= rel_tol ||b||`` on return, otherwise raises
    :class:`NumericalError` with the final residual norm attached.
    """
    a = sp.csr_matrix(matrix)
    b = np.asarray(rhs, dtype=float)
    n = b.shape[0]
    if a.shape != (n, n):
        raise InvalidArgument(f"matrix shape {a.shape} does not match rhs length {n}")
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n)
    diag = a.diagonal()
    if np.any(diag <= 0):
        raise NumericalError("matrix is not positive definite (non-positive diagonal)")
    precond = sp.diags(1.0 / diag)
    max_iters = 10 * n if max_iters is None else max_iters
    target = rel_tol * bnorm
    x = None if x0 is None else np.asarray(x0, dtype=float)
    res = np.inf
    # scipy monitors its recursive residual; re-check the true one and restart
    for _ in range(3):
        x, _info = cg(a, b, x0=x, rtol=rel_tol, atol=0.0, maxiter=max_iters, M=precond)
        res = np.linalg.norm(a @ x - b)
        if res <= target:
            return x
    raise NumericalError(f"CG did not reach rel_tol={rel_tol:g} (residual {res:.3e}, "
                         f"target {target:.3e})", residual=res)


def _well_arrays(grid: Grid, wells):
    cells = np.array([w.cell_id for w in wells], dtype=np.int64)
    if len(cells) and (cells.min() < 0 or cells.max() >= grid.ncell):
        raise InvalidArgument("well cell outside grid")
    pi = np.array([w.pi for w in wells], dtype=float)
    bhp = np.array([w.bhp for w in wells], dtype=float)
    return cells, pi, bhp


def _as_trans(grid, k_or_t, mu) -> Transmissibility:
    if isinstance(k_or_t, Transmissibility):
        if k_or_t.grid != grid or k_or_t.values.shape != (grid.ncell, grid.ndir):
            raise InvalidArgument("transmissibility field inconsistent with grid")
        return k_or_t
    return assemble_transmissibility(grid, k_or_t, mu)


class _SinglePhaseSystem:
    """Constant implicit-step matrix for a fixed grid, T, wells and dt."""

    def __init__(self, trans: Transmissibility, cfg: SinglePhaseConfig, wells, dt):
        grid = trans.grid
        if dt <= 0:
            raise InvalidArgument("dt must be > 0")
        self.grid = grid
        self.face_t = trans.face_values()
        self.flux = flux_matrix(grid, self.face_t)
        self.cells, self.pi, self.bhp = _well_arrays(grid, wells)
        self.accum = grid.cell_volume * cfg.porosity * cfg.compressibility / dt
        well_diag = np.bincount(self.cells, weights=self.pi, minlength=grid.ncell)
        self.matrix = (self.flux + sp.diags(self.accum + well_diag)).tocsr()

    def rates(self, p):
        return self.pi * (p[self.cells] - self.bhp)

    def step(self, p):
        q = self.rates(p)
        rhs = net_flux(self.grid, self.face_t, p)
        np.subtract.at(rhs, self.cells, q)
        return p + solve_spd(self.matrix, rhs)


def step_single_phase(p, trans: Transmissibility, cfg: SinglePhaseConfig, wells, dt=None):
    """One fully implicit step; returns the pressure at n+1."""
    p = np.asarray(p, dtype=float)
    system = _SinglePhaseSystem(trans, cfg, wells, cfg.dt if dt is None else dt)
    return system.step(p)


def simulate_single_phase(grid: Grid, k_or_t, cfg: SinglePhaseConfig, wells) -> PressureTrajectory:
    """Run ``cfg.num_steps`` implicit steps from a uniform initial pressure.

    ``k_or_t`` is either permeability (m^2, per cell) or a prebuilt
    :class:`Transmissibility`. Well rates are recorded at the new pressure.
    """
    trans = _as_trans(grid, k_or_t, cfg.viscosity)
    system = _SinglePhaseSystem(trans, cfg, wells, cfg.dt)
    p = np.full(grid.ncell, cfg.initial_pressure)
    p0 = p.copy()
    pressures = np.empty((cfg.num_steps, grid.ncell))
    rates = np.empty((cfg.num_steps, len(wells)))
    for n in range(cfg.num_steps):
        try:
            p = system.step(p)
        except NumericalError as exc:
            raise NumericalError(f"single-phase step {n + 1}: {exc}", exc.residual) from exc
        pressures[n] = p
        rates[n] = system.rates(p)
    return PressureTrajectory(pressures, rates, p0)


def corner_producers(grid: Grid, bhp=2e7, pi=1e-12):
    """One producer in each corner column (every layer in 3D)."""
    xs, ys = (0, grid.nx - 1), (0, grid.ny - 1)
    cells = sorted({grid.cell_id(x, y, z) for z in range(grid.nz) for y in ys for x in xs})
    return [Well(c, bhp, pi, "producer") for c in cells]


def five_spot(grid: Grid, producer_bhp=2e7, injector_bhp=4e7, pi=1e-12):
    """Corner producers plus a central water injector.

    On even-sized axes the centre falls on a cell corner, so the injector is
    split over the 2 (or 4) central cells with the index shared equally; the
    layout is then exactly mirror-symmetric.
    """
    producers = corner_producers(grid, producer_bhp, pi)
    cx = [grid.nx // 2] if grid.nx % 2 else [grid.nx // 2 - 1, grid.nx // 2]
    cy = [grid.ny // 2] if grid.ny % 2 else [grid.ny // 2 - 1, grid.ny // 2]
    share = pi / (len(cx) * len(cy))
    injectors = [Well(grid.cell_id(x, y, z), injector_bhp, share, "injector")
                 for z in range(grid.nz) for y in cy for x in cx]
    return producers + injectors
