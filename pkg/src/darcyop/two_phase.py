"""IMPES oil-water solver without gravity or capillarity.

Transmissibilities here are geometric (assembled with unit viscosity); phase
mobilities ``k_r / mu`` carry the viscosity. Likewise ``Well.pi`` is a
geometric well index and rates are ``pi * mobility * (P - P_wf)``.

Pressure, implicit with mobilities and compressibility lagged at step n::

    V phi c_t / dt (P_i' - P_i) = sum_j lam_ij T_ij (P_j' - P_i') - q_i

Water saturation, explicit::

    V phi S_i C_w / dt (P_i' - P_i) + V phi (S_i' - S_i) / dt
        = sum_j lam_w,ij T_ij (P_j' - P_i') + q_w,i

with C_w = c_r + c_w, so that the water and oil balances add up to the
pressure equation exactly.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgument, NumericalError
from .grid import Grid
from .single_phase import (Transmissibility, _as_trans, _well_arrays, flux_matrix, net_flux,
                           solve_spd)

log = logging.getLogger(__name__)

CLAMP_WARN_FRACTION = 0.01


@dataclass(frozen=True)
class TwoPhaseConfig:
    porosity: float = 0.2
    rock_compressibility: float = 1e-9
    oil_compressibility: float = 1e-9
    water_compressibility: float = 5e-10
    oil_viscosity: float = 2e-3
    water_viscosity: float = 1e-3
    irreducible_water: float = 0.2
    # margin above S_iw keeps immobile water from being compressed below it
    initial_saturation: float | None = 0.25  # None -> irreducible_water
    initial_pressure: float = 3e7
    dt: float = 2000.0
    num_steps: int = 50

    def __post_init__(self):
        if not 0 < self.porosity < 1:
            raise InvalidArgument("porosity must lie in (0, 1)")
        if not 0 <= self.irreducible_water < 1:
            raise InvalidArgument("irreducible_water must lie in [0, 1)")
        if min(self.oil_viscosity, self.water_viscosity) <= 0:
            raise InvalidArgument("viscosities must be > 0")
        if min(self.rock_compressibility, self.oil_compressibility,
               self.water_compressibility) < 0:
            raise InvalidArgument("compressibilities must be >= 0")
        if (self.rock_compressibility + self.oil_compressibility
                + self.water_compressibility) <= 0:
            raise InvalidArgument("total compressibility must be > 0")
        if self.dt <= 0 or self.num_steps < 0:
            raise InvalidArgument("dt must be > 0 and num_steps >= 0")
        s0 = self.initial_saturation
        if s0 is not None and not self.irreducible_water <= s0 <= 1:
            raise InvalidArgument("initial saturation outside [S_iw, 1]")

    @property
    def injection_mobility(self) -> float:
        """Mobility of injected water, k_rw(1) / mu_w."""
        return 1.0 / self.water_viscosity


@dataclass
class TwoPhaseState:
    pressure: np.ndarray
    saturation: np.ndarray  # water


@dataclass
class TwoPhaseTrajectory:
    pressure: np.ndarray  # (num_steps, ncell)
    saturation: np.ndarray  # (num_steps, ncell)
    rates: np.ndarray  # total well rates (num_steps, nwells), positive = production
    water_rates: np.ndarray  # water source per well, positive = into reservoir
    water_storage: np.ndarray  # per-step stored water change, m^3
    clamp_counts: np.ndarray  # (num_steps,)
    warnings: list


def rel_perm(sw, siw):
    """Corey-type curves with zero residual oil: returns (k_rw, k_ro).

    Saturations outside [S_iw, 1] are clamped with a RuntimeWarning.
    """
    sw = np.asarray(sw, dtype=float)
    if np.any(sw < siw - 1e-12) or np.any(sw > 1 + 1e-12):
        warnings.warn("water saturation outside [S_iw, 1]; clamped", RuntimeWarning, stacklevel=2)
    se = (np.clip(sw, siw, 1.0) - siw) / (1.0 - siw)
    krw = se ** 4
    kro = (1.0 - se) ** 2 * (1.0 - se ** 2)
    if krw.ndim == 0:
        return float(krw), float(kro)
    return krw, kro


def phase_mobilities(sw, cfg: TwoPhaseConfig):
    krw, kro = rel_perm(sw, cfg.irreducible_water)
    return krw / cfg.water_viscosity, kro / cfg.oil_viscosity


def upwind_cells(p, lo, hi):
    """Upwind cell per face: higher pressure donates, ties go to the lower index."""
    return np.where(p[hi] > p[lo], hi, lo)


def face_mobility(state: TwoPhaseState, cfg: TwoPhaseConfig, i: int, j: int):
    """Upwinded (lam_w, lam_o) on the face between cells i and j."""
    p = state.pressure
    lo, hi = min(i, j), max(i, j)
    donor = hi if p[hi] > p[lo] else lo
    lw, lo_ = phase_mobilities(state.saturation[donor], cfg)
    return float(lw), float(lo_)


def total_compressibility(sw, cfg: TwoPhaseConfig):
    return (cfg.rock_compressibility + (1.0 - sw) * cfg.oil_compressibility
            + sw * cfg.water_compressibility)


def _well_coeffs(state: TwoPhaseState, cfg, wells, cells, pi):
    """Well connection factors pi*lambda and the water fraction of each rate."""
    lw, lo = phase_mobilities(state.saturation[cells], cfg)
    lt = lw + lo
    inj = np.array([w.kind == "injector" for w in wells], dtype=bool)
    lam = np.where(inj, cfg.injection_mobility, lt)
    with np.errstate(divide="ignore", invalid="ignore"):
        fw = np.where(inj, 1.0, np.where(lt > 0, lw / lt, 0.0))
    return pi * lam, fw


def impes_pressure_step(state: TwoPhaseState, trans: Transmissibility, cfg: TwoPhaseConfig,
                        wells, dt=None):
    """Implicit pressure solve with lagged mobilities; returns P at n+1."""
    dt = cfg.dt if dt is None else dt
    grid = trans.grid
    p, sw = state.pressure, state.saturation
    lo, hi, _ = grid.faces()
    lw, lo_mob = phase_mobilities(sw, cfg)
    up = upwind_cells(p, lo, hi)
    lam_face = (lw + lo_mob)[up] * trans.face_values()
    flux = flux_matrix(grid, lam_face)
    accum = grid.cell_volume * cfg.porosity * total_compressibility(sw, cfg) / dt
    cells, pi, bhp = _well_arrays(grid, wells)
    coef, _ = _well_coeffs(state, cfg, wells, cells, pi)
    well_diag = np.bincount(cells, weights=coef, minlength=grid.ncell)
    matrix = (flux + sp.diags(accum + well_diag)).tocsr()
    rhs = net_flux(grid, lam_face, p)
    np.subtract.at(rhs, cells, coef * (p[cells] - bhp))
    return p + solve_spd(matrix, rhs)


def _saturation_update(state, p_new, trans, cfg, wells, dt):
    grid = trans.grid
    p, sw = state.pressure, state.saturation
    lo, hi, _ = grid.faces()
    lw, _ = phase_mobilities(sw, cfg)
    up = upwind_cells(p_new, lo, hi)
    net = net_flux(grid, lw[up] * trans.face_values(), p_new)
    cells, pi, bhp = _well_arrays(grid, wells)
    coef, fw = _well_coeffs(state, cfg, wells, cells, pi)
    q_total = coef * (p_new[cells] - bhp)
    q_water = -fw * q_total
    np.add.at(net, cells, q_water)
    pore = grid.cell_volume * cfg.porosity
    cw = cfg.rock_compressibility + cfg.water_compressibility
    s_new = sw + dt / pore * net - sw * cw * (p_new - p)
    clipped = np.clip(s_new, cfg.irreducible_water, 1.0)
    clamps = int(np.count_nonzero(np.abs(clipped - s_new) > 0))
    storage = pore * float(np.sum(clipped - sw + sw * cw * (p_new - p)))
    return clipped, clamps, q_total, q_water, storage


def impes_saturation_update(state: TwoPhaseState, p_new, trans: Transmissibility,
                            cfg: TwoPhaseConfig, wells, dt=None):
    """Explicit water-saturation update; returns (S_w at n+1, clamp count)."""
    dt = cfg.dt if dt is None else dt
    s_new, clamps, *_ = _saturation_update(state, np.asarray(p_new, float), trans, cfg, wells, dt)
    if clamps > CLAMP_WARN_FRACTION * trans.grid.ncell:
        warnings.warn(f"saturation clamped in {clamps} cells; reduce dt", RuntimeWarning,
                      stacklevel=2)
    return s_new, clamps


def initial_state(grid: Grid, cfg: TwoPhaseConfig) -> TwoPhaseState:
    s0 = cfg.irreducible_water if cfg.initial_saturation is None else cfg.initial_saturation
    return TwoPhaseState(np.full(grid.ncell, cfg.initial_pressure), np.full(grid.ncell, s0))


def simulate_two_phase(grid: Grid, k_or_t, cfg: TwoPhaseConfig, wells,
                       state: TwoPhaseState | None = None) -> TwoPhaseTrajectory:
    """Alternate implicit pressure and explicit saturation for ``cfg.num_steps``."""
    trans = _as_trans(grid, k_or_t, 1.0)
    state = initial_state(grid, cfg) if state is None else state
    n, nw = cfg.num_steps, len(wells)
    out = TwoPhaseTrajectory(np.empty((n, grid.ncell)), np.empty((n, grid.ncell)),
                             np.empty((n, nw)), np.empty((n, nw)), np.empty(n),
                             np.zeros(n, dtype=np.int64), [])
    for step in range(n):
        try:
            p_new = impes_pressure_step(state, trans, cfg, wells)
        except NumericalError as exc:
            raise NumericalError(f"two-phase step {step + 1}: {exc}", exc.residual) from exc
        s_new, clamps, q, qw, storage = _saturation_update(state, p_new, trans, cfg, wells, cfg.dt)
        if clamps > CLAMP_WARN_FRACTION * grid.ncell:
            msg = f"step {step + 1}: saturation clamped in {clamps} of {grid.ncell} cells"
            log.warning(msg)
            out.warnings.append(msg)
        state = TwoPhaseState(p_new, s_new)
        out.pressure[step] = p_new
        out.saturation[step] = s_new
        out.rates[step] = q
        out.water_rates[step] = qw
        out.water_storage[step] = storage
        out.clamp_counts[step] = clamps
    return out
