"""Network input channels and label tensors built from cell fields.

Layouts (``C`` channels of an ``H x W = ny x nx`` image):

* ``perm``: ``log10 K``; one channel per layer.
* ``trans``: face transmissibility toward +x, -x, +y, -y, +z, -z for every
  cell (zero where the face is a boundary). 2D grids keep the first four
  directions; 3D grids fold depth into channels as ``c = 6 * z + direction``.

Labels fold depth the same way: channel ``c = field * nz + z`` with fields
ordered (pressure, water saturation).
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidArgument
from .grid import Grid
from .single_phase import assemble_transmissibility

FEATURES = ("perm", "trans")


def num_input_channels(grid: Grid, feature: str) -> int:
    if feature == "perm":
        return grid.nz
    if feature == "trans":
        return 4 if grid.ndim == 2 else 6 * grid.nz
    raise InvalidArgument(f"unknown feature {feature!r}")


def build_input_channels(grid: Grid, perm, viscosity: float = 1.0, feature: str = "trans"):
    """Channels ``[C, ny, nx]`` for one permeability field (length ``ncell``)."""
    perm = np.asarray(perm, dtype=float)
    if perm.shape != (grid.ncell,):
        raise InvalidArgument(f"expected {grid.ncell} permeability values")
    if feature == "perm":
        if np.any(perm <= 0):
            raise InvalidArgument("log-permeability needs K > 0")
        return np.log10(perm).reshape(grid.nz, grid.ny, grid.nx)
    if feature != "trans":
        raise InvalidArgument(f"unknown feature {feature!r}")
    t = assemble_transmissibility(grid, perm, viscosity).values  # (ncell, 6)
    ndir = 4 if grid.ndim == 2 else 6
    # (z, y, x, dir) -> (z, dir, y, x) -> (z * ndir + dir, y, x)
    t = t[:, :ndir].reshape(grid.nz, grid.ny, grid.nx, ndir).transpose(0, 3, 1, 2)
    return t.reshape(grid.nz * ndir, grid.ny, grid.nx).copy()


def build_inputs(grid: Grid, perms, viscosity: float = 1.0, feature: str = "trans"):
    """Stack of channels ``[N, C, ny, nx]``."""
    perms = np.atleast_2d(np.asarray(perms, dtype=float))
    return np.stack([build_input_channels(grid, k, viscosity, feature) for k in perms])


def fold_labels(grid: Grid, *fields):
    """Label tensor ``[M, O, ny, nx]`` from per-field trajectories ``(M, ncell)``."""
    out = [np.asarray(f, dtype=float).reshape(len(f), grid.nz, grid.ny, grid.nx) for f in fields]
    return np.concatenate(out, axis=1)


def unfold_labels(grid: Grid, labels, num_fields: int):
    """Inverse of ``fold_labels``: ``num_fields`` arrays ``(..., M, ncell)``."""
    labels = np.asarray(labels)
    lead = labels.shape[:-3]
    per = labels.reshape(*lead, num_fields, grid.nz, grid.ny, grid.nx)
    return [per[..., f, :, :, :].reshape(*lead, grid.ncell) for f in range(num_fields)]
