"""Principal component encoder/decoder for parameter fields."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, InvalidData


@dataclass(frozen=True)
class PCAModel:
    components: np.ndarray  # (D, k), orthonormal columns
    mean: np.ndarray  # (D,)
    eigenvalues: np.ndarray  # (k,), descending
    threshold: float
    total_variance: float

    @property
    def dim(self) -> int:
        return self.components.shape[1]


def fit_pca(x, threshold: float = 0.95) -> PCAModel:
    """Keep the fewest components whose eigenvalues reach ``threshold`` of the total variance.

    Eigenvalues are those of the sample covariance (divisor N-1), taken from
    the SVD of the centred data matrix.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidArgument("need an N x D sample matrix with N >= 2")
    if not 0 < threshold <= 1:
        raise InvalidArgument("threshold must lie in (0, 1]")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    lam = s ** 2 / (x.shape[0] - 1)
    total = lam.sum()
    # drop directions at rounding level so that threshold 1 gives the numerical rank
    nonzero = lam > lam[0] * 1e-24 if total > 0 else np.zeros_like(lam, dtype=bool)
    if not nonzero.any():
        raise InvalidData("all samples are identical; no principal direction")
    lam, vt = lam[nonzero], vt[nonzero]
    frac = np.cumsum(lam) / lam.sum()
    k = min(int(np.searchsorted(frac, threshold)) + 1, len(lam))
    return PCAModel(vt[:k].T.copy(), mean, lam[:k].copy(), threshold, float(total))


def pca_encode(model: PCAModel, x) -> np.ndarray:
    """``z = W^T (x - mean)``; accepts one field or a stack of them."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.mean.shape[0]:
        raise InvalidArgument(f"expected fields of length {model.mean.shape[0]}")
    return (x - model.mean) @ model.components


def pca_decode(model: PCAModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.dim:
        raise InvalidArgument(f"expected latent codes of length {model.dim}")
    return z @ model.components.T + model.mean
