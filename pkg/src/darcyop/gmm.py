"""Full-covariance Gaussian mixtures: EM fitting, BIC selection and sampling."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidArgument, InvalidData

RIDGE = 1e-6
RIDGE_FLOOR = 1e-12


@dataclass
class GMMModel:
    weights: np.ndarray  # (m,)
    means: np.ndarray  # (m, n)
    covariances: np.ndarray  # (m, n, n)
    log_likelihood: float = float("nan")
    history: list = field(default_factory=list)  # log-likelihood before every M-step
    degenerate: bool = False

    @property
    def m(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _ridge(data) -> float:
    n = data.shape[1]
    trace = float(np.trace(np.atleast_2d(np.cov(data, rowvar=False)))) if len(data) > 1 else 0.0
    return RIDGE * trace / n if trace > 0 else RIDGE_FLOOR


def component_log_pdf(data, means, covariances) -> np.ndarray:
    """``log N(x_i | mu_j, Sigma_j)`` as an (N, m) array."""
    n = data.shape[1]
    out = np.empty((data.shape[0], len(means)))
    for j, (mu, cov) in enumerate(zip(means, covariances)):
        chol = np.linalg.cholesky(cov)
        sol = np.linalg.solve(chol, (data - mu).T)
        logdet = 2 * np.log(np.diag(chol)).sum()
        out[:, j] = -0.5 * (np.sum(sol ** 2, axis=0) + logdet + n * np.log(2 * np.pi))
    return out


def log_density(gmm: GMMModel, data) -> np.ndarray:
    data = np.atleast_2d(np.asarray(data, dtype=float))
    with np.errstate(divide="ignore"):
        logw = np.log(gmm.weights)
    return logsumexp(component_log_pdf(data, gmm.means, gmm.covariances) + logw, axis=1)


def total_log_likelihood(gmm: GMMModel, data) -> float:
    return float(log_density(gmm, data).sum())


def _expected_loglik(scatter, cov) -> float:
    """Per-point expected complete-data log-likelihood, up to constants."""
    chol = np.linalg.cholesky(cov)
    inv = np.linalg.solve(chol, np.linalg.solve(chol, scatter).T)
    return -np.log(np.diag(chol)).sum() - 0.5 * np.trace(inv)


def fit_gmm_em(data, m: int, seed: int = 0, tol: float = 1e-8, max_iter: int = 500) -> GMMModel:
    """EM from ``m`` distinct data points as initial means.

    Every covariance update adds ``RIDGE * trace(C) / n`` to the diagonal,
    with ``C`` the covariance of the whole data set. Stops once the
    log-likelihood gains less than ``tol``.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    npts, n = data.shape
    if m < 1 or npts < m:
        raise InvalidArgument(f"cannot fit {m} components to {npts} points")
    ridge = _ridge(data) * np.eye(n)
    distinct = np.unique(data, axis=0)
    if len(distinct) == 1:
        return GMMModel(np.ones(1), distinct.copy(), ridge[None].copy(),
                        total_log_likelihood(GMMModel(np.ones(1), distinct, ridge[None]), data),
                        degenerate=True)
    if len(distinct) < m:
        raise InvalidArgument(f"only {len(distinct)} distinct points for {m} components")

    rng = np.random.default_rng(seed)
    means = distinct[np.sort(rng.choice(len(distinct), size=m, replace=False))].copy()
    base = np.atleast_2d(np.cov(data, rowvar=False)) + ridge
    covs = np.repeat(base[None], m, axis=0)
    weights = np.full(m, 1.0 / m)
    history = []
    for _ in range(max_iter):
        joint = component_log_pdf(data, means, covs) + np.log(weights)
        norm = logsumexp(joint, axis=1)
        ll = float(norm.sum())
        if history and ll - history[-1] < tol:
            history.append(ll)
            break
        history.append(ll)
        resp = np.exp(joint - norm[:, None])
        nk = resp.sum(axis=0)
        # a component that lost all points keeps its previous parameters
        alive = nk > 0
        weights = nk / npts
        for j in np.flatnonzero(alive):
            mu = resp[:, j] @ data / nk[j]
            diff = data - mu
            scatter = (resp[:, j, None] * diff).T @ diff / nk[j]
            means[j] = mu
            # the ridged scatter is not the exact maximizer, so keep the old
            # covariance when it scores higher (generalized EM stays monotone)
            ridged = scatter + ridge
            if _expected_loglik(scatter, ridged) >= _expected_loglik(scatter, covs[j]):
                covs[j] = ridged
    gmm = GMMModel(weights, means, covs, history=history)
    gmm.log_likelihood = total_log_likelihood(gmm, data)
    return gmm


def parameter_count(m: int, n: int, standard: bool = False) -> int:
    """Free-parameter count used by BIC.

    The default counts one location parameter per component; ``standard``
    counts the full n-vector mean.
    """
    cov = n * (n + 1) // 2
    if standard:
        return m * (n + cov) + m - 1
    return m * (1 + cov) - 1


def bic(gmm: GMMModel, data, standard: bool = False) -> float:
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    ll = total_log_likelihood(gmm, data)
    return -2 * ll + parameter_count(gmm.m, gmm.dim, standard) * np.log(len(data))


def select_gmm(data, components, seed: int = 0, standard: bool = False) -> GMMModel:
    """Fit one mixture per candidate count (seed + m) and keep the lowest BIC.

    Counts exceeding the number of distinct points are skipped; ties go to the
    smaller count.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    components = sorted(set(int(m) for m in components))
    if not components:
        raise InvalidArgument("empty set of candidate component counts")
    n_distinct = len(np.unique(data, axis=0))
    best, best_score = None, np.inf
    for m in components:
        if m > n_distinct:
            continue
        gmm = fit_gmm_em(data, m, seed + m)
        if gmm.degenerate:
            continue
        score = bic(gmm, data, standard)
        if score < best_score:
            best, best_score = gmm, score
    if best is None:
        raise InvalidData("no non-degenerate mixture could be fitted")
    return best


def sample_gmm(gmm: GMMModel, count: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    labels = rng.choice(gmm.m, size=count, p=gmm.weights / gmm.weights.sum())
    z = rng.standard_normal((count, gmm.dim))
    out = np.empty((count, gmm.dim))
    for j in range(gmm.m):
        idx = labels == j
        if idx.any():
            chol = np.linalg.cholesky(gmm.covariances[j])
            out[idx] = gmm.means[j] + z[idx] @ chol.T
    return out


def kl_divergence(p: GMMModel, q: GMMModel, count: int = 20000, seed: int = 0) -> float:
    """Monte Carlo estimate of KL(p || q) in nats."""
    x = sample_gmm(p, count, seed)
    return float(np.mean(log_density(p, x) - log_density(q, x)))
