"""Residual-driven adaptive sampling around an operator network.

New permeability fields are proposed in a PCA latent space of log-permeability:
training codes are resampled with weights proportional to the per-sample
residual, a BIC-selected Gaussian mixture is fitted to the resampled codes,
and fresh codes drawn from it are decoded and exponentiated.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DarcyOpError, InvalidArgument
from .gmm import GMMModel, fit_gmm_em, sample_gmm, select_gmm
from .network import Normalization, OperatorNet, TrainConfig, Trainer, TrainingSet, predict
from .pca import PCAModel, fit_pca, pca_decode, pca_encode

STRATEGIES = ("random", "rar", "gmm")


@dataclass(frozen=True)
class SamplerConfig:
    strategy: str = "gmm"
    interval: int = 10  # training iterations between sampling events
    events: int = 10
    per_event: int = 20
    components: tuple = tuple(range(1, 9))
    variance_threshold: float = 0.95
    standard_bic: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InvalidArgument(f"unknown sampling strategy {self.strategy!r}")
        if self.per_event < 1 or self.interval < 1 or self.events < 0:
            raise InvalidArgument("per_event and interval must be >= 1, events >= 0")
        if not self.components:
            raise InvalidArgument("candidate component set is empty")


def compute_residuals(pred, labels) -> np.ndarray:
    """Per-sample mean squared error over times and cells, shape (N,)."""
    pred, labels = np.asarray(pred), np.asarray(labels)
    if pred.shape != labels.shape:
        raise InvalidArgument(f"shape mismatch {pred.shape} vs {labels.shape}")
    return ((pred - labels) ** 2).reshape(len(pred), -1).mean(axis=1)


def model_residuals(model: OperatorNet, inputs, labels, times) -> np.ndarray:
    """Residuals of ``model`` on normalized inputs/labels ``[N, M, O, H, W]``."""
    return compute_residuals(predict(model, inputs, times), labels)


def systematic_resample(points, weights, m_out: int, seed: int = 0, u1=None):
    """Systematic resampling; returns ``(points[idx], idx)``.

    ``u_i = u1 + (i - 1) / m_out`` with ``u1`` uniform on (0, 1/m_out]; sample
    j is emitted for every ``u_i`` in ``(c_{j-1}, c_j]``.
    """
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidArgument("weights must be finite and >= 0")
    if w.sum() <= 0:
        raise InvalidArgument("weights are all zero")
    if m_out < 1:
        raise InvalidArgument("m_out must be >= 1")
    cum = np.cumsum(w / w.sum())
    cum[-1] = 1.0
    if u1 is None:
        u1 = (1.0 - np.random.default_rng(seed).random()) / m_out
    u = u1 + np.arange(m_out) / m_out
    idx = np.minimum(np.searchsorted(cum, u, side="left"), len(w) - 1)
    return np.asarray(points)[idx], idx


def rar_select(residuals, k: int) -> np.ndarray:
    """Indices of the ``k`` largest residuals, ties to the lower index, in rank order."""
    r = np.asarray(residuals, dtype=float)
    if not 0 <= k <= len(r):
        raise InvalidArgument(f"cannot select {k} of {len(r)} candidates")
    return np.argsort(-r, kind="stable")[:k]


@dataclass
class Proposal:
    perm: np.ndarray  # (count, ncell), physical
    latent: np.ndarray
    gmm: GMMModel
    pca: PCAModel
    resampled: np.ndarray  # indices into the training set


def propose_new_samples(log_perm, residuals, count: int, cfg: SamplerConfig, seed: int = 0,
                        pca: PCAModel | None = None) -> Proposal:
    """Propose ``count`` permeability fields concentrated where residuals are large.

    ``log_perm`` holds natural-log permeability of the training set (N, ncell).
    """
    log_perm = np.asarray(log_perm, dtype=float)
    if pca is None:
        pca = fit_pca(log_perm, cfg.variance_threshold)
    z = pca_encode(pca, log_perm)
    weights = np.asarray(residuals, dtype=float)
    if weights.sum() <= 0:
        weights = np.ones(len(z))  # a perfect fit carries no preference
    codes, idx = systematic_resample(z, weights, len(z), seed)
    if len(np.unique(codes, axis=0)) == 1:
        gmm = fit_gmm_em(codes, 1, seed)
    else:
        gmm = select_gmm(codes, cfg.components, seed, cfg.standard_bic)
    latent = sample_gmm(gmm, count, seed + 1)
    return Proposal(np.exp(pca_decode(pca, latent)), latent, gmm, pca, idx)


@dataclass
class Samples:
    """Permeability fields with physical labels ``[N, M, O, H, W]``."""

    perm: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.perm)

    def subset(self, idx):
        return Samples(self.perm[idx], self.labels[idx])


@dataclass
class GrowthLog:
    iterations: list = field(default_factory=list)
    sizes: list = field(default_factory=list)
    added: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    mean_residual: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    sampling_seconds: float = 0.0  # wall clock, kept out of to_dict

    def to_dict(self):
        return {k: list(getattr(self, k)) for k in
                ("iterations", "sizes", "added", "skipped", "mean_residual")}


def _label_all(perms, labeler, log: GrowthLog):
    keep, labels, skipped = [], [], 0
    for k in perms:
        try:
            labels.append(labeler(k))
            keep.append(k)
        except (DarcyOpError, ArithmeticError, ValueError) as err:
            warnings.warn(f"labeling failed, sample skipped: {err}", RuntimeWarning, stacklevel=3)
            skipped += 1
    log.skipped.append(skipped)
    if not keep:
        return None
    return Samples(np.array(keep), np.array(labels))


def adaptive_training_loop(model: OperatorNet, initial: Samples, times, featurize: Callable,
                           labeler: Callable, cfg: SamplerConfig, train_cfg: TrainConfig,
                           draw_field: Callable | None = None, pool: Samples | None = None,
                           stats: Normalization | None = None):
    """Train ``model`` while growing the training set every ``cfg.interval`` iterations.

    ``featurize(perm)`` maps fields (n, ncell) to raw input channels
    ``[n, C, H, W]``; ``labeler(k)`` returns physical labels ``[M, O, H, W]``
    for one field or raises. The random strategy needs ``draw_field(seed)``;
    RAR needs a labeled candidate ``pool``. Normalization statistics are fitted
    on the initial set only. Returns ``(model, training samples, stats, log)``.
    """
    if len(initial) < 2:
        raise InvalidArgument("the initial set needs at least 2 samples")
    if cfg.strategy == "random" and draw_field is None and cfg.events:
        raise InvalidArgument("random sampling needs a field generator")
    if cfg.strategy == "rar" and pool is None and cfg.events:
        raise InvalidArgument("RAR needs a labeled candidate pool")
    times = np.asarray(times)
    raw_inputs = featurize(initial.perm)
    if stats is None:
        stats = Normalization.fit(raw_inputs, initial.labels)
    samples = Samples(initial.perm.copy(), initial.labels.copy())
    data = TrainingSet(stats.normalize_inputs(raw_inputs), stats.normalize_outputs(initial.labels),
                       times)
    trainer = Trainer(model, train_cfg)
    rng = np.random.default_rng(cfg.seed)
    log = GrowthLog()
    taken = np.zeros(len(pool) if pool is not None else 0, dtype=bool)
    events_done = 0
    for it in range(train_cfg.total_steps):
        if it > 0 and it % cfg.interval == 0 and events_done < cfg.events:
            event_seed = int(rng.integers(2 ** 31))
            start = time.perf_counter()
            new, mean_res = _sampling_event(model, samples, data, times, labeler, cfg,
                                            event_seed, draw_field, pool, taken, stats, featurize,
                                            log)
            events_done += 1
            if new is not None:
                samples = Samples(np.concatenate([samples.perm, new.perm]),
                                  np.concatenate([samples.labels, new.labels]))
                data.extend(stats.normalize_inputs(featurize(new.perm)),
                            stats.normalize_outputs(new.labels))
            log.iterations.append(it)
            log.sizes.append(len(samples))
            log.added.append(0 if new is None else len(new))
            log.mean_residual.append(mean_res)
            log.sampling_seconds += time.perf_counter() - start
        trainer.step(data)
    log.losses = trainer.history
    return model, samples, stats, log


def _sampling_event(model, samples, data, times, labeler, cfg, seed, draw_field, pool, taken,
                    stats, featurize, log):
    m = cfg.per_event
    residuals = model_residuals(model, data.inputs, data.labels, times)
    if cfg.strategy == "random":
        fields = [draw_field(s) for s in np.random.default_rng(seed).integers(2 ** 31, size=m)]
        return _label_all(fields, labeler, log), float(residuals.mean())
    if cfg.strategy == "rar":
        free = np.flatnonzero(~taken)
        cand = pool.subset(free)
        r = model_residuals(model, stats.normalize_inputs(featurize(cand.perm)),
                            stats.normalize_outputs(cand.labels), times)
        pick = free[rar_select(r, min(m, len(free)))]
        taken[pick] = True
        log.skipped.append(0)
        return (pool.subset(pick) if len(pick) else None), float(residuals.mean())
    proposal = propose_new_samples(np.log(samples.perm), residuals, m, cfg, seed)
    return _label_all(list(proposal.perm), labeler, log), float(residuals.mean())
