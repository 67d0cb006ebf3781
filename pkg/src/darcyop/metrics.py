"""Error metrics in physical units."""
from __future__ import annotations

import numpy as np

from .errors import InvalidArgument, UndefinedMetric

HISTOGRAM_BINS = 30


def relative_error(pred, label) -> float:
    """``||pred - label||_2 / ||label||_2`` over every entry of one sample."""
    pred, label = np.asarray(pred, dtype=float), np.asarray(label, dtype=float)
    if pred.shape != label.shape:
        raise InvalidArgument(f"shape mismatch {pred.shape} vs {label.shape}")
    norm = np.linalg.norm(label)
    if norm == 0:
        raise UndefinedMetric("relative error of an all-zero label is undefined")
    return float(np.linalg.norm(pred - label) / norm)


def well_block_error(pred, label, cells) -> float:
    """Relative error restricted to well cells; the last axis indexes cells."""
    cells = np.asarray(cells, dtype=int)
    if cells.size == 0:
        raise InvalidArgument("need at least one well cell")
    pred, label = np.asarray(pred), np.asarray(label)
    return relative_error(pred[..., cells], label[..., cells])


def log_histogram(errors, bins: int = HISTOGRAM_BINS) -> dict:
    """Histogram of log10 per-sample errors; zero errors are counted separately."""
    errors = np.asarray(errors, dtype=float)
    positive = errors[errors > 0]
    if positive.size:
        logs = np.log10(positive)
        lo, hi = logs.min(), logs.max()
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        counts, edges = np.histogram(logs, bins=bins, range=(lo, hi))
    else:
        counts, edges = np.zeros(bins, dtype=int), np.linspace(-1, 0, bins + 1)
    return {"log10_edges": edges.tolist(), "counts": counts.astype(int).tolist(),
            "zero_errors": int(errors.size - positive.size)}
