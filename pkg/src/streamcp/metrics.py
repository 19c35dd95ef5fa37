"""Per-slice scoring: relative error, rank and outlier detection quality."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import MetricError
from .tensor import cp_reconstruct


@dataclass
class SliceScore:
    t: int
    relative_error: float
    estimated_rank: int
    precision: Optional[float] = None
    recall: Optional[float] = None
    burn_in: bool = False


def relative_error(x_t, state, slot, s_bar=None, mask=None):
    """``||X_t - [[A; a_slot]] - S||_F / ||X_t||_F`` with posterior means.

    ``s_bar`` is an ObservationSet of sparse means, applied only on its own
    entries.  When ``mask`` is given both norms run over the masked entries
    only.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    resid = x_t - cp_reconstruct([f.means for f in state.factors], slot)
    if s_bar is not None and len(s_bar):
        resid[tuple(s_bar.indices.T)] -= s_bar.values
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        resid = resid[mask]
        x_t = x_t[mask]
    denom = float(np.linalg.norm(x_t))
    if denom == 0.0:
        raise MetricError("relative error undefined for a zero-norm slice")
    return float(np.linalg.norm(resid)) / denom


def observed_relative_error(y, state, slot, s_bar=None):
    """Relative error restricted to the observed entries of ``y``."""
    return relative_error(y.to_dense(), state, slot, s_bar, mask=y.mask())


def estimated_rank(state):
    return state.rank


def flag_outliers(s_bar, tau_mean, threshold=3.0):
    """Boolean flags ``|S| > threshold / sqrt(E[tau])`` aligned with ``s_bar``."""
    if not threshold > 0:
        raise MetricError("threshold must be positive")
    return np.abs(s_bar.values) > threshold / np.sqrt(float(tau_mean))


def outlier_scores(s_bar, truth, tau_mean, threshold=3.0):
    """Precision and recall of flagged entries against injected outliers.

    ``truth`` is an ``(M, N)`` array of outlier coordinates; only those inside
    ``s_bar``'s index set can be detected and count toward recall.  With no
    flags precision is reported as 1.0; with no detectable outliers recall is
    1.0.
    """
    if truth is None:
        raise MetricError("outlier scores need ground-truth outlier records")
    flags = flag_outliers(s_bar, tau_mean, threshold)
    truth = np.asarray(truth, dtype=np.int64).reshape(-1, s_bar.order)
    truth_flat = np.ravel_multi_index(tuple(truth.T), s_bar.shape) if len(truth) else np.zeros(0, np.int64)
    is_true = np.isin(s_bar.flat_indices(), truth_flat)
    hits = int(np.sum(flags & is_true))
    precision = hits / int(flags.sum()) if flags.any() else 1.0
    recall = hits / int(is_true.sum()) if is_true.any() else 1.0
    return precision, recall
