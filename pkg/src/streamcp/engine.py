"""Mean-field coordinate-ascent solver.

Every update works on a :class:`~streamcp.model.ModelState` in place and reads
the freshest value of every other block.  One sweep of :func:`run_iteration`
updates the non-temporal factors, the temporal factor, the rank precisions,
the sparse term, its precisions and the noise precision, in that order.

The window argument is any object with ``past`` (list of ``(t, ObservationSet)``
holding outlier-cleaned history, oldest first) and ``current`` (``(T,
ObservationSet)``); see :class:`streamcp.streaming.SlidingWindow`.  When the
window also has ``robust_history`` set, the past is read from its ``raw``
slices instead and every window entry carries a sparse term, which turns a fit
into a batch robust fit of the whole window.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import kernels
from .model import GammaParams
from .tensor import spd_inverse

log = logging.getLogger(__name__)

_LN2PI = math.log(2.0 * math.pi)


@dataclass
class FitReport:
    iterations: int = 0
    converged: bool = False
    relative_change: float = math.inf
    data_fit: list = field(default_factory=list)
    final_rank: int = 0


@dataclass
class _Layout:
    rows: np.ndarray  # (K, N + 1) stacked row ids, temporal slot last
    weights: np.ndarray  # mu ** (T - t) per entry
    values: np.ndarray  # D~ for past entries, Y for current ones
    n_current: int  # current-slice entries are the trailing block
    n_sparse: int  # trailing entries that carry a sparse term
    offsets: list  # stacked row offset of each mode


def _layout(state, window):
    robust = bool(getattr(window, "robust_history", False))
    slices = list(window.raw if robust else window.past) + [window.current]
    key = (getattr(window, "version", None), robust, tuple(id(obs) for _, obs in slices), state.dims, state.mu)
    cache = getattr(window, "_layout_cache", None)
    if cache is not None and cache[0] == key:
        return cache[1]
    if len(slices) != state.window_rows:
        raise ValueError(f"window holds {len(slices)} slices but temporal factor has {state.window_rows} rows")
    offsets = np.concatenate([[0], np.cumsum(state.dims)]).astype(np.int64)
    T = window.current[0]
    rows, weights, values = [], [], []
    for slot, (t, obs) in enumerate(slices):
        r = np.empty((len(obs), state.order + 1), dtype=np.int64)
        r[:, :-1] = obs.indices + offsets[:-1]
        r[:, -1] = offsets[-1] + slot
        rows.append(r)
        weights.append(np.full(len(obs), state.mu ** (T - t)))
        values.append(obs.values)
    lay = _Layout(
        rows=np.concatenate(rows),
        weights=np.concatenate(weights),
        values=np.concatenate(values),
        n_current=len(window.current[1]),
        n_sparse=sum(len(obs) for _, obs in slices) if robust else len(window.current[1]),
        offsets=list(offsets),
    )
    try:
        window._layout_cache = (key, lay)
    except AttributeError:
        pass
    return lay


def _stack(state):
    means = np.concatenate([f.means for f in state.factors])
    seconds = np.concatenate([f.second_moments() for f in state.factors])
    return means, seconds


def _targets(state, lay):
    z = lay.values.copy()
    if lay.n_sparse:
        z[-lay.n_sparse:] -= state.sparse_mean
    return z


def _solve_factor(state, lay, mode, n_out):
    means, seconds = _stack(state)
    gram, rhs = kernels.accumulate_gram(
        lay.rows, mode, lay.weights, _targets(state, lay), means, seconds, n_out, lay.offsets[mode]
    )
    tau = float(state.tau.mean)
    P = tau * gram
    P[:, np.arange(state.rank), np.arange(state.rank)] += state.lam.mean
    V, _ = spd_inverse(P, mode=mode)
    f = state.factors[mode]
    f.covs = V
    f.means = tau * np.einsum("irs,is->ir", V, rhs)


def update_nontemporal_factor(state, window, mode):
    """Row posteriors of non-temporal factor ``mode`` (0-based, ``< N``).

    Row precision is ``E[tau] * sum_k w_k E[b_k b_k^T] + E[Lambda]`` over the
    window entries touching that row; the mean solves against
    ``E[tau] * sum_k w_k z_k E[b_k]`` with ``z = Y - E[S]`` on the current
    slice and ``z = D~`` on past slices.
    """
    if not 0 <= mode < state.order:
        raise ValueError(f"non-temporal mode must be in [0, {state.order - 1}], got {mode}")
    lay = _layout(state, window)
    _solve_factor(state, lay, mode, state.dims[mode])
    return state


def update_temporal_factors(state, window):
    """Temporal rows; each slot sees only its own slice."""
    lay = _layout(state, window)
    _solve_factor(state, lay, state.order, state.window_rows)
    return state


def column_second_moments(state):
    """``E[a_r^T a_r]`` per mode and column, shape ``(N + 1, R)``."""
    return np.array(
        [(f.means**2).sum(axis=0) + np.diagonal(f.covs, axis1=1, axis2=2).sum(axis=0) for f in state.factors]
    )


def update_lambda(state):
    p = state.priors
    if state.exact_hyper_updates:
        c = p.c0 + 0.5 * (sum(state.dims) + state.window_rows)
    else:
        c = p.c0 + 1.0 + 0.5 * sum(state.dims)
    d = p.d0 + 0.5 * column_second_moments(state).sum(axis=0)
    state.lam.a = np.full(state.rank, c)
    state.lam.b = d
    return state


def _current_moments(state, lay):
    means, seconds = _stack(state)
    return kernels.entry_moments(lay.rows[lay.rows.shape[0] - lay.n_current:], means, seconds)


def _moments(state, lay):
    means, seconds = _stack(state)
    return kernels.entry_moments(lay.rows, means, seconds)


def update_sparse(state, window, moments=None):
    """Sparse posteriors; an entry of weight ``w`` sees noise precision ``w * E[tau]``.

    ``moments`` optionally passes precomputed window entry moments.
    """
    lay = _layout(state, window)
    lo = lay.rows.shape[0] - lay.n_sparse
    if moments is None:
        means, seconds = _stack(state)
        m, _ = kernels.entry_moments(lay.rows[lo:], means, seconds)
    else:
        m = moments[0][lo:]
    prec = float(state.tau.mean) * lay.weights[lo:]
    state.sparse_var = 1.0 / (state.gamma.mean + prec)
    state.sparse_mean = state.sparse_var * prec * (lay.values[lo:] - m)
    return state


def update_gamma(state):
    p = state.priors
    state.gamma = GammaParams(
        np.full(state.sparse_mean.shape, p.a0_gamma + 0.5),
        p.b0_gamma + 0.5 * (state.sparse_mean**2 + state.sparse_var),
    )
    return state


def expected_sq_residuals(state, window, moments=None):
    """Expected squared residual of every window entry under ``q``.

    Entries that carry a sparse term include its variance.
    """
    lay = _layout(state, window)
    m, e2 = _moments(state, lay) if moments is None else moments
    var_f = np.maximum(e2 - m**2, 0.0)
    z = _targets(state, lay)
    out = (z - m) ** 2 + var_f
    if lay.n_sparse:
        out[-lay.n_sparse:] += state.sparse_var
    return out, lay


def update_tau(state, window, moments=None):
    p = state.priors
    res, lay = expected_sq_residuals(state, window, moments)
    if state.exact_hyper_updates:
        a = p.a0_tau + 0.5 * res.shape[0]
        b = p.b0_tau + 0.5 * float(np.dot(lay.weights, res))
    else:
        cur = res[res.shape[0] - lay.n_current:]
        a = p.a0_tau + 0.5 * lay.n_current
        b = p.b0_tau + 0.5 * float(cur.sum())
    state.tau.a = np.asarray(a, dtype=np.float64)
    state.tau.b = np.asarray(b, dtype=np.float64)
    return state


def _sweep(state, window, noise):
    for n in range(state.order):
        update_nontemporal_factor(state, window, n)
    update_temporal_factors(state, window)
    update_lambda(state)
    # factors stay fixed for the rest of the sweep, so entry moments are shared
    moments = _moments(state, _layout(state, window))
    update_sparse(state, window, moments)
    update_gamma(state)
    if noise:
        update_tau(state, window, moments)
    return moments


def run_iteration(state, window, noise=True):
    """One full sweep; ``noise=False`` holds the noise precision fixed."""
    _sweep(state, window, noise)
    return state


def prune_ranks(state, threshold=None):
    """Drop columns whose largest per-mode mean-square is below ``threshold``.

    The default threshold is ``1e-8`` times the state's initial data variance.
    At least one column is always kept.
    """
    if threshold is None:
        threshold = 1e-8 * state.data_variance
    power = np.array([(f.means**2).sum(axis=0) / f.rows for f in state.factors]).max(axis=0)
    keep = power >= threshold
    if keep.all():
        return state
    if not keep.any():
        keep[np.argmax(power)] = True
    idx = np.flatnonzero(keep)
    log.debug("pruning rank %d -> %d", state.rank, idx.size)
    for f in state.factors:
        f.means = f.means[:, idx]
        f.covs = f.covs[:, idx][:, :, idx]
    state.lam.a = state.lam.a[idx]
    state.lam.b = state.lam.b[idx]
    return state


def fit_window(state, window, tol=1e-5, max_iter=100, prune_interval=5, prune_threshold=None,
               tau_warmup=0):
    """Iterate until the reconstruction on the current slice stops moving.

    Stops when ``||m_k - m_{k-1}|| / ||m_{k-1}|| < tol`` over the current
    observed entries or after ``max_iter`` sweeps.  Columns are pruned every
    ``prune_interval`` sweeps and once more on exit; pass
    ``prune_interval=0`` to disable pruning.
    """
    if not tol > 0 or max_iter < 1:
        raise ValueError("need tol > 0 and max_iter >= 1")
    lay = _layout(state, window)
    y = window.current[1].values
    y_norm = max(float(np.linalg.norm(y)), np.finfo(float).tiny)
    prev, _ = _current_moments(state, lay)
    report = FitReport()
    tiny = np.finfo(float).tiny
    for k in range(1, max_iter + 1):
        recon = _sweep(state, window, k > tau_warmup)[0][lay.rows.shape[0] - lay.n_current:]
        change = float(np.linalg.norm(recon - prev)) / max(float(np.linalg.norm(prev)), tiny)
        report.iterations = k
        report.relative_change = change
        s_cur = state.sparse_mean[state.sparse_mean.shape[0] - lay.n_current:]
        report.data_fit.append(float(np.linalg.norm(y - s_cur - recon)) / y_norm)
        prev = recon
        if change < tol:
            report.converged = True
            break
        if prune_interval and k % prune_interval == 0:
            prune_ranks(state, prune_threshold)
    if prune_interval:
        prune_ranks(state, prune_threshold)
    report.final_rank = state.rank
    return state, report


def elbo(state, window):
    """Evidence lower bound of the current ``q`` for the windowed model.

    Sums expected log-likelihood of the current slice (precision ``tau``) and
    the cleaned past slices (precision ``tau * mu ** (T - t)``), expected log
    priors of factors, sparse term and all Gamma hyperparameters, and the
    entropies of every variational factor.
    """
    p = state.priors
    res, lay = expected_sq_residuals(state, window)
    Etau, Elntau = float(state.tau.mean), float(state.tau.mean_log)
    lik = 0.5 * np.sum(Elntau + np.log(lay.weights) - _LN2PI - Etau * lay.weights * res)

    Elam, Ellam = state.lam.mean, state.lam.mean_log
    R = state.rank
    sq = column_second_moments(state)
    n_rows = sum(f.rows for f in state.factors)
    prior_a = 0.5 * n_rows * (Ellam.sum() - R * _LN2PI) - 0.5 * float(np.dot(Elam, sq.sum(axis=0)))
    ent_a = 0.0
    for f in state.factors:
        _, logdet = np.linalg.slogdet(f.covs)
        ent_a += 0.5 * float(logdet.sum()) + 0.5 * f.rows * R * (1.0 + _LN2PI)

    def gamma_prior(a0, b0, mean, mean_log):
        return np.sum(a0 * math.log(b0) - gammaln(a0) + (a0 - 1.0) * mean_log - b0 * mean)

    prior_lam = gamma_prior(p.c0, p.d0, Elam, Ellam)
    Egam, Elgam = state.gamma.mean, state.gamma.mean_log
    prior_s = 0.5 * np.sum(Elgam - _LN2PI - Egam * (state.sparse_mean**2 + state.sparse_var))
    ent_s = 0.5 * np.sum(np.log(state.sparse_var) + 1.0 + _LN2PI)
    prior_gam = gamma_prior(p.a0_gamma, p.b0_gamma, Egam, Elgam)
    prior_tau = gamma_prior(p.a0_tau, p.b0_tau, Etau, Elntau)
    entropies = state.lam.entropy().sum() + state.gamma.entropy().sum() + state.tau.entropy().sum()
    return float(lik + prior_a + ent_a + prior_lam + prior_s + ent_s + prior_gam + prior_tau + entropies)
