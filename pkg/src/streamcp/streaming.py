"""Sliding-window driver for streams of partially observed slices."""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import RunConfig
from .engine import FitReport, elbo, fit_window
from .exceptions import ArgumentError, IngestionError, StateError
from .metrics import observed_relative_error, relative_error
from .model import init_state, robust_scale, robust_screen
from .tensor import ObservationSet, cp_reconstruct

log = logging.getLogger(__name__)


@dataclass(eq=False)
class SlidingWindow:
    """Cleaned past slices plus the raw current slice.

    ``past`` holds ``(t, D~_t)`` pairs, oldest first; ``current`` is ``(T, Y)``.
    ``raw`` mirrors ``past`` with the uncleaned observations.  While
    ``robust_history`` is set the solver fits the raw past with a sparse term
    on every entry.
    """

    capacity: int
    mu: float = 0.98
    past: list = field(default_factory=list)
    raw: list = field(default_factory=list)
    current: Optional[tuple] = None
    version: int = 0
    robust_history: bool = False

    def __len__(self):
        return len(self.past) + (self.current is not None)

    def touch(self):
        self.version += 1

    def times(self):
        return [t for t, _ in self.past] + ([self.current[0]] if self.current else [])


@dataclass
class SliceResult:
    t: int
    reconstruction: Optional[ObservationSet] = None
    sparse: Optional[ObservationSet] = None
    relative_error: Optional[float] = None
    observed_error: Optional[float] = None
    estimated_rank: int = 0
    report: FitReport = field(default_factory=FitReport)
    burn_in: bool = False
    skipped: bool = False
    warning: str = ""


class StreamDriver:
    """Owns one model state and one window; slices go in through :meth:`ingest_slice`."""

    def __init__(self, config=None, seed=None):
        self.config = config or RunConfig()
        self.seed = self.config.seed if seed is None else seed
        self.window = SlidingWindow(self.config.window, self.config.mu)
        self.state = None
        self.shape = None
        self.n_ingested = 0

    @property
    def current_slot(self):
        return len(self.window) - 1

    def commit_slice(self):
        """Move the fitted current slice into the past as ``Y - E[S]``."""
        if self.state is None or self.window.current is None:
            raise StateError("no fitted current slice to commit")
        t, y = self.window.current
        cleaned = y.with_values(y.values - self.state.sparse_mean)
        self.window.past.append((t, cleaned))
        self.window.raw.append((t, y))
        self.window.current = None
        self.window.touch()
        return cleaned

    def _advance(self, y):
        state, window = self.state, self.window
        t_prev = window.current[0]
        warm_row = state.factors[-1].means[-1].copy()
        self.commit_slice()
        temporal = state.factors[-1]
        if len(window.past) > window.capacity - 1:
            window.past.pop(0)
            window.raw.pop(0)
            temporal.means = temporal.means[1:]
            temporal.covs = temporal.covs[1:]
        R = state.rank
        temporal.means = np.vstack([temporal.means, warm_row])
        temporal.covs = np.concatenate([temporal.covs, np.eye(R)[None]])
        slot = temporal.rows - 1
        prediction = cp_reconstruct([f.means for f in state.factors], slot)[tuple(y.indices.T)]
        state.reset_sparse(len(y), y.values - prediction, self.config.sparse_screen)
        window.current = (t_prev + 1, y)
        window.touch()

    def ingest_slice(self, y, truth=None):
        """Fit the next slice and return its result.

        ``truth`` optionally gives the dense ground-truth slice used for the
        full relative error.  Slices without observations are skipped and do
        not advance time.
        """
        if not isinstance(y, ObservationSet):
            raise IngestionError("slice must be an ObservationSet")
        if self.shape is not None and y.shape != self.shape:
            raise IngestionError(f"slice shape {y.shape} does not match stream shape {self.shape}")
        t_next = self.window.current[0] + 1 if self.window.current else 0
        if len(y) == 0:
            msg = f"slice {t_next} has no observed entries; skipped"
            log.warning(msg)
            return SliceResult(t=t_next, skipped=True, warning=msg,
                               estimated_rank=self.state.rank if self.state else 0)
        cfg = self.config
        if self.state is None:
            self.shape = y.shape
            self.window.current = (0, y)
            self.window.touch()
            if cfg.burn_in_restarts and cfg.burn_in > 0:
                report = self._restart(y)
            else:
                self.state = init_state(cfg, y, self.seed)
                report = self._fit(self.state, cfg.max_iter_first, fresh=True)
        else:
            self._advance(y)
            restart = cfg.cold_start or (cfg.burn_in_restarts and self.n_ingested < cfg.burn_in)
            report = self._restart(y) if restart else self._fit(self.state, cfg.max_iter_stream)
        state = self.state
        self.n_ingested += 1
        slot = self.current_slot
        T = self.window.current[0]
        recon = cp_reconstruct([f.means for f in state.factors], slot)
        s_bar = y.with_values(state.sparse_mean)
        result = SliceResult(
            t=T,
            reconstruction=y.with_values(recon[tuple(y.indices.T)]),
            sparse=s_bar,
            observed_error=_safe(observed_relative_error, y, state, slot, s_bar),
            estimated_rank=state.rank,
            report=report,
            burn_in=self.n_ingested <= cfg.burn_in,
        )
        if truth is not None:
            result.relative_error = _safe(relative_error, truth, state, slot, s_bar)
        return result

    def _window_slices(self):
        return [d for _, d in self.window.past] + [self.window.current[1]]

    def _window_residual(self, state):
        """``y - prediction`` over every raw window entry, oldest slice first."""
        means = [f.means for f in state.factors]
        slices = [y for _, y in self.window.raw] + [self.window.current[1]]
        return np.concatenate(
            [y.values - cp_reconstruct(means, slot)[tuple(y.indices.T)] for slot, y in enumerate(slices)]
        )

    def _restart(self, y):
        """Batch robust refit of the whole window from several starting points.

        Every window entry gets a sparse term and past slices are read raw.
        Candidates are the warm state, whose earlier outlier estimates seed
        the past entries, and ``restart_candidates`` fresh initializations
        whose outliers are seeded by screening the raw values at
        ``value_screen``.  Each candidate is fitted ``restart_rounds + 1``
        times; between fits the outliers are re-seeded where its residual is
        more than ``restart_screen`` robust deviations of the raw values from
        the median residual, stopping early once the flagged set repeats.
        The candidate with the highest bound
        wins, and its sparse means rebuild every past ``D~`` as
        ``raw - E[S]``.
        """
        cfg, window = self.config, self.window
        window.robust_history = True
        window.touch()
        try:
            values = np.concatenate([r.values for _, r in window.raw] + [y.values])
            scale = robust_scale(values)
            candidates = []
            if self.state is not None and not cfg.cold_start:
                warm = self.state
                earlier = [r.values - d.values for (_, r), (_, d) in zip(window.raw, window.past)]
                warm.reset_sparse(values.shape[0], outliers=np.concatenate(earlier + [warm.sparse_mean]))
                candidates.append((warm, False))
            for k in range(cfg.restart_candidates):
                cand = init_state(cfg, y, [self.seed, self.n_ingested, k], window_rows=len(window))
                if self.state is not None:
                    cand.data_variance = self.state.data_variance
                cand.reset_sparse(values.shape[0], values, cfg.value_screen)
                candidates.append((cand, True))
            best, best_report, best_bound = None, None, -np.inf
            for cand, fresh in candidates:
                flags = cand.sparse_mean != 0
                for r in range(cfg.restart_rounds + 1):
                    if r:
                        screened, centred = robust_screen(self._window_residual(cand), cfg.restart_screen, scale)
                        if np.array_equal(screened, flags):
                            break
                        flags = screened
                        cand.reset_sparse(values.shape[0], outliers=np.where(flags, centred, 0.0))
                    report = self._fit(cand, cfg.max_iter_first, fresh=fresh and not r)
                bound = elbo(cand, window)
                log.debug("slice %d: %s candidate rank %d, E[tau] %.4g, bound %.6g", window.current[0],
                          "fresh" if fresh else "warm", cand.rank, cand.tau.mean, bound)
                if best is None or bound > best_bound:
                    best, best_report, best_bound = cand, report, bound
            offset = 0
            for slot, (t, raw) in enumerate(window.raw):
                n = len(raw)
                window.past[slot] = (t, raw.with_values(raw.values - best.sparse_mean[offset:offset + n]))
                offset += n
            best.keep_sparse_tail(len(y))
            self.state = best
        finally:
            window.robust_history = False
            window.touch()
        return best_report

    def _fit(self, state, max_iter, fresh=False):
        cfg = self.config
        _, report = fit_window(
            state,
            self.window,
            tol=cfg.tol,
            max_iter=max_iter,
            prune_interval=cfg.prune_interval,
            prune_threshold=cfg.prune_threshold * state.data_variance,
            tau_warmup=cfg.tau_warmup if fresh else 0,
        )
        return report

    def predict_slice(self, slot=None):
        if self.state is None:
            raise StateError("nothing ingested yet")
        return predict_slice(self.state, self.current_slot if slot is None else slot)


def _safe(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ValueError:
        return None


def predict_slice(state, slot):
    """Dense low-rank estimate of window slot ``slot`` from posterior means."""
    if not 0 <= slot < state.window_rows:
        raise ArgumentError(f"slot {slot} outside window of {state.window_rows}")
    return cp_reconstruct([f.means for f in state.factors], slot)


def ingest_slice(driver, y, truth=None):
    """Functional form of :meth:`StreamDriver.ingest_slice`."""
    return driver.ingest_slice(y, truth=truth)


def commit_slice(driver):
    """Functional form of :meth:`StreamDriver.commit_slice`."""
    return driver.commit_slice()
