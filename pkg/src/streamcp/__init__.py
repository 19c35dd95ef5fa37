"""Streaming robust Bayesian CP tensor factorization and completion."""

from .config import RunConfig
from .engine import FitReport, elbo, fit_window, prune_ranks, run_iteration
from .kernels import BACKEND
from .model import GammaParams, HyperPriors, ModelState, init_state, load_state, save_state
from .streaming import SlidingWindow, SliceResult, StreamDriver, predict_slice
from .tensor import FactorPosterior, ObservationSet, cp_reconstruct, khatri_rao

__version__ = "0.1.0"
