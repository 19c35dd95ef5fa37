"""Probabilistic model state: priors, hyperpriors and posterior containers."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import digamma, gammaln

from .exceptions import FormatError, InitializationError
from .tensor import FactorPosterior

CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class GammaParams:
    """Gamma distribution(s) with shape ``a`` and rate ``b``.

    ``a`` and ``b`` may be scalars or equal-length arrays (one Gamma per element).
    """

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if np.any(~(self.a > 0)) or np.any(~(self.b > 0)):
            raise ValueError("Gamma parameters must be positive")

    @property
    def mean(self):
        return self.a / self.b

    @property
    def variance(self):
        return self.a / self.b**2

    @property
    def mean_log(self):
        return digamma(self.a) - np.log(self.b)

    def entropy(self):
        return self.a - np.log(self.b) + gammaln(self.a) + (1.0 - self.a) * digamma(self.a)

    def copy(self):
        return GammaParams(self.a.copy(), self.b.copy())


def gamma_mean(p):
    return p.mean


@dataclass(frozen=True)
class HyperPriors:
    a0_tau: float = 1e-6
    b0_tau: float = 1e-6
    c0: float = 1e-6
    d0: float = 1e-6
    a0_gamma: float = 1e-6
    b0_gamma: float = 1e-12

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"hyperprior {name} must be positive, got {value}")


def robust_scale(x):
    """``1.4826 * MAD(x)``, the standard deviation for Gaussian data."""
    x = np.asarray(x, dtype=np.float64)
    return 1.4826 * float(np.median(np.abs(x - np.median(x)))) if x.size else 0.0


def robust_screen(residual, threshold, scale=None):
    """Flag entries more than ``threshold * scale`` from the median.

    ``scale`` defaults to the residual's own :func:`robust_scale`.  Returns
    the flags and the median-centred residual.
    """
    r = np.asarray(residual, dtype=np.float64)
    if r.size == 0:
        return np.zeros(0, dtype=bool), r
    r = r - np.median(r)
    if scale is None:
        scale = robust_scale(r)
    return np.abs(r) > threshold * scale, r


@dataclass(eq=False)
class ModelState:
    """All posterior factors of the variational approximation.

    ``factors[:-1]`` are the non-temporal modes; ``factors[-1]`` is the
    temporal factor whose rows map to window slots, oldest first.  The sparse
    and gamma-field arrays are aligned with the current slice's observations.
    """

    factors: list
    lam: GammaParams
    sparse_mean: np.ndarray
    sparse_var: np.ndarray
    gamma: GammaParams
    tau: GammaParams
    priors: HyperPriors = field(default_factory=HyperPriors)
    mu: float = 0.98
    data_variance: float = 1.0
    exact_hyper_updates: bool = False
    sparse_precision_ratio: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.mu <= 1.0:
            raise ValueError(f"forgetting factor must be in (0, 1], got {self.mu}")
        ranks = {f.rank for f in self.factors}
        if len(ranks) != 1 or self.lam.a.shape != (self.rank,):
            raise ValueError("factor posteriors and rank prior disagree on the rank")

    @property
    def rank(self):
        return self.factors[0].rank

    @property
    def order(self):
        """Number of non-temporal modes."""
        return len(self.factors) - 1

    @property
    def dims(self):
        return tuple(f.rows for f in self.factors[:-1])

    @property
    def window_rows(self):
        return self.factors[-1].rows

    def reset_sparse(self, n_obs, residual=None, screen=0.0, outliers=None, scale=None):
        """Fresh sparse and gamma-field posteriors for ``n_obs`` entries.

        By default sparse means start at zero and every outlier precision at
        ``sparse_precision_ratio * E[tau]``.  Entries given a nonzero value in
        ``outliers`` start as outliers instead: their sparse mean is that
        value and their precision follows the gamma-field update.  Without
        ``outliers`` but given the residual ``y - prediction`` and
        ``screen > 0``, the outliers are the entries further than ``screen``
        robust standard deviations (``1.4826 * MAD``) from the median
        residual, valued at the centred residual; ``scale`` replaces the
        residual's own robust deviation.
        """
        p = self.priors
        tau = float(self.tau.mean)
        a = p.a0_gamma + 0.5
        target = self.sparse_precision_ratio * tau
        b = np.full(n_obs, a / target)
        mean = np.zeros(n_obs)
        if outliers is None and residual is not None and screen > 0 and n_obs:
            flagged, r = robust_screen(residual, screen, scale)
            outliers = np.where(flagged, r, 0.0)
        if outliers is not None:
            flagged = np.asarray(outliers) != 0
            mean[flagged] = np.asarray(outliers)[flagged]
            b[flagged] = p.b0_gamma + 0.5 * (mean[flagged] ** 2 + 1.0 / (target + tau))
        self.gamma = GammaParams(np.full(n_obs, a), b)
        self.sparse_mean = mean
        self.sparse_var = 1.0 / (self.gamma.mean + tau)

    def keep_sparse_tail(self, n):
        """Drop all but the last ``n`` sparse and gamma-field entries."""
        lo = self.sparse_mean.shape[0] - n
        self.sparse_mean = self.sparse_mean[lo:]
        self.sparse_var = self.sparse_var[lo:]
        self.gamma = GammaParams(self.gamma.a[lo:], self.gamma.b[lo:])

    def copy(self):
        return ModelState(
            factors=[f.copy() for f in self.factors],
            lam=self.lam.copy(),
            sparse_mean=self.sparse_mean.copy(),
            sparse_var=self.sparse_var.copy(),
            gamma=self.gamma.copy(),
            tau=self.tau.copy(),
            priors=self.priors,
            mu=self.mu,
            data_variance=self.data_variance,
            exact_hyper_updates=self.exact_hyper_updates,
            sparse_precision_ratio=self.sparse_precision_ratio,
        )

    def equals(self, other):
        """Exact (bitwise) equality of every parameter."""
        arrays = lambda s: (
            [f.means for f in s.factors]
            + [f.covs for f in s.factors]
            + [s.lam.a, s.lam.b, s.sparse_mean, s.sparse_var, s.gamma.a, s.gamma.b, s.tau.a, s.tau.b]
        )
        mine, theirs = arrays(self), arrays(other)
        return (
            len(self.factors) == len(other.factors)
            and self.priors == other.priors
            and self.mu == other.mu
            and self.data_variance == other.data_variance
            and self.exact_hyper_updates == other.exact_hyper_updates
            and self.sparse_precision_ratio == other.sparse_precision_ratio
            and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(mine, theirs))
        )


def initial_noise_ratio(config, first_slice):
    """Initial noise variance as a fraction of the slice's robust variance.

    ``config.init_noise_ratio`` when set; otherwise observed entries per
    non-temporal parameter, ``min(1, |Omega| / (R_max * sum I_n))``.  A slice
    with few entries per parameter starts with a tight noise model so the
    rank priors do not prune the signal before the likelihood takes hold.
    """
    if config.init_noise_ratio is not None:
        return config.init_noise_ratio
    return min(1.0, len(first_slice) / (config.rank_max * sum(first_slice.shape)))


def init_state(config, first_slice, seed, window_rows=1):
    """Random initial state sized from the first observed slice.

    Factor means are drawn from ``N(0, s^2)`` with
    ``s = init_scale * mean(|y|) ** (1 / (N + 1))`` using numpy's PCG64
    generator, and covariances start at ``init_cov * I``.  The rank
    precisions start at their prior.  The noise precision starts with mean
    ``1 / (r * v)`` where ``r`` comes from :func:`initial_noise_ratio` and
    ``v`` is the squared robust scale ``(1.4826 * MAD(y))**2``.  The sparse
    term is screened against a zero prediction as in
    :meth:`ModelState.reset_sparse`.
    """
    if config.rank_max < 1:
        raise InitializationError("rank_max must be >= 1")
    if len(first_slice) == 0:
        raise InitializationError("first slice has no observed entries")
    scale_base = float(np.mean(np.abs(first_slice.values)))
    if not scale_base > 0 or not np.isfinite(scale_base):
        raise InitializationError("first slice is all zeros or non-finite")
    rng = np.random.Generator(np.random.PCG64(seed))
    R = config.rank_max
    N = first_slice.order
    std = config.init_scale * scale_base ** (1.0 / (N + 1))
    sizes = list(first_slice.shape) + [window_rows]
    factors = [
        FactorPosterior(
            n, rng.normal(0.0, std, size=(rows, R)), np.tile(config.init_cov * np.eye(R), (rows, 1, 1))
        )
        for n, rows in enumerate(sizes)
    ]
    p = config.hyperpriors
    n_obs = len(first_slice)
    variance = float(np.var(first_slice.values)) or scale_base**2
    centred = first_slice.values - np.median(first_slice.values)
    robust = (1.4826 * float(np.median(np.abs(centred)))) ** 2 or variance
    tau_a = p.a0_tau + 0.5 * n_obs
    state = ModelState(
        factors=factors,
        lam=GammaParams(np.full(R, p.c0), np.full(R, p.d0)),
        sparse_mean=np.zeros(n_obs),
        sparse_var=np.ones(n_obs),
        gamma=GammaParams(np.full(n_obs, p.a0_gamma), np.full(n_obs, p.b0_gamma)),
        tau=GammaParams(tau_a, tau_a * initial_noise_ratio(config, first_slice) * robust),
        priors=p,
        mu=config.mu,
        data_variance=variance,
        exact_hyper_updates=config.exact_hyper_updates,
        sparse_precision_ratio=config.sparse_precision_ratio,
    )
    state.reset_sparse(n_obs, first_slice.values, config.sparse_screen)
    return state


def save_state(state, path):
    """Write a versioned ``.npz`` checkpoint."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "dims": list(state.dims),
        "window_rows": state.window_rows,
        "rank": state.rank,
        "priors": asdict(state.priors),
        "mu": state.mu,
        "data_variance": state.data_variance,
        "exact_hyper_updates": state.exact_hyper_updates,
        "sparse_precision_ratio": state.sparse_precision_ratio,
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for n, f in enumerate(state.factors):
        arrays[f"means_{n}"] = f.means
        arrays[f"covs_{n}"] = f.covs
    arrays.update(
        lam_a=state.lam.a, lam_b=state.lam.b,
        sparse_mean=state.sparse_mean, sparse_var=state.sparse_var,
        gamma_a=state.gamma.a, gamma_b=state.gamma.b,
        tau_a=state.tau.a, tau_b=state.tau.b,
    )
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_state(path):
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise FormatError(f"unsupported checkpoint version {meta.get('version')}", path)
            n_modes = len(meta["dims"]) + 1
            factors = [FactorPosterior(n, z[f"means_{n}"], z[f"covs_{n}"]) for n in range(n_modes)]
            return ModelState(
                factors=factors,
                lam=GammaParams(z["lam_a"], z["lam_b"]),
                sparse_mean=z["sparse_mean"],
                sparse_var=z["sparse_var"],
                gamma=GammaParams(z["gamma_a"], z["gamma_b"]),
                tau=GammaParams(z["tau_a"], z["tau_b"]),
                priors=HyperPriors(**meta["priors"]),
                mu=meta["mu"],
                data_variance=meta["data_variance"],
                exact_hyper_updates=meta["exact_hyper_updates"],
                sparse_precision_ratio=meta["sparse_precision_ratio"],
            )
    except (KeyError, ValueError, OSError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"unreadable checkpoint: {exc}", path) from exc
