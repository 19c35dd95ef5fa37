"""Dense and sampled multi-way array arithmetic.

Dense tensors are plain row-major ``numpy`` arrays.  Partially observed
slices are held in :class:`ObservationSet`.  Indices are 0-based.
"""

from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .exceptions import ArgumentError, DimensionError, NumericalError


def _check_shape(shape):
    shape = tuple(int(d) for d in shape)
    if len(shape) < 1 or any(d < 1 for d in shape):
        raise DimensionError(f"invalid shape {shape}: need order >= 1 and dims >= 1")
    return shape


@dataclass(eq=False)
class ObservationSet:
    """Observed entries of one slice.

    Attributes
    ----------
    shape : tuple of int
        Mode sizes ``(I_1, ..., I_N)``.
    indices : ndarray of int64, shape (K, N)
        0-based coordinates of the observed entries.
    values : ndarray of float64, shape (K,)
        Observed values, aligned with ``indices``.
    """

    shape: tuple
    indices: np.ndarray = field(default=None)
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        self.shape = _check_shape(self.shape)
        N = len(self.shape)
        if self.indices is None:
            self.indices = np.zeros((0, N), dtype=np.int64)
        if self.values is None:
            self.values = np.zeros(0)
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1, N)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.indices.shape[0] != self.values.shape[0]:
            raise DimensionError("indices and values have different lengths")
        if np.any(self.indices < 0) or np.any(self.indices >= np.array(self.shape)):
            raise IndexError(f"observation index out of range for shape {self.shape}")
        flat = self.flat_indices()
        if np.unique(flat).size != flat.size:
            raise ArgumentError("duplicate observation index")

    def __len__(self):
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ObservationSet) or other.shape != self.shape:
            return NotImplemented if not isinstance(other, ObservationSet) else False
        a = np.argsort(self.flat_indices())
        b = np.argsort(other.flat_indices())
        return (
            len(self) == len(other)
            and np.array_equal(self.indices[a], other.indices[b])
            and np.array_equal(self.values[a], other.values[b])
        )

    @property
    def order(self):
        return len(self.shape)

    def flat_indices(self):
        if len(self) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.ravel_multi_index(tuple(self.indices.T), self.shape)

    def to_dense(self, fill=0.0):
        """Scatter into a dense array; entries off the index set get ``fill``."""
        out = np.full(self.shape, fill, dtype=np.float64)
        if len(self):
            out[tuple(self.indices.T)] = self.values
        return out

    def mask(self):
        out = np.zeros(self.shape, dtype=bool)
        if len(self):
            out[tuple(self.indices.T)] = True
        return out

    def with_values(self, values):
        return ObservationSet(self.shape, self.indices.copy(), values)

    @classmethod
    def from_dense(cls, x, mask=None):
        x = np.asarray(x, dtype=np.float64)
        if mask is None:
            idx = np.argwhere(np.ones(x.shape, dtype=bool))
        else:
            idx = np.argwhere(np.asarray(mask, dtype=bool))
        return cls(x.shape, idx, x[tuple(idx.T)] if len(idx) else np.zeros(0))


@dataclass(eq=False)
class FactorPosterior:
    """Gaussian posterior of one factor matrix, independent across rows.

    ``means[i]`` is the posterior mean of row ``i`` and ``covs[i]`` its
    ``R x R`` covariance.
    """

    mode: int
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covs = np.asarray(self.covs, dtype=np.float64)
        if self.means.ndim != 2 or self.covs.shape != self.means.shape + (self.means.shape[1],):
            raise DimensionError(
                f"factor {self.mode}: means {self.means.shape} and covs {self.covs.shape} disagree"
            )

    @property
    def rows(self):
        return self.means.shape[0]

    @property
    def rank(self):
        return self.means.shape[1]

    def second_moments(self):
        """Per-row ``E[a a^T] = mean mean^T + V``."""
        return self.covs + self.means[:, :, None] * self.means[:, None, :]

    def check(self, tol=1e-10):
        if not np.all(np.isfinite(self.means)):
            raise NumericalError(f"factor {self.mode}: non-finite means", mode=self.mode)
        asym = np.abs(self.covs - self.covs.transpose(0, 2, 1)).max(initial=0.0)
        if asym > tol:
            raise NumericalError(f"factor {self.mode}: covariance asymmetry {asym:.3g}", mode=self.mode)
        try:
            np.linalg.cholesky(self.covs)
        except np.linalg.LinAlgError:
            raise NumericalError(f"factor {self.mode}: covariance not positive definite", mode=self.mode)

    def copy(self):
        return FactorPosterior(self.mode, self.means.copy(), self.covs.copy())


def khatri_rao(A, B):
    """Columnwise Kronecker product; row ``i * J + j`` holds ``A[i] * B[j]``."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise DimensionError(f"khatri_rao needs equal column counts, got {A.shape} and {B.shape}")
    return (A[:, None, :] * B[None, :, :]).reshape(-1, A.shape[1])


def generalized_inner_product(vectors):
    """``sum_i prod_k v_k[i]`` over vectors of a common length."""
    vectors = [np.asarray(v, dtype=np.float64).reshape(-1) for v in vectors]
    if not vectors:
        raise DimensionError("need at least one vector")
    if len({v.shape[0] for v in vectors}) != 1:
        raise DimensionError("vectors must share a common length")
    return float(reduce(np.multiply, vectors).sum())


def cp_reconstruct(factors, time_row):
    """Dense slice from non-temporal factors and one temporal row.

    Parameters
    ----------
    factors : sequence of ndarray
        ``N + 1`` mean matrices; the last one is the temporal factor.
    time_row : int
        Row of the temporal factor to use.
    """
    factors = [np.asarray(f, dtype=np.float64) for f in factors]
    if len(factors) < 2:
        raise DimensionError("need at least one non-temporal factor and the temporal factor")
    ranks = {f.shape[1] for f in factors}
    if len(ranks) != 1:
        raise DimensionError(f"factor ranks differ: {sorted(ranks)}")
    temporal = factors[-1]
    if not 0 <= time_row < temporal.shape[0]:
        raise ArgumentError(f"time row {time_row} outside temporal factor with {temporal.shape[0]} rows")
    spatial = factors[:-1]
    kr = reduce(khatri_rao, spatial)
    shape = tuple(f.shape[0] for f in spatial)
    return (kr @ temporal[time_row]).reshape(shape)


def inner_product(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {y.shape}")
    return float(np.dot(x.ravel(), y.ravel()))


def frobenius_norm(x):
    return float(np.sqrt(inner_product(x, x)))


def sampled_project(x, omega):
    """Keep the entries of ``x`` listed in ``omega`` (shape ``(K, N)``)."""
    x = np.asarray(x, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.int64).reshape(-1, x.ndim)
    if np.any(omega < 0) or np.any(omega >= np.array(x.shape)):
        raise IndexError("sampling index out of range")
    values = x[tuple(omega.T)] if len(omega) else np.zeros(0)
    return ObservationSet(x.shape, omega, values)


def _check_entry(means, entry, excluded):
    if len(entry) != len(means):
        raise DimensionError(f"entry has {len(entry)} coordinates, expected {len(means)}")
    if not 0 <= excluded < len(means):
        raise ArgumentError(f"excluded mode {excluded} not in [0, {len(means) - 1}]")


def expected_kr_row(means, entry, excluded):
    """Posterior mean of the excluded Khatri-Rao row at one entry.

    ``entry`` holds one row index per mode, temporal slot last.  Rows of
    distinct modes are independent, so the expectation is the Hadamard
    product of the mean rows.
    """
    _check_entry(means, entry, excluded)
    rows = [np.asarray(m)[i] for j, (m, i) in enumerate(zip(means, entry)) if j != excluded]
    R = np.asarray(means[0]).shape[1]
    return reduce(np.multiply, rows, np.ones(R))


def expected_row_outer(means, covs, entry, excluded):
    """Posterior second moment ``E[b b^T]`` of the excluded Khatri-Rao row.

    Equals the Hadamard product over ``j != excluded`` of
    ``m_j m_j^T + V_j``.
    """
    _check_entry(means, entry, excluded)
    R = np.asarray(means[0]).shape[1]
    out = np.ones((R, R))
    for j, (m, V, i) in enumerate(zip(means, covs, entry)):
        if j == excluded:
            continue
        mi = np.asarray(m)[i]
        out = out * (np.outer(mi, mi) + np.asarray(V)[i])
    return out


def spd_inverse(P, mode=None, jitter_retries=3):
    """Invert a stack of symmetric positive-definite matrices via Cholesky.

    A row whose factorization fails gets ``1e-10 * trace / R`` added to its
    diagonal, growing tenfold per retry.

    Returns
    -------
    V : ndarray, shape (n, R, R)
    logdet : ndarray, shape (n,)
        ``log det V`` per row.
    """
    P = np.asarray(P, dtype=np.float64)
    n, R, _ = P.shape
    P = 0.5 * (P + P.transpose(0, 2, 1))
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        L = np.empty_like(P)
        eye = np.eye(R)
        for i in range(n):
            jitter = 1e-10 * max(np.trace(P[i]), np.finfo(float).tiny) / R
            for attempt in range(jitter_retries + 1):
                try:
                    L[i] = np.linalg.cholesky(P[i] + (jitter * eye if attempt else 0.0))
                    break
                except np.linalg.LinAlgError:
                    if attempt:
                        jitter *= 10.0
            else:
                raise NumericalError(
                    f"precision matrix of row {i} in mode {mode} is not positive definite",
                    mode=mode,
                    row=i,
                )
    Linv = np.linalg.inv(L)
    V = Linv.transpose(0, 2, 1) @ Linv
    V = 0.5 * (V + V.transpose(0, 2, 1))
    logdet = -2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    return V, logdet
