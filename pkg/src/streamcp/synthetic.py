"""Ground-truth streams: low-rank temporal CP slices, sparse outliers, noise, masks."""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .tensor import cp_reconstruct


@dataclass
class GroundTruth:
    factors: list
    rank: int
    seed: int
    outliers: list = field(default_factory=list)  # per slice: (indices (M, N), deltas (M,))
    noise_sigma: float = 0.0
    sample_fraction: float = 1.0
    outlier_fraction: float = 0.0
    data: list = field(default_factory=list)  # dense corrupted slices, when known

    def clean_slice(self, t):
        return cp_reconstruct(self.factors, t)


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def _round_half_up(x):
    return int(math.floor(x + 0.5 + 1e-9))


def _ceil(x):
    return int(math.ceil(x - 1e-9))


def stream_from_factors(factors):
    """All slices ``[[A_1, ..., A_N; a_t]]`` for every temporal row."""
    return [cp_reconstruct(factors, t) for t in range(np.asarray(factors[-1]).shape[0])]


def gen_low_rank_stream(shape, rank, T, temporal_smoothness=0.1, seed=0):
    """Exact low-rank stream.

    Non-temporal factor entries are standard normal.  The first temporal row
    is all ones, so every component starts with unit weight, and each later
    row adds ``temporal_smoothness`` times a standard normal step.
    """
    rng = _rng(seed)
    factors = [rng.standard_normal((int(d), rank)) for d in shape]
    steps = temporal_smoothness * rng.standard_normal((T, rank))
    steps[0] = 1.0
    factors.append(np.cumsum(steps, axis=0))
    truth = GroundTruth(factors=factors, rank=rank, seed=seed)
    return truth, stream_from_factors(factors)


def inject_outliers(stream, fraction, magnitude=5.0, seed=0, scale=None):
    """Add ``+-magnitude * scale`` to ``ceil(fraction * size)`` entries per slice.

    ``scale`` defaults to the standard deviation of the whole input stream.

    Returns
    -------
    corrupted : list of ndarray
    records : list of (indices, deltas)
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("outlier fraction must be in [0, 1)")
    rng = _rng(seed)
    if scale is None:
        scale = float(np.std(np.stack(stream)))
    out, records = [], []
    for x in stream:
        n = _ceil(fraction * x.size)
        flat = np.sort(rng.choice(x.size, size=n, replace=False)) if n else np.zeros(0, np.int64)
        signs = rng.choice([-1.0, 1.0], size=n)
        deltas = signs * magnitude * scale
        delta_field = np.zeros(x.size)
        delta_field[flat] = deltas
        out.append(x + delta_field.reshape(x.shape))
        records.append((np.array(np.unravel_index(flat, x.shape)).T.reshape(-1, x.ndim), deltas))
    return out, records


def outlier_field(shape, record):
    """Dense delta array of one slice's outlier record."""
    idx, deltas = record
    field_ = np.zeros(int(np.prod(shape)))
    if len(deltas):
        field_[np.ravel_multi_index(tuple(idx.T), shape)] = deltas
    return field_.reshape(shape)


def add_noise(stream, sigma, seed=0):
    """I.i.d. Gaussian noise on every entry; returns ``(noisy, noise_fields)``."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rng = _rng(seed)
    noise = [sigma * rng.standard_normal(x.shape) for x in stream]
    return [x + e for x, e in zip(stream, noise)], noise


def sample_mask(shape, fraction, seed=0):
    """``round(fraction * size)`` distinct indices (half rounds up), sorted."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("sampling fraction must be in (0, 1]")
    shape = tuple(int(d) for d in shape)
    size = int(np.prod(shape))
    n = _round_half_up(fraction * size)
    flat = np.sort(_rng(seed).choice(size, size=n, replace=False))
    return np.array(np.unravel_index(flat, shape)).T.reshape(-1, len(shape))


@dataclass
class SyntheticStream:
    """A full synthetic experiment: truth, dense data and per-slice masks."""

    truth: GroundTruth
    clean: list
    data: list
    masks: list

    def observations(self):
        from .tensor import sampled_project

        return [sampled_project(x, m) for x, m in zip(self.data, self.masks)]


def make_stream(shape, rank, T, outliers=0.0, magnitude=5.0, noise=0.0, sample=1.0,
                seed=0, temporal_smoothness=0.1):
    """Generate, corrupt and mask a stream with independent sub-seeds of ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(4)
    truth, clean = gen_low_rank_stream(shape, rank, T, temporal_smoothness, int(seeds[0]))
    data, records = inject_outliers(clean, outliers, magnitude, int(seeds[1]))
    data, _ = add_noise(data, noise, int(seeds[2]))
    mask_rng = _rng(int(seeds[3]))
    masks = [sample_mask(shape, sample, int(s)) for s in mask_rng.integers(0, 2**63 - 1, size=T)]
    truth.outliers = records
    truth.noise_sigma = noise
    truth.sample_fraction = sample
    truth.outlier_fraction = outliers
    truth.seed = seed
    truth.data = data
    return SyntheticStream(truth, clean, data, masks)
