"""Tests for per-slice scoring."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamcp import RunConfig
from streamcp.engine import prune_ranks
from streamcp.exceptions import MetricError
from streamcp.metrics import (
    estimated_rank,
    flag_outliers,
    observed_relative_error,
    outlier_scores,
    relative_error,
)
from streamcp.model import init_state
from streamcp.tensor import ObservationSet, cp_reconstruct


def _state(shape=(3, 4), R=2, seed=0):
    rng = np.random.default_rng(seed)
    y = ObservationSet.from_dense(rng.standard_normal(shape))
    return init_state(RunConfig(rank_max=R), y, seed)


class TestRelativeError:
    def test_exact_reconstruction(self):
        state = _state()
        x = cp_reconstruct([f.means for f in state.factors], 0)
        assert relative_error(x, state, 0) == 0.0

    def test_zero_factors(self):
        state = _state()
        for f in state.factors:
            f.means[:] = 0.0
        x = np.random.default_rng(1).standard_normal((3, 4))
        assert relative_error(x, state, 0, ObservationSet.from_dense(np.zeros((3, 4)))) == 1.0

    def test_loop_oracle(self):
        rng = np.random.default_rng(2)
        state = _state((3, 5), 3, seed=2)
        x = rng.standard_normal((3, 5))
        mask = rng.random((3, 5)) < 0.5
        s_bar = ObservationSet.from_dense(rng.standard_normal((3, 5)), mask)
        A, B, C = (f.means for f in state.factors)
        num = den = 0.0
        for i in range(3):
            for j in range(5):
                recon = sum(A[i, r] * B[j, r] * C[0, r] for r in range(3))
                s = s_bar.to_dense()[i, j] if mask[i, j] else 0.0
                num += (x[i, j] - recon - s) ** 2
                den += x[i, j] ** 2
        assert relative_error(x, state, 0, s_bar) == pytest.approx(np.sqrt(num / den), rel=1e-12, abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(c=st.floats(1e-3, 1e3))
    def test_scale_invariance(self, c):
        rng = np.random.default_rng(3)
        state = _state(seed=3)
        x = rng.standard_normal((3, 4))
        s_bar = ObservationSet.from_dense(rng.standard_normal((3, 4)), rng.random((3, 4)) < 0.3)
        base = relative_error(x, state, 0, s_bar)
        scaled = state.copy()
        scaled.factors[0].means *= c
        assert relative_error(c * x, scaled, 0, s_bar.with_values(c * s_bar.values)) == pytest.approx(base, rel=1e-10)

    def test_zero_norm(self):
        with pytest.raises(MetricError):
            relative_error(np.zeros((3, 4)), _state(), 0)

    def test_observed_only(self):
        state = _state()
        recon = cp_reconstruct([f.means for f in state.factors], 0)
        x = recon.copy()
        x[0, 0] += 1.0
        y = ObservationSet.from_dense(x, np.arange(12).reshape(3, 4) != 0)
        assert observed_relative_error(y, state, 0) == 0.0
        assert relative_error(x, state, 0) > 0.0


class TestEstimatedRank:
    def test_fresh_state(self):
        assert estimated_rank(_state(R=15)) == 15

    def test_after_pruning_one(self):
        state = _state(R=4)
        for f in state.factors:
            f.means[:, 2] = 0.0
            f.covs[:, 2, :] = 0.0
            f.covs[:, :, 2] = 0.0
        prune_ranks(state, threshold=1e-12)
        assert estimated_rank(state) == 3


class TestOutlierScores:
    def _s_bar(self):
        idx = np.array([[0, 0], [0, 1], [1, 0], [1, 1], [2, 2]])
        return ObservationSet((3, 3), idx, np.array([10.0, 0.1, -8.0, 0.0, 4.0]))

    def test_zero_sparse(self):
        s_bar = self._s_bar().with_values(np.zeros(5))
        assert outlier_scores(s_bar, np.array([[0, 0]]), 1.0) == (1.0, 0.0)

    def test_exact_match(self):
        assert outlier_scores(self._s_bar(), np.array([[0, 0], [1, 0], [2, 2]]), 1.0) == (1.0, 1.0)

    def test_partial(self):
        precision, recall = outlier_scores(self._s_bar(), np.array([[0, 0], [0, 1]]), 1.0)
        assert precision == pytest.approx(1 / 3) and recall == 0.5

    def test_undetectable_truth_ignored(self):
        # (2, 0) is not in the observed set so it cannot count toward recall
        assert outlier_scores(self._s_bar(), np.array([[0, 0], [1, 0], [2, 2], [2, 0]]), 1.0) == (1.0, 1.0)

    def test_threshold_uses_noise_std(self):
        flags = flag_outliers(self._s_bar(), tau_mean=4.0, threshold=3.0)
        assert flags.tolist() == [True, False, True, False, True]
        flags = flag_outliers(self._s_bar(), tau_mean=0.25, threshold=3.0)
        assert flags.tolist() == [True, False, True, False, False]

    def test_errors(self):
        with pytest.raises(MetricError):
            outlier_scores(self._s_bar(), None, 1.0)
        with pytest.raises(MetricError):
            outlier_scores(self._s_bar(), np.array([[0, 0]]), 1.0, threshold=0.0)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10**6), lo=st.floats(0.1, 5.0), hi=st.floats(0.1, 5.0))
    def test_recall_monotone_in_threshold(self, seed, lo, hi):
        lo, hi = min(lo, hi), max(lo, hi)
        rng = np.random.default_rng(seed)
        s_bar = ObservationSet.from_dense(rng.standard_normal((5, 5)) * 3)
        truth = np.argwhere(rng.random((5, 5)) < 0.3)
        p_lo, r_lo = outlier_scores(s_bar, truth, 1.0, lo)
        p_hi, r_hi = outlier_scores(s_bar, truth, 1.0, hi)
        assert r_hi <= r_lo
        assert 0.0 <= p_hi <= 1.0 and 0.0 <= r_hi <= 1.0
