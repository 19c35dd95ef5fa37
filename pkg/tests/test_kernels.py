"""Compiled moment kernels against the numpy fallback and a loop oracle."""

import subprocess
import sys

import numpy as np
import pytest

from streamcp import _kernels_py, kernels

try:
    from streamcp import _kernels
except ImportError:
    _kernels = None

compiled = pytest.mark.skipif(_kernels is None, reason="compiled extension not built")


def _problem(seed, entries=200, rank=3, dims=(4, 5, 6)):
    rng = np.random.default_rng(seed)
    offsets = np.concatenate([[0], np.cumsum(dims)[:-1]])
    rows = np.stack([rng.integers(0, d, entries) + o for d, o in zip(dims, offsets)], axis=1).astype(np.int64)
    total = sum(dims)
    means = rng.standard_normal((total, rank))
    a = rng.standard_normal((total, rank, rank)) * 0.3
    seconds = means[:, :, None] * means[:, None, :] + a @ a.transpose(0, 2, 1)
    weights = rng.uniform(0.1, 1.0, entries)
    targets = rng.standard_normal(entries)
    return rows, means, seconds, weights, targets, dims


def _gram_loop(rows, skip, weights, targets, means, seconds, n_out, offset):
    R = means.shape[1]
    P = np.zeros((n_out, R, R))
    h = np.zeros((n_out, R))
    for k, row in enumerate(rows):
        b, H = np.ones(R), np.ones((R, R))
        for j, r in enumerate(row):
            if j != skip:
                b = b * means[r]
                H = H * seconds[r]
        o = row[skip] - offset
        P[o] += weights[k] * H
        h[o] += weights[k] * targets[k] * b
    return P, h


class TestFallback:
    @pytest.mark.parametrize("skip", [0, 1, 2])
    def test_gram_loop_oracle(self, skip):
        rows, means, seconds, w, z, dims = _problem(skip)
        offset = sum(dims[:skip])
        got = _kernels_py.accumulate_gram(rows, skip, w, z, means, seconds, dims[skip], offset)
        want = _gram_loop(rows, skip, w, z, means, seconds, dims[skip], offset)
        for x, y in zip(got, want):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)

    def test_entry_moments_loop_oracle(self):
        rows, means, seconds, *_ = _problem(7, entries=50)
        first, second = _kernels_py.entry_moments(rows, means, seconds)
        for k, row in enumerate(rows):
            assert first[k] == pytest.approx(np.prod(means[row], axis=0).sum(), rel=1e-12)
            assert second[k] == pytest.approx(np.prod(seconds[row], axis=0).sum(), rel=1e-12)


@compiled
class TestCompiledAgreement:
    @pytest.mark.parametrize("seed", range(5))
    def test_accumulate_gram(self, seed):
        rows, means, seconds, w, z, dims = _problem(seed, rank=seed + 1)
        for skip in range(3):
            offset = sum(dims[:skip])
            a = _kernels_py.accumulate_gram(rows, skip, w, z, means, seconds, dims[skip], offset)
            b = _kernels.accumulate_gram(rows, skip, w, z, means, seconds, dims[skip], offset)
            for x, y in zip(a, b):
                np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_entry_moments(self, seed):
        rows, means, seconds, *_ = _problem(seed, rank=seed + 1)
        for x, y in zip(_kernels_py.entry_moments(rows, means, seconds), _kernels.entry_moments(rows, means, seconds)):
            np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)

    def test_no_entries(self):
        rows, means, seconds, w, z, dims = _problem(0, entries=0)
        P, h = _kernels.accumulate_gram(rows, 0, w, z, means, seconds, dims[0], 0)
        assert not P.any() and not h.any()


class TestSelection:
    def test_backend_name(self):
        assert kernels.BACKEND == ("compiled" if _kernels is not None else "python")

    def test_env_forces_fallback(self):
        code = "import streamcp; print(streamcp.BACKEND)"
        env = {"STREAMCP_PURE_PYTHON": "1", "PATH": ""}
        out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env, check=True)
        assert out.stdout.strip() == "python"

    def test_fit_same_under_both_backends(self):
        code = (
            "import numpy as np, streamcp\n"
            "from streamcp.synthetic import make_stream\n"
            "s = make_stream((5, 4), 2, 4, sample=0.6, noise=0.01, seed=1)\n"
            "d = streamcp.StreamDriver(streamcp.RunConfig(rank_max=3, burn_in=2))\n"
            "r = [d.ingest_slice(y) for y in s.observations()]\n"
            "print(repr(r[-1].observed_error), d.state.rank)\n"
        )
        runs = [
            subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True,
                           env={"PATH": "", **({"STREAMCP_PURE_PYTHON": "1"} if pure else {})}).stdout.split()
            for pure in (False, True)
        ]
        assert runs[0][1] == runs[1][1]
        assert float(runs[0][0]) == pytest.approx(float(runs[1][0]), rel=1e-6, abs=1e-9)
