"""Backend selection for the moment kernels.

The compiled extension is used when it imports; setting ``STREAMCP_PURE_PYTHON=1``
forces the numpy fallback.  Both backends expose:

accumulate_gram(rows, skip, weights, targets, means, seconds, n_out, out_offset)
    Per output row ``o`` (the stacked row id in column ``skip`` minus
    ``out_offset``), returns ``sum_k w_k * H_k`` and ``sum_k w_k z_k b_k`` where
    ``b_k`` and ``H_k`` are the Hadamard products of first and second moments
    over every column except ``skip``.
entry_moments(rows, means, seconds)
    Per entry, the expected CP value ``sum_r prod_j m_j[r]`` and the expected
    squared CP value ``sum_{r,s} prod_j Q_j[r, s]``.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("STREAMCP_PURE_PYTHON"):
    _ext = None
else:
    try:
        from . import _kernels as _ext
    except ImportError:
        _ext = None

BACKEND = "compiled" if _ext is not None else "python"
_impl = _ext if _ext is not None else _kernels_py


def accumulate_gram(rows, skip, weights, targets, means, seconds, n_out, out_offset=0):
    return _impl.accumulate_gram(
        np.ascontiguousarray(rows, dtype=np.int64),
        int(skip),
        np.ascontiguousarray(weights, dtype=np.float64),
        np.ascontiguousarray(targets, dtype=np.float64),
        np.ascontiguousarray(means, dtype=np.float64),
        np.ascontiguousarray(seconds, dtype=np.float64),
        int(n_out),
        int(out_offset),
    )


def entry_moments(rows, means, seconds):
    return _impl.entry_moments(
        np.ascontiguousarray(rows, dtype=np.int64),
        np.ascontiguousarray(means, dtype=np.float64),
        np.ascontiguousarray(seconds, dtype=np.float64),
    )
