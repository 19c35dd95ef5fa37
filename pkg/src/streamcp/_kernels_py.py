"""Pure-numpy versions of the compiled moment kernels.

Same signatures and results as :mod:`streamcp._kernels`; entries are processed
in blocks so the ``(K, R, R)`` temporaries stay bounded.
"""

import numpy as np

_BLOCK = 4096


def accumulate_gram(rows, skip, weights, targets, means, seconds, n_out, out_offset):
    R = means.shape[1]
    keep = [j for j in range(rows.shape[1]) if j != skip]
    gram = np.zeros((n_out, R, R))
    rhs = np.zeros((n_out, R))
    for start in range(0, rows.shape[0], _BLOCK):
        blk = rows[start:start + _BLOCK]
        w = weights[start:start + _BLOCK]
        z = targets[start:start + _BLOCK]
        out = blk[:, skip] - out_offset
        b = np.ones((blk.shape[0], R))
        h = np.ones((blk.shape[0], R, R))
        for j in keep:
            b *= means[blk[:, j]]
            h *= seconds[blk[:, j]]
        np.add.at(gram, out, w[:, None, None] * h)
        np.add.at(rhs, out, (w * z)[:, None] * b)
    return gram, rhs


def entry_moments(rows, means, seconds):
    K = rows.shape[0]
    R = means.shape[1]
    first = np.empty(K)
    second = np.empty(K)
    for start in range(0, K, _BLOCK):
        blk = rows[start:start + _BLOCK]
        b = np.ones((blk.shape[0], R))
        h = np.ones((blk.shape[0], R, R))
        for j in range(blk.shape[1]):
            b *= means[blk[:, j]]
            h *= seconds[blk[:, j]]
        first[start:start + _BLOCK] = b.sum(axis=1)
        second[start:start + _BLOCK] = h.sum(axis=(1, 2))
    return first, second
