"""Geometric radio retransmission counts by inverse transform sampling.

Attempt ``k`` (1-based) fails independently with probability ``q``; the
number of attempts up to and including the first success is
``1 + floor(log(u) / log(q))`` for ``u`` uniform on (0, 1].
"""
import math

import numpy as np

from ._backend import njit, use_numba


@njit
def _attempts_loop(u, q, out):
    if q <= 0.0:
        for i in range(u.shape[0]):
            out[i] = 1
        return
    lq = math.log(q)
    for i in range(u.shape[0]):
        out[i] = 1 + int(math.floor(math.log(u[i]) / lq))


def retransmission_attempts_numba(u, q):
    u = np.ascontiguousarray(u, dtype=np.float64)
    out = np.empty(u.shape[0], dtype=np.int64)
    _attempts_loop(u, float(q), out)
    return out


def retransmission_attempts_numpy(u, q):
    u = np.asarray(u, dtype=np.float64)
    if q <= 0.0:
        return np.ones(u.shape[0], dtype=np.int64)
    return 1 + np.floor(np.log(u) / math.log(q)).astype(np.int64)


retransmission_attempts = (retransmission_attempts_numba if use_numba()
                           else retransmission_attempts_numpy)
