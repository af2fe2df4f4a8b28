"""Hot numeric kernels.

Each kernel exists twice: a loop version compiled with numba ``@njit`` and a
vectorized numpy version. ``BACKEND`` names the one bound to the public
name. Set ``ICNASIM_PURE_NUMPY=1`` before import to force the numpy path;
it is also used when numba is not installed.
"""
from ._backend import BACKEND, HAVE_NUMBA, use_numba
from .downlink import (
    BRIDGED,
    DROPPED_BRIDGE_RELEASED,
    DROPPED_NO_BRIDGE,
    IN_FLIGHT,
    NEW_PATH,
    OUTCOME_NAMES,
    SOURCE,
    classify_downlink,
    classify_downlink_numba,
    classify_downlink_numpy,
)
from .retransmit import (
    retransmission_attempts,
    retransmission_attempts_numba,
    retransmission_attempts_numpy,
)

__all__ = [
    "BACKEND", "HAVE_NUMBA", "use_numba",
    "SOURCE", "BRIDGED", "NEW_PATH", "DROPPED_NO_BRIDGE", "DROPPED_BRIDGE_RELEASED",
    "IN_FLIGHT", "OUTCOME_NAMES",
    "classify_downlink", "classify_downlink_numba", "classify_downlink_numpy",
    "retransmission_attempts", "retransmission_attempts_numba", "retransmission_attempts_numpy",
]
