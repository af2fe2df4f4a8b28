import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from icnasim import kernels
from icnasim.kernels import (BRIDGED, DROPPED_BRIDGE_RELEASED, DROPPED_NO_BRIDGE, IN_FLIGHT,
                             NEW_PATH, SOURCE)

needs_numba = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")


def fate(dep, commit, detach, up, release, d_old, d_new, d_br, d_rad, bridging, t_end):
    """Scalar reference for one packet."""
    if dep >= commit:
        code, t = NEW_PATH, dep + d_new + d_rad
    else:
        at_src = dep + d_old
        if at_src < detach:
            code, t = SOURCE, at_src + d_rad
        elif bridging and up <= at_src < release:
            code, t = BRIDGED, at_src + d_br + d_rad
        elif bridging and at_src >= release:
            code, t = DROPPED_BRIDGE_RELEASED, at_src
        else:
            code, t = DROPPED_NO_BRIDGE, at_src
    return (IN_FLIGHT if t > t_end else code), t


ticks = st.integers(0, 10**15)
scenario = st.tuples(st.lists(ticks, max_size=200), ticks, ticks, ticks, ticks,
                     st.integers(1, 10**13), st.integers(1, 10**13), st.integers(1, 10**13),
                     st.integers(1, 10**13), st.booleans(), st.integers(0, 2 * 10**15))


def _variants():
    out = [kernels.classify_downlink_numpy]
    if kernels.HAVE_NUMBA:
        out.append(kernels.classify_downlink_numba)
    return out


@settings(max_examples=300, deadline=None)
@given(scenario)
def test_classify_matches_reference(args):
    dep, *rest = args
    want = [fate(d, *rest) for d in dep]
    for fn in _variants():
        outcome, done = fn(np.array(dep, dtype=np.int64), *rest)
        assert [int(x) for x in outcome] == [w[0] for w in want]
        assert [int(x) for x in done] == [w[1] for w in want]


@needs_numba
def test_backends_agree_on_large_input():
    rng = np.random.default_rng(3)
    dep = np.sort(rng.integers(0, 10**15, 100_000))
    args = (4 * 10**14, 3 * 10**14, 3 * 10**14, 6 * 10**14, 10**13, 2 * 10**13, 10**13,
            7 * 10**12, True, 10**15)
    a = kernels.classify_downlink_numba(dep, *args)
    b = kernels.classify_downlink_numpy(dep, *args)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_empty_input():
    for fn in _variants():
        o, d = fn(np.empty(0, dtype=np.int64), 0, 0, 0, 0, 1, 1, 1, 1, True, 0)
        assert o.shape == d.shape == (0,)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1e-300, 1.0), min_size=1, max_size=100), st.floats(0.0, 0.99))
def test_attempts_match_reference(u, q):
    want = [1 if q <= 0 else 1 + math.floor(math.log(x) / math.log(q)) for x in u]
    assert list(kernels.retransmission_attempts_numpy(np.array(u), q)) == want
    if kernels.HAVE_NUMBA:
        assert list(kernels.retransmission_attempts_numba(np.array(u), q)) == want


def test_attempts_are_geometric():
    rng = np.random.default_rng(0)
    u = 1.0 - rng.random(200_000)
    k = kernels.retransmission_attempts(u, 0.2)
    assert k.min() == 1
    assert k.mean() == pytest.approx(1 / 0.8, rel=0.01)
    assert np.mean(k == 1) == pytest.approx(0.8, abs=0.005)


@pytest.mark.parametrize("flag,want", [("1", "numpy"), ("", None)])
def test_env_flag_selects_backend(flag, want):
    env = dict(os.environ, ICNASIM_PURE_NUMPY=flag)
    code = "import icnasim.kernels as k; print(k.BACKEND, k.classify_downlink.__name__)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True).stdout.split()
    want = want or ("numba" if kernels.HAVE_NUMBA else "numpy")
    assert out == [want, f"classify_downlink_{want}"]
