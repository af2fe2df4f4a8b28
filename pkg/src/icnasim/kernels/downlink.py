"""Fate of each downlink packet around a bridged (or unbridged) handover.

All times are integer simulator ticks. A packet leaving the gateway before
``commit`` still heads for the source base station; from ``detach`` on the
UE is gone from there, so the packet either rides the GRE bridge (while it
is up) or is dropped.
"""
import numpy as np

from ._backend import njit, use_numba

SOURCE = 0
BRIDGED = 1
NEW_PATH = 2
DROPPED_NO_BRIDGE = 3
DROPPED_BRIDGE_RELEASED = 4
IN_FLIGHT = 5

OUTCOME_NAMES = ("source", "bridged", "new_path", "dropped_no_bridge",
                 "dropped_bridge_released", "in_flight")


@njit
def _classify_loop(depart, commit, detach, bridge_up, release, d_old, d_new,
                   d_bridge, d_radio, bridging, t_end, outcome, done):
    for i in range(depart.shape[0]):
        dep = depart[i]
        if dep >= commit:
            t = dep + d_new + d_radio
            code = NEW_PATH
        else:
            a = dep + d_old
            if a < detach:
                t = a + d_radio
                code = SOURCE
            elif bridging and a >= bridge_up and a < release:
                t = a + d_bridge + d_radio
                code = BRIDGED
            elif bridging and a >= release:
                t = a
                code = DROPPED_BRIDGE_RELEASED
            else:
                t = a
                code = DROPPED_NO_BRIDGE
        if t > t_end:
            code = IN_FLIGHT
        outcome[i] = code
        done[i] = t


def classify_downlink_numba(depart, commit, detach, bridge_up, release, d_old, d_new,
                            d_bridge, d_radio, bridging, t_end):
    depart = np.ascontiguousarray(depart, dtype=np.int64)
    outcome = np.empty(depart.shape[0], dtype=np.int8)
    done = np.empty(depart.shape[0], dtype=np.int64)
    _classify_loop(depart, np.int64(commit), np.int64(detach), np.int64(bridge_up),
                   np.int64(release), np.int64(d_old), np.int64(d_new), np.int64(d_bridge),
                   np.int64(d_radio), bool(bridging), np.int64(t_end), outcome, done)
    return outcome, done


def classify_downlink_numpy(depart, commit, detach, bridge_up, release, d_old, d_new,
                            d_bridge, d_radio, bridging, t_end):
    depart = np.asarray(depart, dtype=np.int64)
    arrive_old = depart + np.int64(d_old)
    new = depart >= commit
    src = ~new & (arrive_old < detach)
    stale = ~new & ~src
    if bridging:
        bridged = stale & (arrive_old >= bridge_up) & (arrive_old < release)
        late = stale & (arrive_old >= release)
    else:
        bridged = np.zeros_like(stale)
        late = np.zeros_like(stale)

    outcome = np.full(depart.shape[0], DROPPED_NO_BRIDGE, dtype=np.int8)
    outcome[new] = NEW_PATH
    outcome[src] = SOURCE
    outcome[bridged] = BRIDGED
    outcome[late] = DROPPED_BRIDGE_RELEASED

    done = arrive_old.copy()
    done[new] = depart[new] + np.int64(d_new) + np.int64(d_radio)
    done[src] += np.int64(d_radio)
    done[bridged] += np.int64(d_bridge) + np.int64(d_radio)
    outcome[done > t_end] = IN_FLIGHT
    return outcome, done


classify_downlink = classify_downlink_numba if use_numba() else classify_downlink_numpy
