"""Deterministic discrete-event engine with per-link delay semantics.

Simulated time is an integer tick count, ``TICKS_PER_MS`` ticks per
millisecond. Each link's delay is rounded to ticks once; a path delay is the
exact integer sum of its links, so long runs never drift.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, List, Optional, Sequence

import numpy as np

from . import kernels
from .delay import (DEFAULT_OPTIONS, DEFAULT_PARAMS, DelayParams, ModelOptions,
                    wired_hop_ms, wireless_attempt_ms, wireless_delay)
from .topology import NodeId, NoRouteError, Topology

TICKS_PER_MS = 10**12  # femtosecond resolution


class CausalityError(ValueError):
    pass


def to_ticks(ms: float) -> int:
    return int(round(ms * TICKS_PER_MS))


def to_ms(ticks: int) -> float:
    return ticks / TICKS_PER_MS


def format_ms(ticks: int) -> str:
    """Exact decimal rendering of a tick count in milliseconds."""
    whole, frac = divmod(ticks, TICKS_PER_MS)
    return f"{whole}.{frac:012d}"


class WireMode(str, Enum):
    EXPECTED_VALUE = "expected"
    STOCHASTIC = "stochastic"


@dataclass(frozen=True)
class WirelessMode:
    mode: WireMode = WireMode.EXPECTED_VALUE
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", WireMode(self.mode))
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")


@dataclass(frozen=True)
class SimLink:
    """One traversable link with the delay semantics of its kind."""

    a: Any
    b: Any
    wired: bool = True


@dataclass(order=True)
class SimEvent:
    at: int
    seq: int
    action: str = field(compare=False)          # "deliver" or "timer"
    to: Any = field(compare=False, default=None)
    message: Any = field(compare=False, default=None)
    tag: Any = field(compare=False, default=None)
    handler: Optional[Callable[["SimEvent"], None]] = field(compare=False, default=None)


class Simulator:
    def __init__(self, params: DelayParams = DEFAULT_PARAMS,
                 opts: ModelOptions = DEFAULT_OPTIONS,
                 mode: WirelessMode = WirelessMode(), trace: bool = False):
        self.params = params
        self.opts = opts
        self.mode = mode
        self.now = 0
        self._queue: List[SimEvent] = []
        self._seq = itertools.count()
        self._rng = np.random.default_rng(mode.seed)
        self._attempt_buf = np.empty(0, dtype=np.int64)
        self._attempt_pos = 0
        self.processed = 0
        self.trace_enabled = trace
        self.trace: List[str] = []

    @property
    def now_ms(self) -> float:
        return to_ms(self.now)

    def __len__(self) -> int:
        return len(self._queue)

    # -- queue ------------------------------------------------------------
    def next_seq(self) -> int:
        return next(self._seq)

    def schedule(self, event: SimEvent) -> SimEvent:
        if event.at < self.now:
            raise CausalityError(
                f"event at {format_ms(event.at)} ms is before clock {format_ms(self.now)} ms")
        heapq.heappush(self._queue, event)
        return event

    def call_at(self, at: int, handler: Callable[[SimEvent], None], owner=None,
                tag=None) -> SimEvent:
        return self.schedule(SimEvent(at, self.next_seq(), "timer", owner, None, tag, handler))

    def run_until(self, t_end_ms: float) -> int:
        t_end = to_ticks(t_end_ms)
        if t_end < self.now:
            raise CausalityError("cannot run backwards")
        n = self._drain(t_end)
        self.now = t_end
        return n

    def run(self) -> int:
        """Process events until the queue is empty; the clock stops at the last one."""
        return self._drain(None)

    def _drain(self, t_end: Optional[int]) -> int:
        n = 0
        while self._queue and (t_end is None or self._queue[0].at <= t_end):
            ev = heapq.heappop(self._queue)
            self.now = ev.at
            if self.trace_enabled:
                self._record(ev)
            if ev.handler is not None:
                ev.handler(ev)
            n += 1
        self.processed += n
        return n

    def _record(self, ev: SimEvent) -> None:
        msg = ev.message
        if msg is not None:
            line = f"{format_ms(ev.at)} {ev.seq} {msg.src} {msg.dst} {msg.name} {int(msg.size)}"
        else:
            line = f"{format_ms(ev.at)} {ev.seq} {ev.to} {ev.to} timer:{ev.tag} 0"
        self.trace.append(line)

    # -- delays -----------------------------------------------------------
    def _attempts(self) -> int:
        if self._attempt_pos >= self._attempt_buf.shape[0]:
            u = 1.0 - self._rng.random(4096)  # (0, 1]
            self._attempt_buf = kernels.retransmission_attempts(u, self.params.q)
            self._attempt_pos = 0
        k = int(self._attempt_buf[self._attempt_pos])
        self._attempt_pos += 1
        return k

    def link_ticks(self, link: SimLink, size: float) -> int:
        p = self.params
        if link.wired:
            return to_ticks(wired_hop_ms(size, p))
        if self.mode.mode is WireMode.EXPECTED_VALUE:
            return to_ticks(wireless_delay(size, p, self.opts))
        return self._attempts() * to_ticks(wireless_attempt_ms(size, p, self.opts))

    def path_ticks(self, links: Sequence[SimLink], size: float) -> int:
        return sum(self.link_ticks(l, size) for l in links)

    def transmit(self, message, links: Sequence[SimLink],
                 on_arrival: Optional[Callable[[SimEvent], None]] = None) -> int:
        """Send ``message`` store-and-forward over ``links``; return arrival tick."""
        arrival = self.now + self.path_ticks(links, message.size)
        self.schedule(SimEvent(arrival, self.next_seq(), "deliver", message.dst,
                               message, None, on_arrival))
        return arrival


def path_links(t: Topology, path: Sequence[NodeId]) -> List[SimLink]:
    """Links along ``path``; a missing link raises :class:`NoRouteError`."""
    out = []
    for a, b in zip(path, path[1:]):
        if not t.has_link(a, b):
            raise NoRouteError(f"path breaks at {a}-{b}")
        out.append(SimLink(a, b, t.is_wired(a, b)))
    return out


def synthetic_links(src, dst, hops: int, wired: bool = True) -> List[SimLink]:
    """A chain of ``hops`` identical links standing in for a charged hop count."""
    return [SimLink(src, dst, wired) for _ in range(hops)]
