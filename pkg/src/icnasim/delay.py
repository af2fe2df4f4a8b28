"""Closed-form total-transmission and handover delay model.

All delays are in milliseconds, sizes in bytes, bandwidths in Mbit/s.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import List, Tuple


@dataclass(frozen=True)
class DelayParams:
    L_wl: float = 10.0   # wireless link delay, ms
    L_w: float = 2.0     # wired link delay, ms
    q: float = 0.2       # wireless link failure probability
    T_q: float = 5.0     # per-node queuing delay, ms
    S_c: float = 50.0    # control packet size, bytes
    S_d: float = 200.0   # data packet size, bytes
    B_wl: float = 11.0   # wireless bandwidth, Mbps
    B_w: float = 100.0   # wired bandwidth, Mbps

    def __post_init__(self):
        for name in ("L_wl", "L_w", "T_q"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 <= self.q < 1:
            raise ValueError(f"q must lie in [0, 1), got {self.q}")
        if self.B_wl <= 0 or self.B_w <= 0:
            raise ValueError("bandwidths must be > 0")
        if self.S_c <= 0 or self.S_d <= 0:
            raise ValueError("packet sizes must be > 0")

    def with_(self, **kw) -> "DelayParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class HopCounts:
    alpha: int = 2    # eNB/BS <-> SGW (BS <-> CGW in ICNA data plane)
    beta: int = 3     # SGW <-> PGW
    gamma: int = 2    # eNB <-> MME, BS <-> UCE
    delta: int = 3    # MME/UCE <-> HSS
    epsilon: int = 2  # MME <-> SGW, UCE <-> CGW
    lam: int = 2      # eNB <-> eNB, BS <-> BS

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise ValueError(f"hop count {f.name} must be an integer >= 1, got {v!r}")

    def with_(self, **kw) -> "HopCounts":
        if "lambda" in kw:
            kw["lam"] = kw.pop("lambda")
        return replace(self, **kw)

    def __getitem__(self, role: str) -> int:
        return getattr(self, "lam" if role == "lambda" else role)


@dataclass(frozen=True)
class ModelOptions:
    """Switches for places where the printed model is ambiguous.

    wireless_latency: "L_wl" (default) or "L_w" as literally printed.
    prefactor: "printed" uses (1-q)/(1+q); "retransmission" uses (1+q)/(1-q).
    eq1_data_hops: hop role for the eNB->SGW data legs of the 4G TTD,
        "epsilon" as printed or "alpha".
    s1_signaling_hops: hop role for the eNB<->MME legs of S1 handover,
        "lam" as printed or "gamma".
    """

    wireless_latency: str = "L_wl"
    prefactor: str = "printed"
    eq1_data_hops: str = "epsilon"
    s1_signaling_hops: str = "lam"

    def __post_init__(self):
        if self.wireless_latency not in ("L_wl", "L_w"):
            raise ValueError(f"wireless_latency must be L_wl or L_w, got {self.wireless_latency!r}")
        if self.prefactor not in ("printed", "retransmission"):
            raise ValueError(f"prefactor must be printed or retransmission, got {self.prefactor!r}")
        if self.eq1_data_hops not in ("epsilon", "alpha"):
            raise ValueError(f"eq1_data_hops must be epsilon or alpha, got {self.eq1_data_hops!r}")
        if self.s1_signaling_hops not in ("lam", "gamma"):
            raise ValueError(f"s1_signaling_hops must be lam or gamma, got {self.s1_signaling_hops!r}")


DEFAULT_PARAMS = DelayParams()
DEFAULT_HOPS = HopCounts()
DEFAULT_OPTIONS = ModelOptions()


@dataclass(frozen=True)
class DelayBreakdown:
    total_ms: float
    terms: Tuple[Tuple[str, int, float], ...] = field(default_factory=tuple)

    @classmethod
    def from_terms(cls, terms: List[Tuple[str, int, float]]) -> "DelayBreakdown":
        return cls(sum(c * v for _, c, v in terms), tuple(terms))

    def check(self, tol: float = 1e-9) -> bool:
        return abs(self.total_ms - sum(c * v for _, c, v in self.terms)) <= tol


class HandoverKind(str, Enum):
    X2_4G = "X2_4G"
    S1_4G = "S1_4G"
    INTER_GW_ICNA = "INTER_GW_ICNA"
    INTRA_GW_ICNA = "INTRA_GW_ICNA"


def transmission_ms(size_bytes: float, bandwidth_mbps: float) -> float:
    # bytes -> bits, Mbps -> bits per ms
    return 8.0 * size_bytes / (bandwidth_mbps * 1e3)


def wireless_factor(p: DelayParams, opts: ModelOptions = DEFAULT_OPTIONS) -> float:
    if opts.prefactor == "printed":
        return (1 - p.q) / (1 + p.q)
    return (1 + p.q) / (1 - p.q)


def wireless_attempt_ms(size: float, p: DelayParams, opts: ModelOptions = DEFAULT_OPTIONS) -> float:
    """One radio transmission attempt: serialization plus link latency."""
    lat = p.L_wl if opts.wireless_latency == "L_wl" else p.L_w
    return transmission_ms(size, p.B_wl) + lat


def wireless_delay(size: float, p: DelayParams = DEFAULT_PARAMS,
                   opts: ModelOptions = DEFAULT_OPTIONS) -> float:
    if size <= 0:
        raise ValueError(f"message size must be > 0, got {size}")
    return wireless_factor(p, opts) * wireless_attempt_ms(size, p, opts)


def wired_hop_ms(size: float, p: DelayParams = DEFAULT_PARAMS) -> float:
    return transmission_ms(size, p.B_w) + p.L_w + p.T_q


def wired_delay(size: float, hops: int, p: DelayParams = DEFAULT_PARAMS) -> float:
    if size <= 0:
        raise ValueError(f"message size must be > 0, got {size}")
    if hops < 1:
        raise ValueError(f"hop count must be >= 1, got {hops}")
    return hops * wired_hop_ms(size, p)


def _wired_term(role: str, size_name: str, hops: HopCounts, p: DelayParams, count: int):
    sym = "lambda" if role == "lam" else role
    return (f"T_{sym}({size_name})", count, wired_delay(getattr(p, size_name), hops[role], p))


def _wireless_term(size_name: str, p: DelayParams, opts: ModelOptions, count: int):
    return (f"T_wl({size_name})", count, wireless_delay(getattr(p, size_name), p, opts))


def ttd_4g(p: DelayParams = DEFAULT_PARAMS, h: HopCounts = DEFAULT_HOPS,
           opts: ModelOptions = DEFAULT_OPTIONS) -> DelayBreakdown:
    """Attach signaling plus a data round trip through SGW and PGW."""
    data_role = opts.eq1_data_hops
    return DelayBreakdown.from_terms([
        _wireless_term("S_c", p, opts, 4),
        _wired_term("gamma", "S_c", h, p, 5),
        _wired_term("delta", "S_c", h, p, 2),
        _wired_term("epsilon", "S_c", h, p, 4),
        _wired_term("beta", "S_c", h, p, 2),
        _wireless_term("S_d", p, opts, 2),
        _wired_term(data_role, "S_d", h, p, 2),
        _wired_term("beta", "S_d", h, p, 2),
    ])


def ttd_icna(p: DelayParams = DEFAULT_PARAMS, h: HopCounts = DEFAULT_HOPS,
             opts: ModelOptions = DEFAULT_OPTIONS) -> DelayBreakdown:
    return DelayBreakdown.from_terms([
        _wireless_term("S_c", p, opts, 3),
        _wired_term("gamma", "S_c", h, p, 5),
        _wired_term("delta", "S_c", h, p, 2),
        _wired_term("epsilon", "S_c", h, p, 2),
        _wireless_term("S_d", p, opts, 2),
        _wired_term("alpha", "S_d", h, p, 2),
    ])


# (role, count) per handover kind; every message is a control packet.
HANDOVER_TERMS = {
    HandoverKind.X2_4G: (("lam", 2), ("gamma", 3), ("epsilon", 2), ("beta", 2)),
    HandoverKind.S1_4G: (("lam", 6), ("epsilon", 2), ("beta", 2)),
    HandoverKind.INTER_GW_ICNA: (("lam", 3), ("gamma", 2), ("epsilon", 2)),
    HandoverKind.INTRA_GW_ICNA: (("gamma", 5), ("epsilon", 2)),
}


def handover_delay(kind, p: DelayParams = DEFAULT_PARAMS, h: HopCounts = DEFAULT_HOPS,
                   opts: ModelOptions = DEFAULT_OPTIONS) -> DelayBreakdown:
    try:
        kind = HandoverKind(kind)
    except ValueError:
        raise ValueError(f"unknown handover kind {kind!r}") from None
    terms = []
    for role, count in HANDOVER_TERMS[kind]:
        if kind is HandoverKind.S1_4G and role == "lam":
            role = opts.s1_signaling_hops
        terms.append(_wired_term(role, "S_c", h, p, count))
    return DelayBreakdown.from_terms(terms)
