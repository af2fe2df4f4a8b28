"""Executable signaling procedures for the EPC and ICNA cores.

Each procedure is a linearized message sequence chart: message ``i + 1``
leaves when message ``i`` has been delivered. Every step names its sender
and receiver by role, the hop-count role its path realizes, and the state
change the receiver applies on delivery.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import codecs, kernels
from .codecs import Addressing, Scheme
from .delay import (DEFAULT_HOPS, DEFAULT_OPTIONS, DEFAULT_PARAMS, DelayParams,
                    HopCounts, ModelOptions)
from .sim import (SimEvent, SimLink, Simulator, WireMode, WirelessMode, format_ms,
                  path_links, synthetic_links, to_ms, to_ticks)
from .topology import (MOBILE_INNER_NET, Address, AddressPool, Arch, BearerTable,
                       BindingTable, Destination, NodeId, NodeKind, Topology,
                       build_topology, classify_destination, compute_route, uce_lookup)


class ProcedureError(Exception):
    pass


class InvalidScenarioError(ProcedureError):
    pass


class InvalidStateError(ProcedureError):
    pass


class Msg(str, Enum):
    AttachRequest = "AttachRequest"
    AttachAccept = "AttachAccept"
    AttachComplete = "AttachComplete"
    UpdateLocationRequest = "UpdateLocationRequest"
    UpdateLocationAnswer = "UpdateLocationAnswer"
    SecurityModeCommand = "SecurityModeCommand"
    SecurityModeComplete = "SecurityModeComplete"
    CreateSessionRequest = "CreateSessionRequest"
    CreateSessionResponse = "CreateSessionResponse"
    ModifyBearerRequest = "ModifyBearerRequest"
    ModifyBearerResponse = "ModifyBearerResponse"
    InitialContextSetupRequest = "InitialContextSetupRequest"
    InitialContextSetupResponse = "InitialContextSetupResponse"
    HandoverRequired = "HandoverRequired"
    HandoverRequest = "HandoverRequest"
    HandoverAcknowledgment = "HandoverAcknowledgment"
    HandoverCommand = "HandoverCommand"
    HandoverNotify = "HandoverNotify"
    PathSwitchRequest = "PathSwitchRequest"
    PathSwitchResponse = "PathSwitchResponse"
    PathModifyRequest = "PathModifyRequest"
    PathModifyResponse = "PathModifyResponse"
    GatewayAllocationRequest = "GatewayAllocationRequest"
    GatewayAllocationResponse = "GatewayAllocationResponse"
    IpAllocationRequest = "IpAllocationRequest"
    IpAllocationResponse = "IpAllocationResponse"
    LocationQuery = "LocationQuery"
    LocationResponse = "LocationResponse"
    ReleaseResources = "ReleaseResources"
    DataPacket = "DataPacket"


class ProcedureKind(str, Enum):
    ATTACH_4G = "ATTACH_4G"
    ATTACH_ICNA = "ATTACH_ICNA"
    DATA_MH_IH = "DATA_MH_IH"
    DATA_MH_MH = "DATA_MH_MH"
    DATA_IH_MH = "DATA_IH_MH"
    X2_HO_4G = "X2_HO_4G"
    S1_HO_4G = "S1_HO_4G"
    INTER_GW_HO_ICNA = "INTER_GW_HO_ICNA"
    INTRA_GW_HO_ICNA = "INTRA_GW_HO_ICNA"


ARCH_OF = {
    ProcedureKind.ATTACH_4G: Arch.EPC_4G,
    ProcedureKind.X2_HO_4G: Arch.EPC_4G,
    ProcedureKind.S1_HO_4G: Arch.EPC_4G,
}

HANDOVERS = {ProcedureKind.X2_HO_4G, ProcedureKind.S1_HO_4G,
             ProcedureKind.INTER_GW_HO_ICNA, ProcedureKind.INTRA_GW_HO_ICNA}

WL = "wl"    # radio hop
EXT = "ext"  # gateway <-> Internet host, one wired hop outside the core


@dataclass(frozen=True)
class ControlMessage:
    name: Msg
    src: NodeId
    dst: NodeId
    size: float
    step: str = ""
    frame: Optional[codecs.EncapsulatedFrame] = field(default=None, compare=False)

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError(f"{self.name.value}: sender and receiver are both {self.src}")


@dataclass(frozen=True)
class TranscriptEntry:
    at: int  # delivery tick
    message: ControlMessage

    @property
    def t_ms(self) -> float:
        return to_ms(self.at)


@dataclass
class Transcript:
    kind: str
    start: int = 0
    entries: List[TranscriptEntry] = field(default_factory=list)
    packets_lost: int = 0
    packets_delivered: int = 0
    packets_in_flight: int = 0
    packets_injected: int = 0
    drop_causes: Dict[str, int] = field(default_factory=dict)
    marks: Dict[str, int] = field(default_factory=dict)

    @property
    def final_latency_ms(self) -> float:
        if not self.entries:
            return 0.0
        return to_ms(self.entries[-1].at - self.start)

    @property
    def final_latency_ticks(self) -> int:
        return self.entries[-1].at - self.start if self.entries else 0

    def names(self) -> List[str]:
        return [e.message.name.value for e in self.entries]

    def pairs(self) -> List[Tuple[str, str, str]]:
        return [(e.message.name.value, str(e.message.src), str(e.message.dst)) for e in self.entries]

    def to_text(self) -> str:
        return "".join(f"{format_ms(e.at)} {e.message.name.value} {e.message.src} {e.message.dst}\n"
                       for e in self.entries)

    def to_rows(self) -> List[Dict[str, str]]:
        return [{"t_ms": format_ms(e.at), "step": e.message.step, "name": e.message.name.value,
                 "from": str(e.message.src), "to": str(e.message.dst),
                 "size_bytes": str(int(e.message.size))} for e in self.entries]


@dataclass
class GreBridge:
    key: int
    source_bs: NodeId
    target_bs: NodeId
    active: bool = True
    opened_at: int = 0
    closed_at: Optional[int] = None


# -- world ---------------------------------------------------------------------

@dataclass
class World:
    """Topology plus every entity's mutable state, owned by one simulator."""

    topology: Topology
    params: DelayParams
    hops: HopCounts
    opts: ModelOptions
    sim: Simulator
    fidelity: str = "equation"
    outer_header: str = codecs.OUTER_COMPACT
    bindings: BindingTable = field(default_factory=BindingTable)
    bearers: BearerTable = field(default_factory=BearerTable)
    ue_address: Dict[NodeId, Address] = field(default_factory=dict)
    attached: Dict[NodeId, NodeId] = field(default_factory=dict)
    gateway_of: Dict[NodeId, NodeId] = field(default_factory=dict)
    cgw_routes: Dict[Address, Address] = field(default_factory=dict)
    bridges: Dict[NodeId, List[GreBridge]] = field(default_factory=dict)
    flow_cache: Dict[Tuple[NodeId, Address], Address] = field(default_factory=dict)

    def __post_init__(self):
        self._inner_pool = AddressPool(MOBILE_INNER_NET)
        self._gre_keys = itertools.count(1)

    @property
    def arch(self) -> Arch:
        return self.topology.arch

    @property
    def controller(self) -> NodeId:
        kind = NodeKind.MME if self.arch is Arch.EPC_4G else NodeKind.UCE
        return self.topology.one(kind)

    def address(self, node: NodeId) -> Address:
        if node.kind is NodeKind.UE:
            return self.ue_address[node]
        return self.topology.addresses[node]

    def allocate_inner(self, ue: NodeId) -> Address:
        if ue in self.ue_address:
            raise InvalidStateError(f"{ue} already holds {self.ue_address[ue]}")
        addr = self._inner_pool.allocate()
        self.ue_address[ue] = addr
        return addr

    def active_bridge(self, ue: NodeId) -> Optional[GreBridge]:
        active = [b for b in self.bridges.get(ue, []) if b.active]
        if len(active) > 1:
            raise InvalidStateError(f"{ue} has {len(active)} active GRE bridges")
        return active[0] if active else None

    def open_bridge(self, ue: NodeId, source: NodeId, target: NodeId) -> GreBridge:
        if self.active_bridge(ue) is not None:
            raise InvalidStateError(f"{ue} already has an active GRE bridge")
        bridge = GreBridge(next(self._gre_keys), source, target, True, self.sim.now)
        self.bridges.setdefault(ue, []).append(bridge)
        return bridge

    def close_bridge(self, ue: NodeId) -> None:
        bridge = self.active_bridge(ue)
        if bridge is not None:
            bridge.active = False
            bridge.closed_at = self.sim.now

    def move_radio(self, ue: NodeId, bs: NodeId) -> None:
        self.attached[ue] = bs
        if self.topology.serving_bs(ue) != bs:
            self.topology.reassociate(ue, bs)

    def links(self, src: NodeId, dst: NodeId, role: str, charged: Optional[str]) -> List[SimLink]:
        path = compute_route(self.topology, src, dst)
        links = path_links(self.topology, path)
        if role == WL:
            if len(links) != 1 or links[0].wired:
                raise InvalidStateError(f"{src}-{dst} is not a radio hop")
            return links
        if self.fidelity == "equation" and charged and charged != role:
            return synthetic_links(src, dst, self.hops[charged])
        return links


def make_world(arch=Arch.ICNA, params: DelayParams = DEFAULT_PARAMS,
               hops: HopCounts = DEFAULT_HOPS, opts: ModelOptions = DEFAULT_OPTIONS,
               mode: WirelessMode = WirelessMode(), n_bs: int = 2,
               n_ues: Optional[int] = None, fidelity: str = "equation",
               outer_header: str = codecs.OUTER_COMPACT, trace: bool = False) -> World:
    if fidelity not in ("equation", "topology"):
        raise ValueError(f"fidelity must be equation or topology, got {fidelity!r}")
    topo = build_topology(hops, arch, n_bs=n_bs, n_ues=n_ues)
    return World(topo, params, hops, opts, Simulator(params, opts, mode, trace),
                 fidelity, outer_header)


# -- step tables -----------------------------------------------------------------

@dataclass(frozen=True)
class Step:
    name: Msg
    src: str
    dst: str
    role: str                       # realized hop role, WL or EXT
    label: str = ""                 # step number printed in the chart
    size: str = "S_c"
    charged: Optional[str] = None   # hop role the closed form charges instead
    effect: Optional[str] = None
    figure_only: bool = False       # opaque exchange outside the closed form


S = Step
M = Msg

ATTACH_ICNA_STEPS = (
    S(M.AttachRequest, "ue", "bs", WL, "1"),
    S(M.AttachRequest, "bs", "ctrl", "gamma", "2"),
    S(M.UpdateLocationRequest, "ctrl", "hss", "delta", "2"),
    S(M.UpdateLocationAnswer, "hss", "ctrl", "delta", "2"),
    S(M.GatewayAllocationRequest, "ctrl", "gw", "epsilon", "3"),
    S(M.GatewayAllocationResponse, "gw", "ctrl", "epsilon", "3", effect="assign_gateway"),
    S(M.IpAllocationRequest, "bs", "ctrl", "gamma", "4", effect="icna_allocate"),
    S(M.IpAllocationResponse, "ctrl", "bs", "gamma", "4"),
    S(M.AttachAccept, "ctrl", "bs", "gamma", "5"),
    S(M.AttachAccept, "bs", "ue", WL, "5"),
    S(M.AttachComplete, "ue", "bs", WL, "6"),
    S(M.AttachComplete, "bs", "ctrl", "gamma", "6", effect="attached"),
)

ATTACH_4G_STEPS = (
    S(M.AttachRequest, "ue", "bs", WL, "1"),
    S(M.AttachRequest, "bs", "ctrl", "gamma", "1"),
    S(M.UpdateLocationRequest, "ctrl", "hss", "delta", "2"),
    S(M.UpdateLocationAnswer, "hss", "ctrl", "delta", "2"),
    S(M.SecurityModeCommand, "ctrl", "bs", "gamma", "3", figure_only=True),
    S(M.SecurityModeCommand, "bs", "ue", WL, "3", figure_only=True),
    S(M.SecurityModeComplete, "ue", "bs", WL, "3", figure_only=True),
    S(M.SecurityModeComplete, "bs", "ctrl", "gamma", "3", figure_only=True),
    S(M.CreateSessionRequest, "ctrl", "sgw", "epsilon", "4", effect="epc_bearer"),
    S(M.ModifyBearerRequest, "sgw", "pgw", "beta", "5", effect="epc_allocate"),
    S(M.ModifyBearerResponse, "pgw", "sgw", "beta", "5"),
    S(M.CreateSessionResponse, "sgw", "ctrl", "epsilon", "6"),
    S(M.AttachAccept, "ctrl", "bs", "gamma", "7"),
    S(M.AttachAccept, "bs", "ue", WL, "7"),
    S(M.InitialContextSetupRequest, "ctrl", "bs", "gamma", "8"),
    # radio bearer set up toward the UE before the eNB answers
    S(M.InitialContextSetupRequest, "bs", "ue", WL, "8"),
    S(M.InitialContextSetupResponse, "bs", "ctrl", "gamma", "8"),
    S(M.AttachComplete, "ue", "bs", WL, "9"),
    S(M.AttachComplete, "bs", "ctrl", "gamma", "9", effect="attached"),
    S(M.ModifyBearerRequest, "ctrl", "sgw", "epsilon", "10"),
    S(M.ModifyBearerResponse, "sgw", "ctrl", "epsilon", "10"),
)

DATA_MH_IH_STEPS = (
    S(M.DataPacket, "ue", "bs", WL, "1", "S_d", effect="bs_uplink"),
    S(M.DataPacket, "bs", "gw", "alpha", "2", "S_d", effect="gw_decap"),
    S(M.DataPacket, "gw", "host", EXT, "3", "S_d"),
)

DATA_MH_MH_STEPS = (
    S(M.DataPacket, "ue", "bs", WL, "1", "S_d", effect="bs_uplink"),
    S(M.LocationQuery, "bs", "ctrl", "gamma", "2"),
    S(M.LocationResponse, "ctrl", "bs", "gamma", "2", effect="bs_locate_peer"),
    S(M.DataPacket, "bs", "peer_bs", "lam", "3", "S_d", effect="bs_decap"),
    S(M.DataPacket, "peer_bs", "peer", WL, "4", "S_d"),
)

# later packets of a flow reuse the locator cached by the first query
DATA_MH_MH_CACHED_STEPS = (
    S(M.DataPacket, "ue", "bs", WL, "1", "S_d", effect="bs_uplink_cached"),
    S(M.DataPacket, "bs", "peer_bs", "lam", "3", "S_d", effect="bs_decap"),
    S(M.DataPacket, "peer_bs", "peer", WL, "4", "S_d"),
)

DATA_MH_MH_LOCAL_STEPS = (
    S(M.DataPacket, "ue", "bs", WL, "1", "S_d", effect="bs_uplink"),
    S(M.DataPacket, "bs", "peer", WL, "2", "S_d"),
)

DATA_IH_MH_STEPS = (
    S(M.DataPacket, "host", "gw", EXT, "1", "S_d"),
    S(M.LocationQuery, "gw", "ctrl", "epsilon", "2"),
    S(M.LocationResponse, "ctrl", "gw", "epsilon", "2", effect="gw_locate_ue"),
    S(M.DataPacket, "gw", "serving_bs", "alpha", "3", "S_d", effect="bs_decap"),
    S(M.DataPacket, "serving_bs", "ue", WL, "4", "S_d"),
)

X2_HO_4G_STEPS = (
    S(M.HandoverRequest, "src_bs", "tgt_bs", "lam", "1"),
    S(M.HandoverAcknowledgment, "tgt_bs", "src_bs", "lam", "1", effect="radio_to_target"),
    S(M.PathSwitchRequest, "tgt_bs", "ctrl", "gamma", "2"),
    S(M.CreateSessionRequest, "ctrl", "tgt_sgw", "epsilon", "3", effect="epc_relocate"),
    S(M.ModifyBearerRequest, "tgt_sgw", "pgw", "beta", "4"),
    S(M.ModifyBearerResponse, "pgw", "tgt_sgw", "beta", "4"),
    S(M.CreateSessionResponse, "tgt_sgw", "ctrl", "epsilon", "5"),
    S(M.PathSwitchResponse, "ctrl", "tgt_bs", "gamma", "6"),
    S(M.ReleaseResources, "ctrl", "src_bs", "gamma", "7"),
)

_S1 = "s1"  # placeholder resolved to ModelOptions.s1_signaling_hops

S1_HO_4G_STEPS = (
    S(M.HandoverRequired, "src_bs", "ctrl", "gamma", "1", charged=_S1),
    S(M.HandoverRequest, "ctrl", "tgt_bs", "gamma", "2", charged=_S1),
    S(M.HandoverAcknowledgment, "tgt_bs", "ctrl", "gamma", "3", charged=_S1),
    S(M.HandoverCommand, "ctrl", "src_bs", "gamma", "4", charged=_S1, effect="radio_to_target"),
    S(M.HandoverNotify, "src_bs", "ctrl", "gamma", "5", charged=_S1),
    S(M.ModifyBearerRequest, "ctrl", "tgt_sgw", "epsilon", "6", effect="epc_relocate"),
    S(M.ModifyBearerRequest, "tgt_sgw", "pgw", "beta", "7"),
    S(M.ModifyBearerResponse, "pgw", "tgt_sgw", "beta", "7"),
    S(M.ModifyBearerResponse, "tgt_sgw", "ctrl", "epsilon", "8"),
    S(M.ReleaseResources, "ctrl", "src_bs", "gamma", "9", charged=_S1),
)

INTER_GW_HO_ICNA_STEPS = (
    S(M.HandoverRequest, "src_bs", "tgt_bs", "lam", "1"),
    S(M.HandoverAcknowledgment, "tgt_bs", "src_bs", "lam", "1", effect="detach_and_bridge"),
    S(M.PathSwitchRequest, "tgt_bs", "ctrl", "gamma", "2.a", effect="uce_rebind"),
    S(M.PathSwitchResponse, "ctrl", "tgt_bs", "gamma", "2.b"),
    S(M.PathModifyRequest, "ctrl", "gw", "epsilon", "3", effect="cgw_commit"),
    S(M.PathModifyResponse, "gw", "ctrl", "epsilon", "3"),
    S(M.ReleaseResources, "tgt_bs", "src_bs", "lam", "4", effect="release_bridge"),
)

INTRA_GW_HO_ICNA_STEPS = (
    S(M.HandoverRequired, "src_bs", "ctrl", "gamma", "1.a"),
    S(M.HandoverRequest, "ctrl", "tgt_bs", "gamma", "2.a"),
    S(M.HandoverAcknowledgment, "tgt_bs", "ctrl", "gamma", "2.b", effect="uce_rebind"),
    S(M.HandoverCommand, "ctrl", "src_bs", "gamma", "1.b", effect="radio_to_target"),
    S(M.ModifyBearerRequest, "ctrl", "gw", "epsilon", "3", effect="cgw_commit"),
    S(M.ModifyBearerResponse, "gw", "ctrl", "epsilon", "3"),
    S(M.ReleaseResources, "ctrl", "src_bs", "gamma", "4"),
)

# Data round trip counted by the total-transmission-delay closed forms.
ECHO_ICNA_STEPS = (
    S(M.DataPacket, "ue", "bs", WL, "d1", "S_d", effect="bs_uplink"),
    S(M.DataPacket, "bs", "gw", "alpha", "d2", "S_d", effect="gw_echo"),
    S(M.DataPacket, "gw", "bs", "alpha", "d3", "S_d", effect="bs_decap"),
    S(M.DataPacket, "bs", "ue", WL, "d4", "S_d"),
)

_EQ1 = "eq1"  # placeholder resolved to ModelOptions.eq1_data_hops

ECHO_4G_STEPS = (
    S(M.DataPacket, "ue", "bs", WL, "d1", "S_d", effect="bs_uplink"),
    S(M.DataPacket, "bs", "sgw", "alpha", "d2", "S_d", charged=_EQ1),
    S(M.DataPacket, "sgw", "pgw", "beta", "d3", "S_d"),
    S(M.DataPacket, "pgw", "sgw", "beta", "d4", "S_d"),
    S(M.DataPacket, "sgw", "bs", "alpha", "d5", "S_d", charged=_EQ1),
    S(M.DataPacket, "bs", "ue", WL, "d6", "S_d"),
)

STEPS = {
    ProcedureKind.ATTACH_4G: ATTACH_4G_STEPS,
    ProcedureKind.ATTACH_ICNA: ATTACH_ICNA_STEPS,
    ProcedureKind.DATA_MH_IH: DATA_MH_IH_STEPS,
    ProcedureKind.DATA_MH_MH: DATA_MH_MH_STEPS,
    ProcedureKind.DATA_IH_MH: DATA_IH_MH_STEPS,
    ProcedureKind.X2_HO_4G: X2_HO_4G_STEPS,
    ProcedureKind.S1_HO_4G: S1_HO_4G_STEPS,
    ProcedureKind.INTER_GW_HO_ICNA: INTER_GW_HO_ICNA_STEPS,
    ProcedureKind.INTRA_GW_HO_ICNA: INTRA_GW_HO_ICNA_STEPS,
}


def golden_sequence(kind, scope: str = "figure") -> List[Tuple[str, str, str, str]]:
    """(step label, message, sender role, receiver role) for one chart."""
    kind = ProcedureKind(kind)
    return [(s.label, s.name.value, s.src, s.dst) for s in STEPS[kind]
            if scope == "figure" or not s.figure_only]


# -- execution ---------------------------------------------------------------------

class _Run:
    def __init__(self, world: World, kind: str, steps: Sequence[Step], roles: Dict[str, NodeId],
                 scope: str, on_done: Optional[Callable[["_Run"], None]] = None,
                 bridging: bool = True):
        self.world = world
        self.bridging = bridging
        self.steps = [s for s in steps if scope == "figure" or not s.figure_only]
        self.roles = roles
        self.transcript = Transcript(kind, start=world.sim.now)
        self.on_done = on_done
        self.i = 0
        self.done = False

    def start(self) -> None:
        if not self.steps:
            self._finish()
            return
        self._send()

    def _charged(self, step: Step) -> Optional[str]:
        if step.charged == _S1:
            return "gamma" if self.world.opts.s1_signaling_hops == "gamma" else "lam"
        if step.charged == _EQ1:
            return self.world.opts.eq1_data_hops
        return step.charged

    def _send(self) -> None:
        step = self.steps[self.i]
        w = self.world
        src, dst = self.roles[step.src], self.roles[step.dst]
        size = getattr(w.params, step.size)
        frame = self.roles.get("_frame") if step.name is Msg.DataPacket else None
        msg = ControlMessage(step.name, src, dst, size, step.label, frame)
        w.sim.transmit(msg, w.links(src, dst, step.role, self._charged(step)), self._arrived)

    def _arrived(self, ev: SimEvent) -> None:
        step = self.steps[self.i]
        self.transcript.entries.append(TranscriptEntry(ev.at, ev.message))
        if step.effect:
            EFFECTS[step.effect](self, ev.message)
        self.i += 1
        if self.i < len(self.steps):
            self._send()
        else:
            self._finish()

    def _finish(self) -> None:
        self.done = True
        if self.on_done:
            self.on_done(self)


# state changes applied by the receiving entity

def _assign_gateway(run: _Run, msg: ControlMessage) -> None:
    # a single CGW per topology; multi-gateway selection is not modelled
    run.world.gateway_of[run.roles["ue"]] = msg.src


def _icna_allocate(run: _Run, msg: ControlMessage) -> None:
    w = run.world
    ue, bs = run.roles["ue"], run.roles["bs"]
    inner = w.allocate_inner(ue)
    gw = w.gateway_of.get(ue, w.topology.one(NodeKind.CGW))
    w.bindings.bind(inner, w.address(bs), w.controller, w.address(gw))
    w.cgw_routes[inner] = w.address(bs)


def _epc_bearer(run: _Run, msg: ControlMessage) -> None:
    w = run.world
    w.bearers.establish(run.roles["ue"], msg.dst, w.topology.one(NodeKind.PGW))


def _epc_allocate(run: _Run, msg: ControlMessage) -> None:
    # the PDN gateway hands out the UE address in 4G
    run.world.allocate_inner(run.roles["ue"])


def _attached(run: _Run, msg: ControlMessage) -> None:
    w = run.world
    w.attached[run.roles["ue"]] = run.roles["bs"]


def _bs_uplink(run: _Run, msg: ControlMessage) -> None:
    w = run.world
    ue = run.roles["ue"]
    bs = msg.dst
    dst_addr = w.address(run.roles["dest"])
    where = classify_destination(bs, dst_addr)
    if w.arch is Arch.EPC_4G:
        bearer = w.bearers.entries[ue]
        frame = codecs.encapsulate(
            Scheme.GTP_4G,
            Addressing(src=w.address(bs).value, dst=w.address(bearer.sgw).value,
                       teid=bearer.teid_uplink),
            bytes(int(w.params.S_d)))
    elif where is Destination.EXTERNAL:
        frame = codecs.encapsulate(
            Scheme.IPINIP_ICNA,
            Addressing(src=w.address(bs).value, dst=w.address(run.roles["gw"]).value,
                       inner_src=w.address(ue).value, inner_dst=dst_addr.value),
            bytes(int(w.params.S_d)), w.outer_header)
    else:
        frame = None  # encapsulated once the peer's locator is known
    run.roles["_frame"] = frame
    run.roles["_where"] = where


def _gw_decap(run: _Run, msg: ControlMessage) -> None:
    frame = msg.frame
    if frame is None:
        return
    out = codecs.decapsulate(frame)
    if out.addressing.dst != run.world.address(msg.dst).value:
        raise ProcedureError(f"{msg.dst} received a frame for someone else")


def _gw_echo(run: _Run, msg: ControlMessage) -> None:
    _gw_decap(run, msg)
    w = run.world
    ue = run.roles["ue"]
    run.roles["_frame"] = codecs.encapsulate(
        Scheme.IPINIP_ICNA,
        Addressing(src=w.address(msg.dst).value, dst=w.cgw_routes[w.address(ue)].value,
                   inner_src=w.address(run.roles["host"]).value, inner_dst=w.address(ue).value),
        bytes(int(w.params.S_d)), w.outer_header)


def _bs_locate_peer(run: _Run, msg: ControlMessage) -> None:
    w = run.world
    ue, peer = run.roles["ue"], run.roles["peer"]
    key = (msg.dst, w.address(peer))
    if key not in w.flow_cache:
        w.flow_cache[key] = uce_lookup(w.bindings, w.address(peer))
    outer = w.flow_cache[key]
    run.roles["peer_bs"] = w.topology.node_with_address(outer)
    run.roles["_frame"] = codecs.encapsulate(
        Scheme.IPINIP_ICNA,
        Addressing(src=w.address(msg.dst).value, dst=outer.value,
                   inner_src=w.address(ue).value, inner_dst=w.address(peer).value),
        bytes(int(w.params.S_d)), w.outer_header)


def _bs_uplink_cached(run: _Run, msg: ControlMessage) -> None:
    _bs_uplink(run, msg)
    _bs_locate_peer(run, msg)


def _gw_locate_ue(run: _Run, msg: ControlMessage) -> None:
    w = run.world
    ue = run.roles["ue"]
    inner = w.address(ue)
    outer = uce_lookup(w.bindings, inner)
    w.flow_cache[(msg.dst, inner)] = outer
    run.roles["serving_bs"] = w.topology.node_with_address(outer)
    run.roles["_frame"] = codecs.encapsulate(
        Scheme.IPINIP_ICNA,
        Addressing(src=w.address(msg.dst).value, dst=outer.value,
                   inner_src=w.address(run.roles["host"]).value, inner_dst=inner.value),
        bytes(int(w.params.S_d)), w.outer_header)


def _bs_decap(run: _Run, msg: ControlMessage) -> None:
    frame = msg.frame
    if frame is None:
        return
    out = codecs.decapsulate(frame)
    if out.addressing.dst != run.world.address(msg.dst).value:
        raise ProcedureError(f"{msg.dst} received a frame for someone else")


def _radio_to_target(run: _Run, msg: ControlMessage) -> None:
    run.world.move_radio(run.roles["ue"], run.roles["tgt_bs"])


def _epc_relocate(run: _Run, msg: ControlMessage) -> None:
    run.world.bearers.relocate(run.roles["ue"], run.roles["tgt_sgw"])


def _detach_and_bridge(run: _Run, msg: ControlMessage) -> None:
    w = run.world
    ue = run.roles["ue"]
    if run.bridging:
        w.open_bridge(ue, run.roles["src_bs"], run.roles["tgt_bs"])
        run.transcript.marks["bridge_up"] = w.sim.now
    w.move_radio(ue, run.roles["tgt_bs"])
    run.transcript.marks["detach"] = w.sim.now


def _uce_rebind(run: _Run, msg: ControlMessage) -> None:
    w = run.world
    w.bindings.move(w.address(run.roles["ue"]), w.address(run.roles["tgt_bs"]))


def _cgw_commit(run: _Run, msg: ControlMessage) -> None:
    w = run.world
    inner = w.address(run.roles["ue"])
    w.cgw_routes[inner] = w.address(run.roles["tgt_bs"])
    for key in [k for k in w.flow_cache if k[1] == inner]:
        w.flow_cache[key] = w.cgw_routes[inner]
    run.transcript.marks["commit"] = w.sim.now


def _release_bridge(run: _Run, msg: ControlMessage) -> None:
    run.world.close_bridge(run.roles["ue"])
    run.transcript.marks["release"] = run.world.sim.now


EFFECTS: Dict[str, Callable[[_Run, ControlMessage], None]] = {
    "assign_gateway": _assign_gateway,
    "icna_allocate": _icna_allocate,
    "epc_bearer": _epc_bearer,
    "epc_allocate": _epc_allocate,
    "attached": _attached,
    "bs_uplink": _bs_uplink,
    "gw_decap": _gw_decap,
    "gw_echo": _gw_echo,
    "bs_locate_peer": _bs_locate_peer,
    "bs_uplink_cached": _bs_uplink_cached,
    "gw_locate_ue": _gw_locate_ue,
    "bs_decap": _bs_decap,
    "radio_to_target": _radio_to_target,
    "epc_relocate": _epc_relocate,
    "detach_and_bridge": _detach_and_bridge,
    "uce_rebind": _uce_rebind,
    "cgw_commit": _cgw_commit,
    "release_bridge": _release_bridge,
}


def _roles(world: World, kind: ProcedureKind, ue: NodeId, target: Optional[NodeId],
           peer: Optional[NodeId]) -> Dict[str, NodeId]:
    t = world.topology
    roles: Dict[str, NodeId] = {"ue": ue, "ctrl": world.controller,
                                "hss": t.one(NodeKind.HSS), "host": t.one(NodeKind.INTERNET_HOST)}
    if world.arch is Arch.EPC_4G:
        roles["pgw"] = t.one(NodeKind.PGW)
        roles["gw"] = roles["pgw"]
    else:
        roles["gw"] = t.one(NodeKind.CGW)
    serving = world.attached.get(ue) or t.serving_bs(ue)
    roles["bs"] = roles["src_bs"] = serving
    if world.arch is Arch.EPC_4G:
        bearer = world.bearers.entries.get(ue)
        roles["sgw"] = bearer.sgw if bearer else t.sgw_for(serving)
    if kind in HANDOVERS:
        if target is None:
            candidates = [b for b in t.base_stations if b != serving]
            if not candidates:
                raise InvalidScenarioError("handover needs a second base station")
            target = candidates[0]
        if target == serving:
            raise InvalidScenarioError(f"{ue} is already served by {target}")
        roles["tgt_bs"] = target
        if world.arch is Arch.EPC_4G:
            roles["tgt_sgw"] = t.sgw_for(target)
    if kind is ProcedureKind.DATA_MH_MH:
        if peer is None:
            others = [u for u in t.ues if u != ue]
            if not others:
                raise InvalidScenarioError("mobile-to-mobile delivery needs a second UE")
            peer = others[0]
        roles["peer"] = peer
        roles["dest"] = peer
    elif kind in (ProcedureKind.DATA_MH_IH,) or kind.name.startswith("ATTACH"):
        roles["dest"] = roles["host"]
    return roles


def _check(world: World, kind: ProcedureKind, ue: NodeId, peer: Optional[NodeId]) -> None:
    want = ARCH_OF.get(kind, Arch.ICNA)
    if world.arch is not want:
        raise InvalidScenarioError(f"{kind.value} cannot run on a {world.arch.value} core")
    if kind.name.startswith("ATTACH"):
        if ue in world.attached:
            raise InvalidStateError(f"{ue} is already attached")
        return
    if ue not in world.attached:
        raise InvalidStateError(f"{ue} must attach before {kind.value}")
    if kind is ProcedureKind.DATA_MH_MH and peer is not None and peer not in world.attached:
        raise InvalidStateError(f"{peer} must attach before {kind.value}")


def start_procedure(world: World, kind, ue: Optional[NodeId] = None,
                    target: Optional[NodeId] = None, peer: Optional[NodeId] = None,
                    scope: str = "figure",
                    on_done: Optional[Callable[[_Run], None]] = None,
                    bridging: bool = True) -> _Run:
    """Kick off a procedure at the current simulated time without running the loop."""
    kind = ProcedureKind(kind)
    ue = ue or world.topology.ues[0]
    if kind is ProcedureKind.DATA_MH_MH and peer is None:
        others = [u for u in world.topology.ues if u != ue]
        peer = others[0] if others else None
    _check(world, kind, ue, peer)
    roles = _roles(world, kind, ue, target, peer)
    steps = STEPS[kind]
    if kind is ProcedureKind.DATA_MH_MH:
        if world.attached.get(peer) == roles["bs"]:
            steps = DATA_MH_MH_LOCAL_STEPS
        elif (roles["bs"], world.address(peer)) in world.flow_cache:
            steps = DATA_MH_MH_CACHED_STEPS
    run = _Run(world, kind.value, steps, roles, scope, on_done, bridging)
    run.start()
    return run


def run_procedure(world: World, kind, ue: Optional[NodeId] = None,
                  target: Optional[NodeId] = None, peer: Optional[NodeId] = None,
                  scope: str = "figure") -> Transcript:
    """Run one procedure to completion and return its transcript."""
    run = start_procedure(world, kind, ue, target, peer, scope)
    world.sim.run()
    if not run.done:
        raise ProcedureError(f"{kind} stalled")
    return run.transcript


def run_ttd_scenario(world: World, ue: Optional[NodeId] = None) -> Transcript:
    """Attach then one data round trip, restricted to the legs the TTD closed form counts."""
    ue = ue or world.topology.ues[0]
    attach = ProcedureKind.ATTACH_4G if world.arch is Arch.EPC_4G else ProcedureKind.ATTACH_ICNA
    _check(world, attach, ue, None)
    roles = _roles(world, attach, ue, None, None)
    echo = ECHO_4G_STEPS if world.arch is Arch.EPC_4G else ECHO_ICNA_STEPS
    kind = "TTD_4G" if world.arch is Arch.EPC_4G else "TTD_ICNA"
    run = _Run(world, kind, STEPS[attach] + echo, roles, "equation")
    run.start()
    world.sim.run()
    return run.transcript


def attach_all(world: World, scope: str = "figure") -> List[Transcript]:
    kind = ProcedureKind.ATTACH_4G if world.arch is Arch.EPC_4G else ProcedureKind.ATTACH_ICNA
    return [run_procedure(world, kind, ue, scope=scope) for ue in world.topology.ues
            if ue not in world.attached]


# -- handover under downlink load -------------------------------------------------

def _downlink_delays(world: World, ue: NodeId, source: NodeId, target: NodeId) -> Dict[str, int]:
    w = world
    t = w.topology
    size = w.params.S_d
    cgw = t.one(NodeKind.CGW)
    host = t.one(NodeKind.INTERNET_HOST)

    def ticks(a, b):
        return w.sim.path_ticks(path_links(t, compute_route(t, a, b)), size)

    radio = SimLink(target, ue, False)
    return {
        "d_in": ticks(host, cgw),
        "d_old": ticks(cgw, source),
        "d_new": ticks(cgw, target),
        "d_bridge": ticks(source, target),
        "d_radio": w.sim.link_ticks(radio, size),
    }


def handover_with_traffic(world: Optional[World] = None, rate_per_ms: float = 1.0,
                          bridging: bool = True, trigger_ms: float = 50.0,
                          flow_ms: Optional[float] = None, engine: str = "auto",
                          t_end_ms: Optional[float] = None) -> Transcript:
    """Inter-gateway handover while the Internet host streams to the UE.

    Packets leave the host every ``1 / rate_per_ms`` ms for ``flow_ms``
    (default: trigger plus 200 ms). ``engine="events"`` pushes every packet
    through the event loop; ``"kernel"`` runs only signaling in the loop and
    classifies packets in bulk. ``"auto"`` picks the kernel when radio delay
    is deterministic. ``t_end_ms`` (relative to flow start) stops the clock
    early so packets can remain in flight.
    """
    world = world or make_world(Arch.ICNA)
    if world.arch is not Arch.ICNA:
        raise InvalidScenarioError("GRE-bridged handover is an ICNA procedure")
    if rate_per_ms < 0:
        raise ValueError("rate must be >= 0")
    if engine == "auto":
        engine = "kernel" if world.sim.mode.mode is WireMode.EXPECTED_VALUE else "events"
    if engine not in ("kernel", "events"):
        raise ValueError(f"unknown engine {engine!r}")
    if engine == "kernel" and world.sim.mode.mode is not WireMode.EXPECTED_VALUE:
        raise ValueError("kernel engine needs deterministic radio delay")

    t = world.topology
    ue = t.ues[0]
    if ue not in world.attached:
        run_procedure(world, ProcedureKind.ATTACH_ICNA, ue)
    source = world.attached[ue]
    target = next(b for b in t.base_stations if b != source)
    flow_ms = trigger_ms + 200.0 if flow_ms is None else flow_ms

    t0 = world.sim.now
    n = int(math.ceil(flow_ms * rate_per_ms - 1e-12)) if rate_per_ms > 0 else 0
    inject = t0 + np.array([to_ticks(k / rate_per_ms) for k in range(n)], dtype=np.int64)
    t_end = None if t_end_ms is None else t0 + to_ticks(t_end_ms)
    delays = _downlink_delays(world, ue, source, target)

    holder: Dict[str, _Run] = {}

    def trigger(_ev):
        holder["run"] = start_procedure(world, ProcedureKind.INTER_GW_HO_ICNA, ue, target,
                                        bridging=bridging)

    if engine == "events":
        stats = _DownlinkFlow(world, ue, bridging)
        for k, at in enumerate(inject):
            world.sim.call_at(int(at), stats.inject, owner=t.one(NodeKind.INTERNET_HOST), tag=k)
    world.sim.call_at(t0 + to_ticks(trigger_ms), trigger, owner=source, tag="handover")

    if t_end is None:
        world.sim.run()
    else:
        world.sim.run_until(to_ms(t_end))
    run = holder.get("run")
    if run is None or not run.done:
        if t_end is None:
            raise ProcedureError("handover did not complete")
    tr = run.transcript if run is not None else Transcript(ProcedureKind.INTER_GW_HO_ICNA.value, start=t0)
    tr.kind = "INTER_GW_HO_ICNA+traffic"
    tr.packets_injected = n

    if engine == "events":
        tr.packets_delivered = stats.delivered
        tr.packets_lost = stats.lost
        tr.packets_in_flight = n - stats.delivered - stats.lost
        tr.drop_causes = dict(stats.causes)
        return tr

    marks = tr.marks
    never = np.iinfo(np.int64).max // 4
    outcome, _ = kernels.classify_downlink(
        inject + delays["d_in"],
        marks.get("commit", never), marks.get("detach", never),
        marks.get("bridge_up", never), marks.get("release", never),
        delays["d_old"], delays["d_new"], delays["d_bridge"], delays["d_radio"],
        bridging, never if t_end is None else t_end)
    counts = np.bincount(outcome, minlength=len(kernels.OUTCOME_NAMES))
    tr.packets_delivered = int(counts[kernels.SOURCE] + counts[kernels.BRIDGED]
                               + counts[kernels.NEW_PATH])
    tr.packets_lost = int(counts[kernels.DROPPED_NO_BRIDGE] + counts[kernels.DROPPED_BRIDGE_RELEASED])
    tr.packets_in_flight = int(counts[kernels.IN_FLIGHT])
    tr.drop_causes = {name: int(counts[code]) for code, name in
                      ((kernels.DROPPED_NO_BRIDGE, "no_bridge"),
                       (kernels.DROPPED_BRIDGE_RELEASED, "bridge_released")) if counts[code]}
    return tr


class _DownlinkFlow:
    """Per-packet event handlers for the downlink stream."""

    def __init__(self, world: World, ue: NodeId, bridging: bool):
        self.world = world
        self.ue = ue
        self.bridging = bridging
        self.delivered = 0
        self.lost = 0
        self.causes: Dict[str, int] = {}
        t = world.topology
        self.cgw = t.one(NodeKind.CGW)
        self.host = t.one(NodeKind.INTERNET_HOST)
        self.inner = world.address(ue)

    def _send(self, src, dst, handler, wired_path=True):
        w = self.world
        msg = ControlMessage(Msg.DataPacket, src, dst, w.params.S_d)
        if wired_path:
            links = path_links(w.topology, compute_route(w.topology, src, dst))
        else:
            links = [SimLink(src, dst, False)]
        w.sim.transmit(msg, links, handler)

    def inject(self, _ev) -> None:
        self._send(self.host, self.cgw, self.at_cgw)

    def at_cgw(self, _ev) -> None:
        w = self.world
        bs = w.topology.node_with_address(w.cgw_routes[self.inner])
        self._send(self.cgw, bs, self.at_bs)

    def at_bs(self, ev: SimEvent) -> None:
        w = self.world
        bs = ev.message.dst
        if w.attached.get(self.ue) == bs:
            self._send(bs, self.ue, self.at_ue, wired_path=False)
            return
        bridge = w.active_bridge(self.ue) if self.bridging else None
        if bridge is not None and bridge.source_bs == bs:
            self._send(bs, bridge.target_bs, self.at_bs)
            return
        cause = "bridge_released" if self.bridging and w.bridges.get(self.ue) else "no_bridge"
        self.lost += 1
        self.causes[cause] = self.causes.get(cause, 0) + 1

    def at_ue(self, _ev) -> None:
        self.delivered += 1
