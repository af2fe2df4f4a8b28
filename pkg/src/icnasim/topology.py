"""Network entities, address spaces, binding state and hop-count routing."""
from __future__ import annotations

import ipaddress
import itertools
from collections import deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Dict, List, Optional, Sequence, Tuple

from .delay import DEFAULT_HOPS, HopCounts


class TopologyError(Exception):
    pass


class UnrealizableTopologyError(TopologyError):
    pass


class NoRouteError(TopologyError):
    pass


class UnknownUEError(KeyError):
    pass


class InvalidDestinationError(ValueError):
    pass


class Arch(str, Enum):
    EPC_4G = "4g"
    ICNA = "icna"

    @classmethod
    def parse(cls, value) -> "Arch":
        if isinstance(value, Arch):
            return value
        v = str(value).strip().lower()
        aliases = {"4g": cls.EPC_4G, "epc": cls.EPC_4G, "epc_4g": cls.EPC_4G, "icna": cls.ICNA}
        try:
            return aliases[v]
        except KeyError:
            raise ValueError(f"unknown architecture {value!r}") from None


class NodeKind(IntEnum):
    UE = 0
    ENB_BS = 1
    SGW = 2
    PGW = 3
    MME = 4
    HSS = 5
    UCE = 6
    CGW = 7
    L3_SWITCH = 8
    INTERNET_HOST = 9


_PREFIX = {
    NodeKind.UE: "UE", NodeKind.ENB_BS: "BS", NodeKind.SGW: "SGW", NodeKind.PGW: "PGW",
    NodeKind.MME: "MME", NodeKind.HSS: "HSS", NodeKind.UCE: "UCE", NodeKind.CGW: "CGW",
    NodeKind.L3_SWITCH: "L3S", NodeKind.INTERNET_HOST: "HOST",
}

# Only switches and base stations forward traffic for others; controllers and
# gateways appear on a route only as endpoints or explicit waypoints.
TRANSIT_KINDS = frozenset({NodeKind.L3_SWITCH, NodeKind.ENB_BS})


@dataclass(frozen=True, order=True)
class NodeId:
    kind: NodeKind
    index: int

    def __str__(self) -> str:
        return f"{_PREFIX[self.kind]}{self.index}"

    @classmethod
    def parse(cls, text: str) -> "NodeId":
        for kind, prefix in sorted(_PREFIX.items(), key=lambda kv: -len(kv[1])):
            if text.startswith(prefix) and text[len(prefix):].isdigit():
                return cls(kind, int(text[len(prefix):]))
        raise ValueError(f"not a node name: {text!r}")


# -- addresses ---------------------------------------------------------------

class AddressSpace(str, Enum):
    MOBILE_INNER = "inner"
    CORE_OUTER = "outer"
    EXTERNAL = "external"


MOBILE_INNER_NET = ipaddress.IPv4Network("10.0.0.0/8")
CORE_OUTER_NET = ipaddress.IPv4Network("192.168.0.0/16")


@dataclass(frozen=True, order=True)
class Address:
    value: int

    def __post_init__(self):
        if not 0 <= self.value <= 0xFFFFFFFF:
            raise ValueError(f"not a 32-bit address: {self.value}")

    @property
    def space(self) -> AddressSpace:
        ip = ipaddress.IPv4Address(self.value)
        if ip in MOBILE_INNER_NET:
            return AddressSpace.MOBILE_INNER
        if ip in CORE_OUTER_NET:
            return AddressSpace.CORE_OUTER
        return AddressSpace.EXTERNAL

    @classmethod
    def parse(cls, text: str) -> "Address":
        return cls(int(ipaddress.IPv4Address(text)))

    def __str__(self) -> str:
        return str(ipaddress.IPv4Address(self.value))


class AddressPool:
    """Sequential allocator over one address range; never hands out twice."""

    def __init__(self, network: ipaddress.IPv4Network):
        self._hosts = network.hosts()
        self.allocated: set = set()

    def allocate(self) -> Address:
        try:
            addr = Address(int(next(self._hosts)))
        except StopIteration:
            raise TopologyError("address pool exhausted") from None
        self.allocated.add(addr)
        return addr


class Destination(str, Enum):
    SAME_MOBILE_NETWORK = "same_mobile_network"
    EXTERNAL = "external"


def classify_destination(bs: NodeId, dst: Address) -> Destination:
    """Decide at ``bs`` whether ``dst`` lives inside the mobile network."""
    space = dst.space
    if space is AddressSpace.MOBILE_INNER:
        return Destination.SAME_MOBILE_NETWORK
    if space is AddressSpace.EXTERNAL:
        return Destination.EXTERNAL
    raise InvalidDestinationError(
        f"{dst} is a core locator, not a data destination (seen at {bs})")


# -- binding state -----------------------------------------------------------

@dataclass
class Binding:
    outer: Address
    uce: NodeId
    gateway: Address


class BindingTable:
    """UCE view: UE inner address -> serving node locator."""

    def __init__(self):
        self.entries: Dict[Address, Binding] = {}

    def bind(self, inner: Address, outer: Address, uce: NodeId, gateway: Address) -> None:
        if inner in self.entries:
            raise ValueError(f"{inner} already bound")
        self.entries[inner] = Binding(outer, uce, gateway)

    def move(self, inner: Address, outer: Address) -> None:
        self._get(inner).outer = outer

    def _get(self, inner: Address) -> Binding:
        try:
            return self.entries[inner]
        except KeyError:
            raise UnknownUEError(f"no binding for {inner}") from None

    def __contains__(self, inner: Address) -> bool:
        return inner in self.entries

    def __len__(self) -> int:
        return len(self.entries)


def uce_lookup(table: BindingTable, inner: Address) -> Address:
    return table._get(inner).outer


@dataclass
class Bearer:
    teid_uplink: int
    teid_downlink: int
    sgw: NodeId
    pgw: NodeId


class BearerTable:
    """4G analogue of the binding table: one GTP bearer per UE."""

    def __init__(self):
        self.entries: Dict[NodeId, Bearer] = {}
        self._teids: Dict[NodeId, itertools.count] = {}

    def _next_teid(self, gateway: NodeId) -> int:
        return next(self._teids.setdefault(gateway, itertools.count(1)))

    def establish(self, ue: NodeId, sgw: NodeId, pgw: NodeId) -> Bearer:
        bearer = Bearer(self._next_teid(sgw), self._next_teid(sgw), sgw, pgw)
        self.entries[ue] = bearer
        return bearer

    def relocate(self, ue: NodeId, sgw: NodeId) -> Bearer:
        old = self.entries.get(ue)
        if old is None:
            raise UnknownUEError(f"{ue} has no bearer")
        return self.establish(ue, sgw, old.pgw)

    def __contains__(self, ue: NodeId) -> bool:
        return ue in self.entries


# -- topology ----------------------------------------------------------------

@dataclass(frozen=True)
class Link:
    a: NodeId
    b: NodeId
    wired: bool = True


@dataclass
class Topology:
    arch: Arch
    hops: HopCounts
    nodes: List[NodeId] = field(default_factory=list)
    links: List[Link] = field(default_factory=list)
    addresses: Dict[NodeId, Address] = field(default_factory=dict)
    # (node_a, node_b, role) whose shortest path must equal hops[role]
    constraints: List[Tuple[NodeId, NodeId, str]] = field(default_factory=list)

    def __post_init__(self):
        self._adj: Dict[NodeId, List[NodeId]] = {}
        self._order: Dict[NodeId, int] = {}
        self._wired: Dict[frozenset, bool] = {}
        self._counters: Dict[NodeKind, itertools.count] = {}

    # construction helpers
    def add_node(self, kind: NodeKind) -> NodeId:
        idx = next(self._counters.setdefault(kind, itertools.count()))
        node = NodeId(kind, idx)
        self._order[node] = len(self.nodes)
        self.nodes.append(node)
        self._adj[node] = []
        return node

    def add_link(self, a: NodeId, b: NodeId, wired: bool = True) -> None:
        if frozenset((a, b)) in self._wired:
            raise TopologyError(f"duplicate link {a}-{b}")
        self.links.append(Link(a, b, wired))
        self._adj[a].append(b)
        self._adj[b].append(a)
        self._wired[frozenset((a, b))] = wired

    def remove_link(self, a: NodeId, b: NodeId) -> None:
        key = frozenset((a, b))
        if key not in self._wired:
            raise TopologyError(f"no link {a}-{b}")
        del self._wired[key]
        self.links = [l for l in self.links if frozenset((l.a, l.b)) != key]
        self._adj[a].remove(b)
        self._adj[b].remove(a)

    def chain(self, a: NodeId, b: NodeId, hops: int) -> None:
        prev = a
        for _ in range(hops - 1):
            sw = self.add_node(NodeKind.L3_SWITCH)
            self.add_link(prev, sw)
            prev = sw
        self.add_link(prev, b)

    # queries
    def neighbors(self, node: NodeId) -> List[NodeId]:
        return self._adj[node]

    def has_link(self, a: NodeId, b: NodeId) -> bool:
        return frozenset((a, b)) in self._wired

    def is_wired(self, a: NodeId, b: NodeId) -> bool:
        try:
            return self._wired[frozenset((a, b))]
        except KeyError:
            raise NoRouteError(f"no link {a}-{b}") from None

    def __contains__(self, node: NodeId) -> bool:
        return node in self._order

    def of_kind(self, kind: NodeKind) -> List[NodeId]:
        return [n for n in self.nodes if n.kind is kind]

    def one(self, kind: NodeKind) -> NodeId:
        found = self.of_kind(kind)
        if not found:
            raise TopologyError(f"topology has no {kind.name}")
        return found[0]

    @property
    def base_stations(self) -> List[NodeId]:
        return self.of_kind(NodeKind.ENB_BS)

    @property
    def ues(self) -> List[NodeId]:
        return self.of_kind(NodeKind.UE)

    def serving_bs(self, ue: NodeId) -> NodeId:
        for n in self._adj[ue]:
            if n.kind is NodeKind.ENB_BS:
                return n
        raise TopologyError(f"{ue} is not associated with any base station")

    def reassociate(self, ue: NodeId, bs: NodeId) -> None:
        self.remove_link(ue, self.serving_bs(ue))
        self.add_link(ue, bs, wired=False)

    def sgw_for(self, bs: NodeId) -> NodeId:
        return NodeId(NodeKind.SGW, bs.index)

    def node_with_address(self, addr: Address) -> NodeId:
        for node, a in self.addresses.items():
            if a == addr:
                return node
        raise KeyError(f"no node holds {addr}")

    def distance(self, src: NodeId, dst: NodeId) -> int:
        return len(compute_route(self, src, dst)) - 1

    def realized_hops(self) -> List[Tuple[NodeId, NodeId, str, int]]:
        out = []
        for a, b, role in self.constraints:
            try:
                d = self.distance(a, b)
            except NoRouteError:
                d = -1
            out.append((a, b, role, d))
        return out

    def verify(self) -> None:
        """Raise if any constrained role pair is not at its configured distance."""
        h = self.hops
        bad = [(a, b, role, d) for a, b, role, d in self.realized_hops() if d != h[role]]
        if bad:
            desc = "; ".join(f"{a}-{b} {role}={h[role]} realized {d}" for a, b, role, d in bad)
            raise UnrealizableTopologyError(f"hop counts admit no graph: {desc}")

    def edge_list(self) -> str:
        return "".join(f"{l.a} {l.b} {'wired' if l.wired else 'wireless'}\n" for l in self.links)


def _bfs_distances(t: Topology, dst: NodeId) -> Dict[NodeId, int]:
    dist = {dst: 0}
    queue = deque([dst])
    while queue:
        node = queue.popleft()
        if node != dst and node.kind not in TRANSIT_KINDS:
            continue
        for nb in t.neighbors(node):
            if nb not in dist:
                dist[nb] = dist[node] + 1
                queue.append(nb)
    return dist


def compute_route(t: Topology, src: NodeId, dst: NodeId,
                  via: Sequence[NodeId] = ()) -> List[NodeId]:
    """Shortest hop-count path from ``src`` to ``dst``, optionally through waypoints.

    Ties go to the lexicographically smallest sequence of node creation
    indices. Intermediate nodes must be switches or base stations.
    """
    for n in (src, dst, *via):
        if n not in t:
            raise NoRouteError(f"{n} is not in the topology")
    stops = [src, *via, dst]
    path = [src]
    for a, b in zip(stops, stops[1:]):
        path.extend(_segment(t, a, b)[1:])
    return path


def _segment(t: Topology, src: NodeId, dst: NodeId) -> List[NodeId]:
    if src == dst:
        return [src]
    dist = _bfs_distances(t, dst)
    if src not in dist:
        raise NoRouteError(f"no route {src} -> {dst}")
    path = [src]
    node = src
    order = t._order
    while node != dst:
        d = dist[node]
        candidates = [nb for nb in t.neighbors(node)
                      if dist.get(nb) == d - 1 and (nb == dst or nb.kind in TRANSIT_KINDS)]
        node = min(candidates, key=order.__getitem__)
        path.append(node)
    return path


def data_route(t: Topology, src: NodeId, dst: NodeId,
               sgw: Optional[Dict[NodeId, NodeId]] = None) -> List[NodeId]:
    """User-plane path as each architecture forwards it.

    EPC traffic is anchored: it climbs the GTP tunnel to the serving SGW and
    the PGW before descending again. ICNA traffic follows the plain shortest
    path between base stations, leaving the core only at the CGW for
    Internet destinations. ``sgw`` overrides the serving SGW per UE.
    """
    sgw = sgw or {}

    def serving_sgw(ue: NodeId) -> NodeId:
        return sgw.get(ue) or t.sgw_for(t.serving_bs(ue))

    ends = {src.kind, dst.kind}
    if t.arch is Arch.ICNA:
        if NodeKind.INTERNET_HOST in ends:
            cgw = t.one(NodeKind.CGW)
            return compute_route(t, src, dst, via=(cgw,))
        return compute_route(t, src, dst)
    pgw = t.one(NodeKind.PGW)
    via: List[NodeId] = []
    if src.kind is NodeKind.UE:
        via.append(serving_sgw(src))
    via.append(pgw)
    if dst.kind is NodeKind.UE:
        via.append(serving_sgw(dst))
    return compute_route(t, src, dst, via=via)


def build_topology(h: HopCounts = DEFAULT_HOPS, arch=Arch.ICNA, n_bs: int = 2,
                   n_ues: Optional[int] = None) -> Topology:
    """Realize ``h`` as a graph of role anchors joined by L3 switch chains.

    Base stations form a line (BS0 - BS1 - ...) with ``lam`` hops between
    neighbours. EPC gets one SGW per eNB so handovers relocate the SGW.
    UEs are spread round-robin over the base stations.
    """
    arch = Arch.parse(arch)
    if n_bs < 1:
        raise ValueError("need at least one base station")
    n_ues = n_bs if n_ues is None else n_ues
    t = Topology(arch, h)
    outer = AddressPool(CORE_OUTER_NET)

    ues = [t.add_node(NodeKind.UE) for _ in range(n_ues)]
    bss = [t.add_node(NodeKind.ENB_BS) for _ in range(n_bs)]
    if arch is Arch.EPC_4G:
        sgws = [t.add_node(NodeKind.SGW) for _ in range(n_bs)]
        pgw = t.add_node(NodeKind.PGW)
        ctrl = t.add_node(NodeKind.MME)
        hss = t.add_node(NodeKind.HSS)
        host = t.add_node(NodeKind.INTERNET_HOST)
        for bs, sgw in zip(bss, sgws):
            t.chain(bs, sgw, h.alpha)
            t.constraints.append((bs, sgw, "alpha"))
        for sgw in sgws:
            t.chain(sgw, pgw, h.beta)
            t.constraints.append((sgw, pgw, "beta"))
            t.chain(ctrl, sgw, h.epsilon)
            t.constraints.append((ctrl, sgw, "epsilon"))
        gateway = pgw
        anchored = sgws + [pgw]
    else:
        ctrl = t.add_node(NodeKind.UCE)
        cgw = t.add_node(NodeKind.CGW)
        hss = t.add_node(NodeKind.HSS)
        host = t.add_node(NodeKind.INTERNET_HOST)
        for bs in bss:
            t.chain(bs, cgw, h.alpha)
            t.constraints.append((bs, cgw, "alpha"))
        t.chain(ctrl, cgw, h.epsilon)
        t.constraints.append((ctrl, cgw, "epsilon"))
        gateway = cgw
        anchored = [cgw]
    for bs in bss:
        t.chain(bs, ctrl, h.gamma)
        t.constraints.append((bs, ctrl, "gamma"))
    t.chain(ctrl, hss, h.delta)
    t.constraints.append((ctrl, hss, "delta"))
    for a, b in zip(bss, bss[1:]):
        t.chain(a, b, h.lam)
        t.constraints.append((a, b, "lam"))
    t.add_link(gateway, host)
    for i, ue in enumerate(ues):
        t.add_link(ue, bss[i % n_bs], wired=False)

    for node in bss + anchored + [ctrl, hss]:
        t.addresses[node] = outer.allocate()
    t.addresses[host] = Address.parse("8.8.8.8")

    t.verify()
    return t
