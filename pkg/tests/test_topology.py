from collections import deque
from itertools import combinations

import pytest
from hypothesis import given, settings, strategies as st

from icnasim.delay import DEFAULT_HOPS, HopCounts
from icnasim.topology import (TRANSIT_KINDS, Address, AddressPool, AddressSpace, Arch,
                              BearerTable, BindingTable, Destination, InvalidDestinationError,
                              MOBILE_INNER_NET, NodeId, NodeKind, NoRouteError, Topology,
                              UnknownUEError, UnrealizableTopologyError, build_topology,
                              classify_destination, compute_route, data_route, uce_lookup)

hops_st = st.builds(HopCounts, *[st.integers(1, 6) for _ in range(6)])


def realizable(h):
    # base stations forward traffic, so controller -> BS -> gateway must not
    # undercut the configured controller-gateway distance
    return h.epsilon <= h.gamma + h.alpha


def build_or_check(h, arch, **kw):
    if not realizable(h):
        with pytest.raises(UnrealizableTopologyError):
            build_topology(h, arch, **kw)
        return None
    return build_topology(h, arch, **kw)


def bfs_oracle(t, src, dst):
    """Plain BFS with the same transit rule, written without the package's helpers."""
    adj = {}
    for l in t.links:
        adj.setdefault(l.a, []).append(l.b)
        adj.setdefault(l.b, []).append(l.a)
    seen = {src: 0}
    q = deque([src])
    while q:
        n = q.popleft()
        if n == dst:
            return seen[n]
        if n != src and n.kind not in TRANSIT_KINDS:
            continue
        for m in adj.get(n, []):
            if m not in seen:
                seen[m] = seen[n] + 1
                q.append(m)
    return None


def test_node_names():
    n = NodeId(NodeKind.L3_SWITCH, 12)
    assert str(n) == "L3S12"
    assert NodeId.parse("L3S12") == n
    assert NodeId.parse("HSS0") == NodeId(NodeKind.HSS, 0)
    with pytest.raises(ValueError):
        NodeId.parse("XYZ1")


def test_arch_parse():
    assert Arch.parse("4G") is Arch.EPC_4G
    assert Arch.parse("icna") is Arch.ICNA
    with pytest.raises(ValueError):
        Arch.parse("5g")


def test_defaults_examples():
    icna = build_topology(DEFAULT_HOPS, Arch.ICNA)
    bs = icna.base_stations[0]
    assert icna.distance(bs, icna.one(NodeKind.UCE)) == 2
    epc = build_topology(DEFAULT_HOPS, Arch.EPC_4G)
    assert epc.distance(epc.of_kind(NodeKind.SGW)[0], epc.one(NodeKind.PGW)) == 3


def test_bs_to_bs_route():
    t = build_topology(DEFAULT_HOPS, Arch.ICNA)
    b0, b1 = t.base_stations
    path = compute_route(t, b0, b1)
    assert len(path) - 1 == 2
    assert [n.kind for n in path[1:-1]] == [NodeKind.L3_SWITCH]
    assert compute_route(t, b0, b0) == [b0]


@pytest.mark.parametrize("arch", list(Arch))
def test_all_ones_is_minimal(arch):
    h = HopCounts(1, 1, 1, 1, 1, 1)
    t = build_topology(h, arch)
    assert not t.of_kind(NodeKind.L3_SWITCH)
    for a, b, role, d in t.realized_hops():
        assert d == 1


@pytest.mark.parametrize("arch", list(Arch))
def test_triangle_violation_rejected(arch):
    with pytest.raises(UnrealizableTopologyError):
        build_topology(HopCounts(alpha=1, beta=1, gamma=1, delta=1, epsilon=3, lam=1), arch)


def test_unrealizable_detected():
    t = build_topology(DEFAULT_HOPS.with_(gamma=4), Arch.ICNA)
    # a direct BS-UCE shortcut breaks the configured gamma
    t.add_link(t.base_stations[0], t.one(NodeKind.UCE))
    with pytest.raises(UnrealizableTopologyError):
        t.verify()


def test_no_route():
    t = Topology(Arch.ICNA, DEFAULT_HOPS)
    a = t.add_node(NodeKind.ENB_BS)
    b = t.add_node(NodeKind.ENB_BS)
    with pytest.raises(NoRouteError):
        compute_route(t, a, b)
    with pytest.raises(NoRouteError):
        compute_route(t, a, NodeId(NodeKind.CGW, 5))


def test_gateways_are_not_transit():
    t = build_topology(DEFAULT_HOPS, Arch.ICNA, n_bs=3)
    for a, b in combinations(t.base_stations, 2):
        assert all(n.kind in TRANSIT_KINDS for n in compute_route(t, a, b)[1:-1])


def test_tie_break_is_deterministic():
    t1 = build_topology(DEFAULT_HOPS, Arch.EPC_4G, n_bs=3)
    t2 = build_topology(DEFAULT_HOPS, Arch.EPC_4G, n_bs=3)
    assert t1.edge_list() == t2.edge_list()
    for a, b in combinations(t1.nodes, 2):
        try:
            r = compute_route(t1, a, b)
        except NoRouteError:
            continue
        assert r == compute_route(t2, a, b)


def test_addresses():
    assert Address.parse("10.1.2.3").space is AddressSpace.MOBILE_INNER
    assert Address.parse("192.168.0.9").space is AddressSpace.CORE_OUTER
    assert Address.parse("8.8.8.8").space is AddressSpace.EXTERNAL
    pool = AddressPool(MOBILE_INNER_NET)
    got = [pool.allocate() for _ in range(100)]
    assert len(set(got)) == 100
    t = build_topology(DEFAULT_HOPS, Arch.ICNA)
    spaces = {a.space for n, a in t.addresses.items() if n.kind is not NodeKind.INTERNET_HOST}
    assert spaces == {AddressSpace.CORE_OUTER}


def test_classify_destination():
    bs = NodeId(NodeKind.ENB_BS, 0)
    assert classify_destination(bs, Address.parse("10.0.0.7")) is Destination.SAME_MOBILE_NETWORK
    assert classify_destination(bs, Address.parse("1.1.1.1")) is Destination.EXTERNAL
    with pytest.raises(InvalidDestinationError):
        classify_destination(bs, Address.parse("192.168.0.1"))


def test_binding_table():
    tb = BindingTable()
    inner = Address.parse("10.0.0.1")
    bs1, bs2 = Address.parse("192.168.0.1"), Address.parse("192.168.0.2")
    tb.bind(inner, bs1, NodeId(NodeKind.UCE, 0), Address.parse("192.168.0.9"))
    assert uce_lookup(tb, inner) == bs1
    tb.move(inner, bs2)
    assert uce_lookup(tb, inner) == bs2
    with pytest.raises(ValueError):
        tb.bind(inner, bs1, NodeId(NodeKind.UCE, 0), bs1)
    with pytest.raises(UnknownUEError):
        uce_lookup(tb, Address.parse("10.0.0.2"))


def test_bearer_relocate_requires_bearer():
    with pytest.raises(UnknownUEError):
        BearerTable().relocate(NodeId(NodeKind.UE, 0), NodeId(NodeKind.SGW, 0))


# -- properties ------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(hops_st, st.sampled_from(list(Arch)), st.integers(1, 4))
def test_realized_hops_match_configuration(h, arch, n_bs):
    t = build_or_check(h, arch, n_bs=n_bs)
    if t is None:
        return
    assert t.constraints
    for a, b, role in t.constraints:
        assert bfs_oracle(t, a, b) == h[role] == t.distance(a, b)
    # connected: every node reachable from the first base station over raw links
    adj = {}
    for l in t.links:
        adj.setdefault(l.a, set()).add(l.b)
        adj.setdefault(l.b, set()).add(l.a)
    seen, stack = set(), [t.base_stations[0]]
    while stack:
        n = stack.pop()
        if n not in seen:
            seen.add(n)
            stack.extend(adj[n] - seen)
    assert seen == set(t.nodes)


@settings(max_examples=60, deadline=None)
@given(hops_st, st.integers(2, 4))
def test_routes_are_shortest(h, n_bs):
    t = build_or_check(h, Arch.ICNA, n_bs=n_bs)
    if t is None:
        return
    for a, b in combinations(t.base_stations + [t.one(NodeKind.UCE), t.one(NodeKind.CGW)], 2):
        path = compute_route(t, a, b)
        assert len(path) - 1 == bfs_oracle(t, a, b)
        assert all(t.has_link(x, y) for x, y in zip(path, path[1:]))


@settings(max_examples=60, deadline=None)
@given(hops_st, st.integers(2, 4), st.integers(2, 6))
def test_path_membership(h, n_bs, n_ues):
    if not realizable(h):
        return
    icna = build_topology(h, Arch.ICNA, n_bs=n_bs, n_ues=n_ues)
    cgw = icna.one(NodeKind.CGW)
    for a, b in combinations(icna.ues, 2):
        assert cgw not in data_route(icna, a, b)
    epc = build_topology(h, Arch.EPC_4G, n_bs=n_bs, n_ues=n_ues)
    for a, b in combinations(epc.ues, 2):
        kinds = {n.kind for n in data_route(epc, a, b)}
        assert {NodeKind.SGW, NodeKind.PGW} <= kinds


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), max_size=40))
def test_lookup_after_alternating_handovers(moves):
    tb = BindingTable()
    inner = Address.parse("10.0.0.1")
    bss = [Address.parse("192.168.0.1"), Address.parse("192.168.0.2")]
    tb.bind(inner, bss[0], NodeId(NodeKind.UCE, 0), Address.parse("192.168.0.9"))
    serving = 0
    for commit in moves:
        # a handover that never commits leaves the binding alone
        if commit:
            serving = 1 - serving
            tb.move(inner, bss[serving])
        assert uce_lookup(tb, inner) == bss[serving]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 2)), max_size=60))
def test_teids_unique_per_gateway(ops):
    table = BearerTable()
    seen = {}
    pgw = NodeId(NodeKind.PGW, 0)
    for ue, sgw in ops:
        ue, sgw = NodeId(NodeKind.UE, ue), NodeId(NodeKind.SGW, sgw)
        if ue in table and sgw.index % 2:
            b = table.relocate(ue, sgw)
        else:
            b = table.establish(ue, sgw, pgw)
        assert b.teid_uplink is not None and b.teid_downlink is not None
        for teid in (b.teid_uplink, b.teid_downlink):
            assert teid not in seen.setdefault(sgw, set())
            seen[sgw].add(teid)
