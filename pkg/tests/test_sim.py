
import pytest
from hypothesis import given, settings, strategies as st

import oracle
from icnasim.delay import DEFAULT_PARAMS, wired_delay, wireless_delay
from icnasim.procedures import ControlMessage, Msg
from icnasim.sim import (TICKS_PER_MS, CausalityError, SimLink, Simulator, WireMode,
                         WirelessMode, format_ms, synthetic_links, to_ms, to_ticks)
from icnasim.topology import NodeId, NodeKind

UE = NodeId(NodeKind.UE, 0)
BS = NodeId(NodeKind.ENB_BS, 0)
GW = NodeId(NodeKind.CGW, 0)


def msg(size=50.0, src=UE, dst=GW):
    return ControlMessage(Msg.DataPacket, src, dst, size)


def test_tick_helpers():
    assert to_ticks(1.5) == 3 * TICKS_PER_MS // 2
    assert to_ms(to_ticks(14.008)) == pytest.approx(14.008)
    assert format_ms(to_ticks(6.5)) == "6.500000000000"


def test_events_dequeue_in_time_then_seq_order():
    sim = Simulator()
    seen = []
    for at, tag in [(5, "c"), (1, "a"), (5, "d"), (3, "b")]:
        sim.call_at(at, lambda ev: seen.append(ev.tag), tag=tag)
    sim.run()
    assert seen == ["a", "b", "c", "d"]
    assert sim.now == 5


def test_causality():
    sim = Simulator()
    sim.call_at(10, lambda ev: None)
    sim.run()
    with pytest.raises(CausalityError):
        sim.call_at(9, lambda ev: None)
    with pytest.raises(CausalityError):
        sim.run_until(0)


def test_run_until_leaves_later_events():
    sim = Simulator()
    hits = []
    sim.call_at(to_ticks(1), lambda ev: hits.append(1))
    sim.call_at(to_ticks(3), lambda ev: hits.append(3))
    sim.run_until(2.0)
    assert hits == [1] and len(sim) == 1 and sim.now == to_ticks(2)


def test_wired_and_wireless_link_delays():
    sim = Simulator()
    assert to_ms(sim.link_ticks(SimLink(BS, GW, True), 50)) == pytest.approx(7.004, abs=1e-9)
    assert to_ms(sim.link_ticks(SimLink(UE, BS, False), 50)) == pytest.approx(
        float(oracle.FROZEN["wl_50"]), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 20), st.integers(0, 3), st.floats(1, 1500), st.floats(0, 50))
def test_path_equals_closed_form(n_wired, n_radio, size, tq):
    p = DEFAULT_PARAMS.with_(T_q=tq)
    sim = Simulator(p)
    links = [SimLink(UE, BS, False)] * n_radio + synthetic_links(BS, GW, n_wired)
    got = []
    sim.transmit(msg(size), links, lambda ev: got.append(ev.at))
    sim.run()
    want = n_radio * wireless_delay(size, p) + wired_delay(size, n_wired, p)
    assert abs(to_ms(got[0]) - want) < 1e-9


def test_sum_of_link_ticks_is_exact():
    sim = Simulator()
    links = synthetic_links(BS, GW, 1000)
    assert sim.path_ticks(links, 50) == 1000 * sim.link_ticks(links[0], 50)


def test_stochastic_q0_equals_expected_with_unit_prefactor():
    p = DEFAULT_PARAMS.with_(q=0.0)
    exp = Simulator(p)
    sto = Simulator(p, mode=WirelessMode(WireMode.STOCHASTIC, 99))
    link = SimLink(UE, BS, False)
    for size in (50, 200, 1500):
        for _ in range(20):
            assert sto.link_ticks(link, size) == exp.link_ticks(link, size)
    assert to_ms(exp.link_ticks(link, 50)) == pytest.approx(float(oracle.FROZEN["wl_50_q0"]))


def test_stochastic_is_seeded():
    link = SimLink(UE, BS, False)

    def draws(seed):
        sim = Simulator(mode=WirelessMode(WireMode.STOCHASTIC, seed))
        return [sim.link_ticks(link, 50) for _ in range(200)]

    assert draws(1) == draws(1)
    assert draws(1) != draws(2)
    attempt = to_ticks(8 * 50 / 11e3 + 10)
    assert all(d % attempt == 0 and d >= attempt for d in draws(5))


def test_trace_format():
    sim = Simulator(trace=True)
    sim.transmit(msg(), [SimLink(UE, BS, False)])
    sim.call_at(to_ticks(100), lambda ev: None, owner=BS, tag="tick")
    sim.run()
    assert sim.trace[0] == f"{format_ms(to_ticks(float(oracle.FROZEN['wl_50'])))} 0 UE0 CGW0 DataPacket 50"
    assert sim.trace[1].endswith("BS0 BS0 timer:tick 0")


def test_mode_validation():
    with pytest.raises(ValueError):
        WirelessMode(WireMode.STOCHASTIC, -1)
    with pytest.raises(ValueError):
        WirelessMode("sometimes")
