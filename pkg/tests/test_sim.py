import csv
import io
import random

import pytest

from mpfair.hwf import FairnessPolicy, water_fill
from mpfair.scenario import builtin_scenario, load_scenario
from mpfair.sim import (BITMARK, TURNAROUND, MergePoint, MergeQueue, RMCell, SourceState,
                        SwitchRateState, conservation_check, count_interleavings,
                        merge_dequeue, merge_enqueue, merge_on_brm, merge_on_frm,
                        per_source_state, run_simulation, source_on_brm, source_tick,
                        switch_stamp_er)
from mpfair.sim.cells import BACKWARD, FORWARD
from mpfair.sim.engine import TRACE_COLUMNS, steady_stats
from mpfair.sim.probe import chain_scenario, feedback_delay_probe, is_monotone, leaf_delays
from mpfair.topology import Endpoint, Link

ONE_LINK = """\
switch X
link a src:S sw:X:1 150
link e sw:X:9 dst:D 150
vc V dst D sources S
route V X 1 -> 9
"""


def brm(er, vc="M"):
    return RMCell(vc, BACKWARD, er, er, "S1", 0.0)


def frm(vc="M", origin="S1"):
    return RMCell(vc, FORWARD, 150, 10, origin, 0.0)


# -- sources ---------------------------------------------------------------

def test_source_brm_rules():
    st = SourceState("S1", "M", 150)
    st.acr = 10
    assert source_on_brm(st, brm(37.5)).acr == 37.5
    assert source_on_brm(st, brm(200)).acr == 150
    source_on_brm(st, brm(150))
    assert st.acr == 150


def test_source_defaults():
    st = SourceState("S1", "M", 150)
    assert st.icr == 5 and st.acr == 5 and st.nrm == 32


def test_source_frm_cadence():
    st = SourceState("S1", "M", 150, nrm=32)
    cells = source_tick(st, 0.0, 64)
    rms = [c for c in cells if c.is_rm]
    assert len(rms) == 2
    assert rms[0].er == 150 and rms[0].ccr == st.acr and rms[0].direction == FORWARD
    assert cells[0].is_rm and cells[32].is_rm


def test_source_eom_marks_packets():
    st = SourceState("S1", "M", 150, packet_cells=4)
    data = [c for c in source_tick(st, 0.0, 40) if not c.is_rm]
    assert [c.eom for c in data[:8]] == [False, False, False, True] * 2


def test_source_zero_acr_silent():
    st = SourceState("S1", "M", 150)
    st.on_brm(0)
    assert source_tick(st, 0.0, 5) == []


# -- merge points ----------------------------------------------------------

def test_turnaround_frm():
    mp = MergePoint(["1", "2"], TURNAROUND, 150)
    mp.mer = 37.5
    fwd, replies = merge_on_frm(mp, frm(), "2")
    assert fwd.direction == FORWARD
    assert [(b, c.er, c.direction) for b, c in replies] == [("2", 37.5, BACKWARD)]
    assert mp.mer == 150


def test_turnaround_brm_discarded():
    mp = MergePoint(["1", "2"], TURNAROUND, 150)
    assert merge_on_brm(mp, brm(25)) == []
    assert mp.mer == 25
    merge_on_brm(mp, brm(40))
    assert mp.mer == 40  # assignment, not min
    low = MergePoint(["1"], TURNAROUND, 150, mer_min=True)
    merge_on_brm(low, brm(25))
    merge_on_brm(low, brm(40))
    assert low.mer == 25


def test_bitmark_frm_sets_bit():
    mp = MergePoint(["1", "2", "3"], BITMARK, 150)
    for _ in range(2):
        fwd, replies = merge_on_frm(mp, frm(), "1")
        assert replies == [] and fwd.direction == FORWARD
    assert mp.bits == {"1": True, "2": False, "3": False}
    assert mp.frm_out == 2


def test_bitmark_brm_copies():
    mp = MergePoint(["b1", "b2", "b3"], BITMARK, 150)
    mp.bits = {"b1": True, "b2": False, "b3": True}
    out = merge_on_brm(mp, brm(30))
    assert [b for b, _ in out] == ["b1", "b3"]
    assert not any(mp.bits.values())
    assert merge_on_brm(mp, brm(30)) == []


def test_unknown_algorithm():
    with pytest.raises(ValueError):
        MergePoint(["1"], "magic", 150)


# -- merge queue -----------------------------------------------------------

def test_merge_queue_two_packets():
    q = MergeQueue()
    arrivals = [("A", "A1", False), ("B", "B1", False), ("A", "A2", False),
                ("B", "B2", True), ("A", "A3", True)]
    out = []
    for flow, cell, eom in arrivals:
        out += [c for _f, c, _e in merge_enqueue(q, flow, cell, eom)]
    out += [c for _f, c, _e in merge_dequeue(q)]
    assert out == ["A1", "A2", "A3", "B1", "B2"]


def test_merge_queue_single_flow_passthrough():
    q = MergeQueue()
    cells = [(i, i % 3 == 2) for i in range(12)]
    out = [c for i, e in cells for _f, c, _e in q.enqueue("A", i, e)]
    assert out == list(range(12))


def test_merge_queue_round_robin():
    q = MergeQueue()
    out = []
    for flow in ("A", "B", "C"):
        out += q.enqueue(flow, flow + "1", False)
    for flow in ("B", "C", "A"):
        out += q.enqueue(flow, flow + "2", True)
    assert [c for _f, c, _e in out] == ["A1", "A2", "B1", "B2", "C1", "C2"]


def test_merge_queue_bounded_drops():
    q = MergeQueue(limit=2)
    q.enqueue("A", "A1", False)
    for i in range(4):
        q.enqueue("B", f"B{i}", False)
    assert q.drops == 2 and q.buffered == 2


def test_interleaving_scanner():
    assert count_interleavings([("A", False), ("A", True), ("B", True)]) == 0
    assert count_interleavings([("A", False), ("B", True), ("A", True)]) == 1
    assert count_interleavings([("A", False), ("B", False), ("A", True), ("B", True)]) == 2


def test_merge_queue_random_stress():
    rng = random.Random(5)
    q = MergeQueue()
    stream = []
    remaining = {f: 300 for f in "ABC"}
    left = {f: 0 for f in "ABC"}
    while any(remaining.values()) or any(left.values()):
        f = rng.choice([x for x in "ABC" if remaining[x] or left[x]])
        if left[f] == 0:
            left[f] = rng.randint(1, 6)
            remaining[f] -= 1
        left[f] -= 1
        stream += [(fl, e) for fl, _c, e in q.enqueue(f, None, left[f] == 0)]
    assert count_interleavings(stream) == 0
    assert sum(e for _f, e in stream) == 900


# -- switch ER ---------------------------------------------------------------

def _port(policy=FairnessPolicy.SOURCE, mode="vc", cap=150):
    link = Link("x", Endpoint("sw", "X", "9"), Endpoint("dst", "D"), cap)
    return SwitchRateState("X", link, policy, mode, utilization=1.0)


def test_stamp_min_rule():
    ps = _port()
    ps.share = 37.5
    assert switch_stamp_er(ps, brm(150), "1").er == 37.5
    assert switch_stamp_er(ps, brm(20), "1").er == 20


def test_scalar_share_converges_to_equal_split():
    ps = _port()
    # four sources that each take whatever the share allows
    for _ in range(60):
        rate = min(150.0, ps.share)
        for _ in range(int(round(4 * rate * 1000 / 424))):
            ps.count("M", "1")
        ps.end_interval()
    assert ps.share == pytest.approx(37.5, rel=0.02)


def test_vp_share_is_waterfill_level():
    ps = _port(mode="vp")
    for src, cells in (("S1", 59), ("S2", 59), ("S3", 236)):
        for _ in range(cells):
            ps.count("M", "1", src)
    ps.end_interval()
    # two light senders keep their rate, the rest goes to the heaviest
    assert ps.share == pytest.approx(150 - 2 * 59 * 0.424, rel=1e-9)
    ps = _port(mode="vp")
    for src in ("S1", "S2", "S3"):
        for _ in range(236):
            ps.count("M", "1", src)
    ps.end_interval()
    assert ps.share == pytest.approx(50)


def test_vc_merge_has_no_source_state():
    ps = _port()
    ps.count("M", "1", "S1")
    ps.end_interval()
    assert ps.source_cells is None and ps.source_rates is None
    assert "S1" not in str(ps.state_keys())


def test_flow_stamp_subdivides_downstream():
    ps = _port(FairnessPolicy.VC_FLOW)
    for _ in range(100):
        ps.count("M", "1")
        ps.count("M", "2")
    ps.end_interval()
    # downstream granted 60 to the VC; this port splits it between its two flows
    assert ps.stamp("M", "1", 60.0) == pytest.approx(30.0)


def test_queue_drain_lowers_target():
    ps = _port()
    ps.end_interval(queue_cells=0)
    full = ps.target
    ps.end_interval(queue_cells=550)
    assert full == 150 and ps.target == pytest.approx(150 - 500 * 424 / 10000)


# -- engine ----------------------------------------------------------------

def test_single_source_reaches_target():
    sc = load_scenario(ONE_LINK)
    res = run_simulation(sc, "source", duration_ms=100)
    assert res.steady_rates["S"] == pytest.approx(150 * 0.95, rel=0.01)
    assert res.converged


def test_determinism():
    sc = builtin_scenario("example1")
    a = run_simulation(sc, "source", BITMARK, "vc", 30, seed=7)
    b = run_simulation(sc, "source", BITMARK, "vc", 30, seed=7)
    assert a.trace_csv() == b.trace_csv()
    c = run_simulation(sc, "source", BITMARK, "vc", 30, seed=8)
    assert c.trace_csv() != a.trace_csv()


def test_trace_schema():
    res = run_simulation(builtin_scenario("example1"), "source", duration_ms=5)
    rows = list(csv.reader(io.StringIO(res.trace_csv())))
    assert tuple(rows[0]) == TRACE_COLUMNS
    kinds = {r[1] for r in rows[1:]}
    assert {"source", "link", "port"} <= kinds


def test_zero_duration_not_converged():
    res = run_simulation(builtin_scenario("example1"), "source", duration_ms=0)
    assert res.trace == [] and not res.converged


def test_steady_stats():
    mean, amp = steady_stats([0, 0, 0, 9, 11, 10, 10, 10])
    assert mean == 10 and amp == pytest.approx(0.0)
    assert steady_stats([])[1] == float("inf")


def test_vp_reports_source_rates():
    res = run_simulation(builtin_scenario("example1"), "source", TURNAROUND, "vp", 20)
    assert per_source_state(res)
    assert any(r[1] == "port_source" for r in res.trace)


def test_vc_merge_structural_accounting():
    for policy in FairnessPolicy:
        res = run_simulation(builtin_scenario("example2"), policy, BITMARK, "vc", 20)
        assert per_source_state(res) == []


@pytest.mark.parametrize("alg", [TURNAROUND, BITMARK])
def test_conservation_short_run(alg):
    res = run_simulation(builtin_scenario("example1"), "source", alg, "vc", 50,
                         record_streams=True)
    assert len(res.merge_points) == 2
    for mp in res.merge_points:
        assert conservation_check(res, mp).ok
        assert count_interleavings(res.merged_streams[mp]) == 0


def test_bounded_queue_records_drops():
    slow = ONE_LINK.replace("dst:D 150", "dst:D 10") + "param icr 150\n"
    sc = load_scenario(slow)
    res = run_simulation(sc, "source", duration_ms=20, queue_limit=5,
                         utilization=1.0)
    assert res.forward_channels["e"].drops > 0


def test_default_utilization_tracks_scaled_oracle():
    sc = builtin_scenario("example1")
    res = run_simulation(sc, "source", BITMARK, "vc", 150)
    want = water_fill(sc.topology, FairnessPolicy.SOURCE).rates
    for s, r in want.items():
        assert res.steady_rates[s] == pytest.approx(0.95 * float(r), rel=0.03)
    assert res.max_link_load_ratio() <= 1.05


# -- probe -----------------------------------------------------------------

def test_chain_scenario_merge_points():
    sc = chain_scenario(4)
    assert len(sc.topology.merge_points()) == 4


def test_probe_single_level_round_trip():
    rows = feedback_delay_probe([1], [TURNAROUND], duration_ms=30)
    # the merge point answers directly: two hops of serialization plus propagation
    hop = 424 / 150 + 1
    assert rows[0].mean_brm_rtt_us == pytest.approx(2 * hop + 424 / 150, rel=0.5)


def test_probe_monotone_turnaround():
    rows = feedback_delay_probe([1, 2, 4], [TURNAROUND], duration_ms=40)
    assert all(r.samples > 0 for r in rows)
    assert is_monotone(rows, TURNAROUND)


def test_synchronized_turnaround_starves_leaf():
    res = run_simulation(chain_scenario(2), "source", TURNAROUND, "vc", 30, jitter=False)
    fb, rtt = leaf_delays(res)
    assert fb == [] and rtt
