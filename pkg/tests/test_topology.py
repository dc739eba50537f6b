import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from mpfair.scenario import builtin_scenario
from mpfair.topology import (Endpoint, Link, TopologyError, VirtualConnection, count_flows,
                             flows_at, source_path, validate_topology)
from netgen import random_network
from oracles import brute_flow_count


@pytest.fixture(scope="module")
def ex1():
    return builtin_scenario("example1").topology


@pytest.fixture(scope="module")
def ex2():
    return builtin_scenario("example2").topology


def L(i, a, b, c=150):
    return Link(i, Endpoint.parse(a), Endpoint.parse(b), Fraction(c))


def test_example1_shape(ex1):
    assert len(ex1.switches) == 4
    assert len(ex1.links) == 9
    assert ex1.sources == ("S1", "S2", "S3", "SA")


def test_endpoint_roundtrip():
    for text in ("sw:Sw1:9", "src:S1", "dst:dS1"):
        assert str(Endpoint.parse(text)) == text
    with pytest.raises(ValueError):
        Endpoint.parse("sw:Sw1")


def test_route_not_a_tree():
    links = [L("a", "src:S", "sw:X:1"), L("e1", "sw:X:8", "dst:D"), L("e2", "sw:X:9", "dst:D2")]
    vc = VirtualConnection("V", "D", ("S",), (("X", "1", "8"), ("X", "1", "9")))
    with pytest.raises(TopologyError) as err:
        validate_topology(["X"], links, [vc])
    assert any("route not a tree" in v for v in err.value.violations)


def test_vc_without_sources():
    links = [L("e", "sw:X:8", "dst:D")]
    with pytest.raises(TopologyError) as err:
        validate_topology(["X"], links, [VirtualConnection("V", "D", (), ())])
    assert any("VC V has no sources" in v for v in err.value.violations)


def test_dangling_and_duplicate():
    links = [L("a", "src:S", "sw:Y:1"), L("a", "sw:X:8", "dst:D")]
    vc = VirtualConnection("V", "D", ("S",), (("X", "1", "8"),))
    with pytest.raises(TopologyError) as err:
        validate_topology(["X"], links, [vc])
    text = "\n".join(err.value.violations)
    assert "dangling link endpoint" in text
    assert "duplicate link id a" in text


def test_missing_route_reported():
    links = [L("a", "src:S", "sw:X:1"), L("e", "sw:X:8", "dst:D")]
    vc = VirtualConnection("V", "D", ("S",), ())
    with pytest.raises(TopologyError, match="no path"):
        validate_topology(["X"], links, [vc])


def test_paths_example2(ex2):
    assert ex2.path("S4").links == ("acc_S4", "LINK3", "eg_dS1")
    assert {"LINK1", "LINK2", "LINK3"} <= set(ex2.path("S1").links)
    assert "LINK3" not in ex2.path("SA").links
    with pytest.raises(TopologyError):
        source_path(ex2, ex2.vc("A"), "S1")


def test_one_hop_path():
    links = [L("a", "src:S", "sw:X:1"), L("e", "sw:X:8", "dst:D")]
    topo = validate_topology(["X"], links, [VirtualConnection("V", "D", ("S",), (("X", "1", "8"),))])
    assert topo.path("S").links == ("a", "e")
    assert count_flows(topo, "a") == 1


def test_flow_counts_examples(ex1, ex2):
    assert count_flows(ex1, "LINK3") == 3
    assert count_flows(ex2, "LINK3") == 2


def test_flows_at_examples(ex1, ex2):
    m = [f.members for f in flows_at(ex1, "Sw2", "9") if f.vc == "M"]
    assert sorted(map(sorted, m)) == [["S1"], ["S2"]]
    m = [f.members for f in flows_at(ex2, "Sw2", "9") if f.vc == "M"]
    assert sorted(map(sorted, m)) == [["S1", "S2"], ["S3"]]


def test_three_port_illustration():
    # ports 1 and 3 each carry one VC (same VC, different senders); port 2 carries two
    links = [
        L("a1", "src:P", "sw:X:1"), L("a3", "src:Q", "sw:X:3"),
        L("a2", "src:R", "sw:Y:1"), L("a2b", "src:T", "sw:Y:2"),
        L("yx", "sw:Y:9", "sw:X:2"), L("out", "sw:X:4", "sw:Z:1"),
        L("e1", "sw:Z:8", "dst:D1"), L("e2", "sw:Z:9", "dst:D2"),
    ]
    m = VirtualConnection("M", "D1", ("P", "Q", "R"),
                          (("X", "1", "4"), ("X", "3", "4"), ("X", "2", "4"),
                           ("Y", "1", "9"), ("Z", "1", "8")))
    n = VirtualConnection("N", "D2", ("T",), (("Y", "2", "9"), ("X", "2", "4"), ("Z", "1", "9")))
    topo = validate_topology(["X", "Y", "Z"], links, [m, n])
    assert count_flows(topo, "out") == 4


def test_point_to_point_single_flow(ex1):
    flows = [f for f in flows_at(ex1, "Sw3", "9") if f.vc == "A"]
    assert len(flows) == 1 and flows[0].members == {"SA"}


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_flow_partition_properties(seed):
    topo = random_network(random.Random(seed))
    for link in topo.switch_links():
        flows = flows_at(topo, link.src.node, link.src.port)
        union = set().union(*(f.members for f in flows)) if flows else set()
        assert union == set(topo.sources_on(link.id))
        by_vc = {}
        for f in flows:
            assert not (by_vc.setdefault(f.vc, set()) & f.members)
            by_vc[f.vc] |= f.members
        assert count_flows(topo, link.id) == len(flows) == brute_flow_count(topo, link.id)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_point_to_point_counts(seed):
    topo = random_network(random.Random(seed), max_vcs=8, point_to_point=True)
    for link in topo.switch_links():
        crossing = topo.sources_on(link.id)
        vcs = {topo.vc_of(s).id for s in crossing}
        assert count_flows(topo, link.id) == len(vcs) == len(crossing)
