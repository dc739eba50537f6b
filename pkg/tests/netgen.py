"""Random sink-tree networks for property tests."""
from __future__ import annotations

import random
from fractions import Fraction

from mpfair.topology import Endpoint, Link, VirtualConnection, validate_topology

CAPACITIES = [Fraction(c) for c in (10, 25, 50, 75, 100, 150)]


def random_network(rng: random.Random, max_switches=6, max_vcs=4, max_sources=10,
                   point_to_point=False):
    n = rng.randint(1, max_switches)
    switches = [f"W{i}" for i in range(n)]
    adj = {s: [] for s in switches}
    for i in range(1, n):
        j = rng.randrange(i)
        adj[switches[i]].append(switches[j])
        adj[switches[j]].append(switches[i])

    links = []
    port_no = {s: 0 for s in switches}

    def port(sw):
        port_no[sw] += 1
        return str(port_no[sw])

    trunk = {}  # (a, b) -> (out port at a, in port at b)
    for a in switches:
        for b in adj[a]:
            pa, pb = port(a), port(b)
            trunk[(a, b)] = (pa, pb)
            links.append(Link(f"L{a}{b}", Endpoint("sw", a, pa), Endpoint("sw", b, pb),
                              rng.choice(CAPACITIES)))

    def tree_path(a, b):
        prev = {a: None}
        todo = [a]
        while todo:
            x = todo.pop()
            for y in adj[x]:
                if y not in prev:
                    prev[y] = x
                    todo.append(y)
        path = [b]
        while path[-1] != a:
            path.append(prev[path[-1]])
        return path[::-1]

    nvcs = rng.randint(1, max_vcs)
    budget = max_sources
    vcs = []
    for v in range(nvcs):
        if budget <= 0:
            break
        if point_to_point:
            k = 1
        else:
            k = rng.randint(1, max(1, min(budget, max_sources - (nvcs - v - 1))))
        budget -= k
        dsw = rng.choice(switches)
        dport = port(dsw)
        links.append(Link(f"E{v}", Endpoint("sw", dsw, dport), Endpoint("dst", f"D{v}"),
                          rng.choice(CAPACITIES)))
        routes = set()
        srcs = []
        for k_i in range(k):
            sid = f"S{v}_{k_i}"
            ssw = rng.choice(switches)
            sport = port(ssw)
            links.append(Link(f"A{sid}", Endpoint("src", sid), Endpoint("sw", ssw, sport),
                              rng.choice(CAPACITIES)))
            hops = tree_path(ssw, dsw)
            in_port = sport
            for here, nxt in zip(hops, hops[1:]):
                out_port, next_in = trunk[(here, nxt)]
                routes.add((here, in_port, out_port))
                in_port = next_in
            routes.add((dsw, in_port, dport))
            srcs.append(sid)
        vcs.append(VirtualConnection(f"V{v}", f"D{v}", tuple(srcs), tuple(sorted(routes))))
    return validate_topology(switches, links, vcs)
