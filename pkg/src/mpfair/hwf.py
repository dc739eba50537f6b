"""Hierarchical max-min water-filling.

Each fairness policy is expressed as a partition tree per link: the root is
the link, its children are the top-level competitors on the link, and the
leaves are the sources crossing it. One engine computes the allocation for
any tree shape, in exact rational arithmetic.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .topology import Topology, flows_at


class FairnessPolicy(enum.Enum):
    SOURCE = "source"
    VC_SOURCE = "vc-source"
    FLOW = "flow"
    VC_FLOW = "vc-flow"

    @classmethod
    def parse(cls, name: str) -> "FairnessPolicy":
        try:
            return cls(name)
        except ValueError:
            choices = ", ".join(p.value for p in cls)
            raise ValueError(f"unknown policy {name!r} (choose from {choices})") from None


@dataclass(frozen=True)
class Node:
    label: str
    children: tuple = ()
    source: Optional[str] = None

    @property
    def is_leaf(self) -> bool:
        return self.source is not None

    def leaves(self) -> list:
        if self.is_leaf:
            return [self.source]
        out = []
        for c in self.children:
            out.extend(c.leaves())
        return out

    def chain_to(self, source: str) -> Optional[list]:
        """Nodes from this node down to the leaf for ``source``."""
        if self.is_leaf:
            return [self] if self.source == source else None
        for c in self.children:
            sub = c.chain_to(source)
            if sub is not None:
                return [self] + sub
        return None

    def render(self, indent: int = 0) -> str:
        lines = ["  " * indent + self.label]
        for c in self.children:
            lines.append(c.render(indent + 1))
        return "\n".join(lines)


def _leaf(source: str) -> Node:
    return Node(source, source=source)


def _group(label: str, children: list) -> Node:
    # a group with a single child adds no contention level
    if len(children) == 1:
        return children[0]
    return Node(label, tuple(children))


def _flow_subtree(topology: Topology, flow) -> Node:
    """Split a flow at successive upstream switches until single sources remain."""
    if len(flow.members) == 1:
        (only,) = flow.members
        return _leaf(only)
    upstream = topology.link_in(flow.switch, flow.in_port)
    parts = [
        _flow_subtree(topology, f)
        for f in flows_at(topology, upstream.src.node, upstream.src.port)
        if f.vc == flow.vc
    ]
    return _group(f"flow:{flow.switch}:{flow.in_port}:{flow.vc}", parts)


def _flow_children(topology: Topology, link, vc_id: Optional[str] = None) -> list:
    if link.src.kind == "src":
        return [_leaf(s) for s in topology.sources_on(link.id)]
    flows = flows_at(topology, link.src.node, link.src.port)
    return [_flow_subtree(topology, f) for f in flows if vc_id is None or f.vc == vc_id]


def build_partition_tree(topology: Topology, link_id: str, policy: FairnessPolicy) -> Node:
    link = topology.link(link_id)
    crossing = topology.sources_on(link_id)
    if policy is FairnessPolicy.SOURCE:
        children = [_leaf(s) for s in crossing]
    elif policy is FairnessPolicy.FLOW:
        children = _flow_children(topology, link)
    else:
        by_vc = {}
        for s in crossing:
            by_vc.setdefault(topology.vc_of(s).id, []).append(s)
        children = []
        for vc_id, members in by_vc.items():
            if policy is FairnessPolicy.VC_SOURCE:
                inner = [_leaf(s) for s in members]
            else:
                inner = _flow_children(topology, link, vc_id)
            children.append(_group(f"vc:{vc_id}", inner) if len(inner) > 1
                            else Node(f"vc:{vc_id}", tuple(inner)))
    return Node(link_id, tuple(children))


def _demand(node: Node, demands: dict):
    if node.is_leaf:
        return demands.get(node.source)
    total = Fraction(0)
    for c in node.children:
        d = _demand(c, demands)
        if d is None:
            return None
        total += d
    return total


def waterfill_level(share: Fraction, demands: list) -> list:
    """Max-min split of ``share`` among claimants; ``None`` means unbounded."""
    grants = [None] * len(demands)
    order = sorted(
        (i for i, d in enumerate(demands) if d is not None), key=lambda i: demands[i]
    )
    remaining = share
    k = len(demands)
    for i in order:
        if demands[i] * k <= remaining:
            grants[i] = demands[i]
            remaining -= demands[i]
            k -= 1
        else:
            break
    if k:
        level = remaining / k
        for i, g in enumerate(grants):
            if g is None:
                grants[i] = level
    return grants


def allocate_tree(node: Node, share: Fraction, demands: dict, out: dict) -> dict:
    """Distribute ``share`` down the tree given per-source demands."""
    if node.is_leaf:
        d = demands.get(node.source)
        out[node.source] = share if d is None else min(d, share)
        return out
    kids = list(node.children)
    grants = waterfill_level(share, [_demand(c, demands) for c in kids])
    for c, g in zip(kids, grants):
        allocate_tree(c, g, demands, out)
    return out


@dataclass
class AllocationVector:
    policy: FairnessPolicy
    rates: dict
    topology: Topology = field(repr=False)
    certificate: dict = field(default_factory=dict, repr=False)

    def link_loads(self) -> dict:
        return {
            l.id: sum((self.rates[s] for s in self.topology.sources_on(l.id)), Fraction(0))
            for l in self.topology.links
        }

    def vc_sums(self) -> dict:
        return {
            vc.id: sum((self.rates[s] for s in vc.sources), Fraction(0))
            for vc in self.topology.vcs
        }


def partition_trees(topology: Topology, policy: FairnessPolicy) -> dict:
    return {
        l.id: build_partition_tree(topology, l.id, policy)
        for l in topology.links
        if topology.sources_on(l.id)
    }


class _Engine:
    def __init__(self, topology: Topology, policy: FairnessPolicy):
        self.topology = topology
        self.trees = partition_trees(topology, policy)
        self.capacity = {l.id: l.capacity for l in topology.links}
        self.paths = {s: topology.path(s).links for s in topology.sources}

    def shares(self, demands: dict) -> dict:
        """Per-link allocation with the given demands (None = unbounded)."""
        return {
            lid: allocate_tree(tree, self.capacity[lid], demands, {})
            for lid, tree in self.trees.items()
        }

    def bound_all_unbounded(self, frozen: dict, active: list):
        demands = dict(frozen)
        per_link = self.shares(demands)
        return self._minimize(active, lambda s: per_link)

    def bound_against(self, frozen: dict, active: list, others: dict):
        def per_source(s):
            demands = dict(frozen)
            demands.update(others)
            demands[s] = None
            return {
                lid: allocate_tree(self.trees[lid], self.capacity[lid], demands, {})
                for lid in self.paths[s]
            }
        return self._minimize(active, per_source)

    def _minimize(self, active, tables):
        bound, where = {}, {}
        for s in active:
            table = tables(s)
            best, at = None, None
            for lid in self.paths[s]:
                v = table[lid][s]
                if best is None or v < best:
                    best, at = v, lid
            bound[s], where[s] = best, at
        return bound, where


def simplest_between(lo: Fraction, hi: Fraction) -> Fraction:
    """The fraction with the smallest denominator in ``[lo, hi]``."""
    whole = lo.numerator // lo.denominator
    if whole == lo:
        return Fraction(whole)
    if whole + 1 <= hi:
        return Fraction(whole + 1)
    return whole + 1 / simplest_between(1 / (hi - whole), 1 / (lo - whole))


def _damped_fixed_point(eng, frozen, active, lower, upper, tol=1e-11, max_iter=20000):
    """Locate the fixed point when exact brackets cycle instead of closing.

    Runs a damped iteration in floating point, snaps each rate to the simplest
    nearby fraction and keeps the result only if it is an exact fixed point.
    """
    x = {s: (float(lower[s]) + float(upper[s])) / 2 for s in active}
    ffrozen = {s: float(v) for s, v in frozen.items()}
    for _ in range(max_iter):
        image, _w = eng.bound_against(ffrozen, active, x)
        step = max(abs(image[s] - x[s]) for s in active)
        x = {s: (x[s] + image[s]) / 2 for s in active}
        if step < tol:
            break
    for slack in (1e-9, 1e-7, 1e-5):
        guess = {}
        for s in active:
            lo = Fraction(max(x[s] - slack, 0.0))
            guess[s] = simplest_between(lo, Fraction(x[s] + slack))
        image, where = eng.bound_against(frozen, active, guess)
        if image == guess:
            return guess, where
    return {}, {}


def water_fill(topology: Topology, policy: FairnessPolicy, max_rounds: int = 200) -> AllocationVector:
    """Hierarchical max-min allocation for ``policy``.

    Each unfrozen source's final rate is bracketed between a lower bound
    (other unfrozen sources unbounded) and an upper bound (others held at
    their lower bounds); the brackets are tightened alternately. Sources whose
    bracket closes are frozen at that rate. When sources tie across coupled
    links the brackets only converge geometrically; then the simplest
    fraction inside every bracket is tried and accepted if it is an exact
    fixed point of the bound map.
    """
    eng = _Engine(topology, policy)
    frozen, cert = {}, {}
    active = list(topology.sources)
    while active:
        lower, where = eng.bound_all_unbounded(frozen, active)
        settled = {}
        upper = None
        for _ in range(max_rounds):
            upper, _w = eng.bound_against(frozen, active, lower)
            settled = {s: lower[s] for s in active if upper[s] == lower[s]}
            if settled:
                break
            guess = {s: simplest_between(lower[s], upper[s]) for s in active}
            image, gwhere = eng.bound_against(frozen, active, guess)
            if image == guess:
                settled, where = guess, gwhere
                break
            lower, where = eng.bound_against(frozen, active, upper)
        if not settled:
            settled, where = _damped_fixed_point(eng, frozen, active, lower, upper)
        if not settled:
            m = min(lower[s] for s in active)
            settled = {s: m for s in active if lower[s] == m}
        for s, rate in settled.items():
            frozen[s] = rate
            cert[s] = (where[s], tuple(n.label for n in eng.trees[where[s]].chain_to(s)))
        active = [s for s in active if s not in frozen]
    rates = {s: frozen[s] for s in topology.sources}
    return AllocationVector(policy, rates, topology, cert)


@dataclass
class VerificationReport:
    ok: bool
    violations: list
    certificates: dict

    @property
    def first_violation(self) -> Optional[str]:
        return self.violations[0] if self.violations else None


def _aggregate(node: Node, rates: dict) -> Fraction:
    return sum((rates[s] for s in node.leaves()), Fraction(0))


def check_chain(tree: Node, source: str, rates: dict) -> bool:
    """At every level the chain child carries at least as much as any sibling."""
    node = tree
    while not node.is_leaf:
        child = next(c for c in node.children if source in c.leaves())
        mine = _aggregate(child, rates)
        for sib in node.children:
            if sib is not child and _aggregate(sib, rates) > mine:
                return False
        node = child
    return True


def verify_maxmin(topology: Topology, policy: FairnessPolicy, rates: dict) -> VerificationReport:
    """Check feasibility and a bottleneck certificate for every source.

    A certificate for source ``s`` is a link on its path loaded to exactly its
    capacity, where along the root-to-leaf chain of the link's partition tree
    each node holding ``s`` has an aggregate rate no smaller than any sibling.
    """
    violations = []
    missing = [s for s in topology.sources if s not in rates]
    if missing:
        return VerificationReport(False, [f"no rate for sources {', '.join(missing)}"], {})
    rates = {s: Fraction(r) for s, r in rates.items()}
    for s in topology.sources:
        if rates[s] < 0:
            violations.append(f"source {s} has negative rate {rates[s]}")
    saturated = set()
    for l in topology.links:
        load = sum((rates[s] for s in topology.sources_on(l.id)), Fraction(0))
        if load > l.capacity:
            violations.append(f"link {l.id} overloaded: load {load} > capacity {l.capacity}")
        elif load == l.capacity:
            saturated.add(l.id)
    if violations:
        return VerificationReport(False, violations, {})
    trees = partition_trees(topology, policy)
    certs = {}
    for s in topology.sources:
        for lid in topology.path(s).links:
            if lid in saturated and check_chain(trees[lid], s, rates):
                certs[s] = (lid, tuple(n.label for n in trees[lid].chain_to(s)))
                break
        else:
            violations.append(f"source {s} has no bottleneck certificate")
    return VerificationReport(not violations, violations, certs)


def perturbation_improvements(topology: Topology, policy: FairnessPolicy, rates: dict,
                              eps: Optional[Fraction] = None) -> list:
    """Perturbed vectors that raise a minimum-rate source and still certify.

    Each minimum-rate source is raised by ``eps`` (default: min rate / 1000),
    alone and with a compensating ``-eps`` on every higher-rate source. A
    correct max-min allocation admits none of these.
    """
    rates = {s: Fraction(r) for s, r in rates.items()}
    low = min(rates.values())
    if eps is None:
        eps = low / 1000 if low > 0 else Fraction(1, 1000)
    found = []
    for i in [s for s, r in rates.items() if r == low]:
        trials = [(i, None)] + [(i, j) for j, r in rates.items() if r > low]
        for up, down in trials:
            trial = dict(rates)
            trial[up] += eps
            if down is not None:
                trial[down] -= eps
            if verify_maxmin(topology, policy, trial).ok:
                found.append((up, down))
    return found


@dataclass
class Comparison:
    sources: tuple
    vcs: tuple
    rows: list  # AllocationVector per policy


def compare_policies(topology: Topology, policies=None) -> Comparison:
    policies = list(policies or FairnessPolicy)
    rows = [water_fill(topology, p) for p in policies]
    return Comparison(topology.sources, tuple(v.id for v in topology.vcs), rows)
