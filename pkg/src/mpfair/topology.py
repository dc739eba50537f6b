"""Network model: switches, capacitated links and multipoint-to-point VCs.

A VC is a sink tree: any number of sources, one destination. Its route is a
set of ``(switch, in_port, out_port)`` entries; every source's path follows
those entries from its access link to the destination's egress link.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional


class TopologyError(ValueError):
    """Raised when a network declaration is structurally invalid."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class Endpoint:
    kind: str  # "sw", "src" or "dst"
    node: str
    port: Optional[str] = None

    def __str__(self):
        if self.kind == "sw":
            return f"sw:{self.node}:{self.port}"
        return f"{self.kind}:{self.node}"

    @classmethod
    def parse(cls, text: str) -> "Endpoint":
        parts = text.split(":")
        if parts[0] == "sw" and len(parts) == 3 and parts[1] and parts[2]:
            return cls("sw", parts[1], parts[2])
        if parts[0] in ("src", "dst") and len(parts) == 2 and parts[1]:
            return cls(parts[0], parts[1])
        raise ValueError(f"bad endpoint {text!r}")


@dataclass(frozen=True)
class Link:
    id: str
    src: Endpoint
    dst: Endpoint
    capacity: Fraction

    @property
    def is_access(self) -> bool:
        return self.src.kind == "src"

    @property
    def is_egress(self) -> bool:
        return self.dst.kind == "dst"


@dataclass(frozen=True)
class VirtualConnection:
    id: str
    destination: str
    sources: tuple
    route: tuple = ()  # (switch, in_port, out_port) entries

    @property
    def is_point_to_point(self) -> bool:
        return len(self.sources) == 1

    def next_port(self, switch: str, in_port: str) -> Optional[str]:
        for sw, pin, pout in self.route:
            if sw == switch and pin == in_port:
                return pout
        return None


@dataclass(frozen=True)
class Flow:
    """A (VC, input port) pair as seen at one switch output port."""

    vc: str
    switch: str
    in_port: str
    members: frozenset


@dataclass(frozen=True)
class SourcePath:
    source: str
    links: tuple


@dataclass(frozen=True, eq=False)
class Topology:
    """Validated, immutable network. Build it with :func:`validate_topology`."""

    switches: tuple
    links: tuple
    vcs: tuple
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    # -- lookups -----------------------------------------------------------
    def link(self, link_id: str) -> Link:
        return self._index["links"][link_id]

    def vc(self, vc_id: str) -> VirtualConnection:
        return self._index["vcs"][vc_id]

    def vc_of(self, source: str) -> VirtualConnection:
        return self._index["vc_of"][source]

    @property
    def sources(self) -> tuple:
        """All sources, in VC declaration order then source order."""
        return tuple(s for vc in self.vcs for s in vc.sources)

    def link_out(self, switch: str, out_port: str) -> Optional[Link]:
        return self._index["by_out"].get((switch, out_port))

    def link_in(self, switch: str, in_port: str) -> Optional[Link]:
        return self._index["by_in"].get((switch, in_port))

    def access_link(self, source: str) -> Link:
        return self._index["access"][source]

    def path(self, source: str) -> SourcePath:
        return self._index["paths"][source]

    def sources_on(self, link_id: str) -> tuple:
        return self._index["on_link"].get(link_id, ())

    def switch_links(self) -> list:
        """Links that leave a switch output port."""
        return [l for l in self.links if l.src.kind == "sw"]

    def branches(self, switch: str, vc_id: str, out_port: str) -> list:
        """Input ports of ``switch`` through which ``vc_id`` reaches ``out_port``."""
        return sorted({f.in_port for f in flows_at(self, switch, out_port) if f.vc == vc_id})

    def merge_points(self) -> list:
        """(switch, vc, out_port) triples where two or more branches join."""
        found = []
        for link in self.switch_links():
            by_vc = {}
            for f in flows_at(self, link.src.node, link.src.port):
                by_vc.setdefault(f.vc, []).append(f.in_port)
            for vc_id, ports in by_vc.items():
                if len(ports) > 1:
                    found.append((link.src.node, vc_id, link.src.port))
        return found


def _walk(links_by_out, by_in_access, vc: VirtualConnection, source: str, access: Link):
    hops = [access]
    seen = {access.id}
    link = access
    while True:
        end = link.dst
        if end.kind == "dst":
            if end.node != vc.destination:
                raise TopologyError(
                    f"source {source} of VC {vc.id} reaches {end.node}, not {vc.destination}"
                )
            return tuple(l.id for l in hops)
        if end.kind != "sw":
            raise TopologyError(f"link {link.id} ends at a source")
        out_port = vc.next_port(end.node, end.port)
        if out_port is None:
            raise TopologyError(
                f"source {source} has no path to {vc.destination}: "
                f"VC {vc.id} has no route at {end.node} port {end.port}"
            )
        nxt = links_by_out.get((end.node, out_port))
        if nxt is None:
            raise TopologyError(
                f"source {source} has no path to {vc.destination}: "
                f"no link leaves {end.node} port {out_port}"
            )
        if nxt.id in seen:
            raise TopologyError(f"route not a tree: VC {vc.id} loops at link {nxt.id}")
        seen.add(nxt.id)
        hops.append(nxt)
        link = nxt


def validate_topology(switches: Iterable[str], links: Iterable[Link],
                      vcs: Iterable[VirtualConnection]) -> Topology:
    """Check structure and derive source paths.

    Raises :class:`TopologyError` carrying every violation found.
    """
    switches = tuple(switches)
    links = tuple(links)
    vcs = tuple(vcs)
    errors = []

    def dup(ids, what):
        seen = set()
        for i in ids:
            if i in seen:
                errors.append(f"duplicate {what} id {i}")
            seen.add(i)

    dup(switches, "switch")
    dup([l.id for l in links], "link")
    dup([v.id for v in vcs], "VC")
    swset = set(switches)

    by_out, by_in, access, egress = {}, {}, {}, {}
    for l in links:
        if l.capacity <= 0:
            errors.append(f"link {l.id} capacity must be > 0")
        for end, role in ((l.src, "from"), (l.dst, "to")):
            if end.kind == "sw" and end.node not in swset:
                errors.append(f"dangling link endpoint: {l.id} {role} undeclared switch {end.node}")
        if l.src.kind == "dst":
            errors.append(f"link {l.id} starts at a destination")
        if l.dst.kind == "src":
            errors.append(f"link {l.id} ends at a source")
        if l.src.kind == "src" and l.dst.kind == "dst":
            errors.append(f"link {l.id} joins a source directly to a destination")
        if l.src.kind == "sw":
            key = (l.src.node, l.src.port)
            if key in by_out:
                errors.append(f"output port {key[0]}:{key[1]} has two links")
            by_out[key] = l
        elif l.src.kind == "src":
            if l.src.node in access:
                errors.append(f"source {l.src.node} has two access links")
            access[l.src.node] = l
        if l.dst.kind == "sw":
            key = (l.dst.node, l.dst.port)
            if key in by_in:
                errors.append(f"input port {key[0]}:{key[1]} has two incoming links")
            by_in[key] = l
        elif l.dst.kind == "dst":
            if l.dst.node in egress:
                errors.append(f"destination {l.dst.node} has two egress links")
            egress[l.dst.node] = l

    vc_of = {}
    for vc in vcs:
        if not vc.sources:
            errors.append(f"VC {vc.id} has no sources")
        if vc.destination not in egress:
            errors.append(f"VC {vc.id} destination {vc.destination} is not attached")
        seen_routes = {}
        for sw, pin, pout in vc.route:
            if sw not in swset:
                errors.append(f"VC {vc.id} routes through undeclared switch {sw}")
            prev = seen_routes.setdefault((sw, pin), pout)
            if prev != pout:
                errors.append(
                    f"route not a tree: VC {vc.id} maps {sw} port {pin} to both {prev} and {pout}"
                )
        for s in vc.sources:
            if s in vc_of:
                errors.append(f"source {s} belongs to VCs {vc_of[s]} and {vc.id}")
            vc_of[s] = vc.id
            if s not in access:
                errors.append(f"source {s} of VC {vc.id} has no access link")

    if errors:
        raise TopologyError(errors)

    paths, on_link = {}, {}
    for vc in vcs:
        for s in vc.sources:
            try:
                hops = _walk(by_out, by_in, vc, s, access[s])
            except TopologyError as exc:
                errors.extend(exc.violations)
                continue
            paths[s] = SourcePath(s, hops)
            for lid in hops:
                on_link.setdefault(lid, []).append(s)
    if errors:
        raise TopologyError(errors)

    index = {
        "links": {l.id: l for l in links},
        "vcs": {v.id: v for v in vcs},
        "vc_of": {s: v for v in vcs for s in v.sources},
        "by_out": by_out,
        "by_in": by_in,
        "access": access,
        "paths": paths,
        "on_link": {k: tuple(v) for k, v in on_link.items()},
        "flows": {},
    }
    return Topology(switches, links, vcs, index)


def source_path(topology: Topology, vc: VirtualConnection, source: str) -> SourcePath:
    if source not in vc.sources:
        raise TopologyError(f"source {source} does not belong to VC {vc.id}")
    return topology.path(source)


def flows_at(topology: Topology, switch: str, out_port: str) -> list:
    """One :class:`Flow` per (VC, input port) routed to ``out_port``."""
    cache = topology._index["flows"]
    key = (switch, out_port)
    if key in cache:
        return cache[key]
    members = {}
    for s in topology.sources:
        hops = topology.path(s).links
        for a, b in zip(hops, hops[1:]):
            la, lb = topology.link(a), topology.link(b)
            if lb.src.node == switch and lb.src.port == out_port and lb.src.kind == "sw":
                members.setdefault((topology.vc_of(s).id, la.dst.port), set()).add(s)
    flows = [
        Flow(vc_id, switch, port, frozenset(m))
        for (vc_id, port), m in sorted(members.items())
    ]
    cache[key] = flows
    return flows


def count_flows(topology: Topology, link_id: str) -> int:
    """Number of (VC, input port) pairs feeding the link's upstream output port.

    An access link has no upstream switch; its single source is one flow.
    """
    link = topology.link(link_id)
    if link.src.kind == "src":
        return 1 if topology.sources_on(link_id) else 0
    return len(flows_at(topology, link.src.node, link.src.port))
