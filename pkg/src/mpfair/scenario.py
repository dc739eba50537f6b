"""Scenario files, built-in scenarios and result emitters.

Grammar (one declaration per line, ``#`` starts a comment)::

    switch <id>
    link <id> <from> <to> <capacity_mbps>     # endpoints: sw:<id>:<port> | src:<id> | dst:<id>
    vc <id> dst <id> sources <id,...>
    route <vc> <switch> <in_port> -> <out_port>
    param <key> <value>

Capacities and rates accept integers, decimals and fractions (``125/3``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .hwf import AllocationVector, Comparison
from .topology import Endpoint, Link, Topology, TopologyError, VirtualConnection, validate_topology

RATE_PARAMS = {"pcr", "icr", "utilization", "duration_ms", "interval_ms", "prop_delay_us", "start_us"}
INT_PARAMS = {"nrm", "packet_cells", "queue_limit", "merge_buffer"}
CHOICE_PARAMS = {"merge_alg": ("turnaround", "bitmark"), "merge_mode": ("vc", "vp")}
SOURCE_PARAMS = {"pcr", "icr", "nrm", "start_us"}


class ScenarioError(ValueError):
    def __init__(self, errors):
        # errors: list of (line number or None, message)
        self.errors = list(errors)
        super().__init__("; ".join(
            f"line {n}: {m}" if n is not None else m for n, m in self.errors
        ))


def parse_rational(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"malformed rational {text!r}") from None


@dataclass
class Scenario:
    switches: list = field(default_factory=list)
    links: list = field(default_factory=list)
    vcs: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    name: str = ""
    _topology: Optional[Topology] = field(default=None, repr=False, compare=False)

    @property
    def topology(self) -> Topology:
        if self._topology is None:
            self._topology = validate_topology(self.switches, self.links, self.vcs)
        return self._topology

    def param(self, key: str, default=None, source: Optional[str] = None):
        if source is not None and f"source.{source}.{key}" in self.params:
            return self.params[f"source.{source}.{key}"]
        return self.params.get(key, default)

    def structure(self):
        return (self.switches, self.links, self.vcs, self.params)


def _parse_param(key: str, value: str):
    base = key
    if key.startswith("source."):
        parts = key.split(".")
        if len(parts) != 3 or parts[2] not in SOURCE_PARAMS:
            raise ValueError(f"unknown parameter {key!r}")
        base = parts[2]
    if base in RATE_PARAMS:
        v = parse_rational(value)
        if v < 0 or (v == 0 and base not in ("start_us", "duration_ms", "prop_delay_us")):
            raise ValueError(f"parameter {key} must be > 0")
        return v
    if base in INT_PARAMS:
        try:
            v = int(value)
        except ValueError:
            raise ValueError(f"parameter {key} must be an integer") from None
        if v <= 0:
            raise ValueError(f"parameter {key} must be > 0")
        return v
    if base in CHOICE_PARAMS:
        if value not in CHOICE_PARAMS[base]:
            raise ValueError(f"parameter {key} must be one of {', '.join(CHOICE_PARAMS[base])}")
        return value
    raise ValueError(f"unknown parameter {key!r}")


def parse_scenario(text: str, name: str = "") -> Scenario:
    """Parse scenario text; raises :class:`ScenarioError` with line numbers."""
    errors = []
    sc = Scenario(name=name)
    routes = {}  # vc -> list of entries
    route_lines = {}
    vc_lines = {}
    link_lines = {}
    seen = {"switch": set(), "link": set(), "vc": set()}
    vc_decl = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kw = tok[0]
        try:
            if kw == "switch":
                if len(tok) != 2:
                    raise ValueError("expected: switch <id>")
                if tok[1] in seen["switch"]:
                    raise ValueError(f"duplicate switch id {tok[1]}")
                seen["switch"].add(tok[1])
                sc.switches.append(tok[1])
            elif kw == "link":
                if len(tok) != 5:
                    raise ValueError("expected: link <id> <from> <to> <capacity_mbps>")
                if tok[1] in seen["link"]:
                    raise ValueError(f"duplicate link id {tok[1]}")
                cap = parse_rational(tok[4])
                if cap <= 0:
                    raise ValueError("link capacity must be > 0")
                seen["link"].add(tok[1])
                link_lines[tok[1]] = lineno
                sc.links.append(Link(tok[1], Endpoint.parse(tok[2]), Endpoint.parse(tok[3]), cap))
            elif kw == "vc":
                if len(tok) < 4 or tok[2] != "dst" or (len(tok) > 4 and tok[4] != "sources"):
                    raise ValueError("expected: vc <id> dst <id> sources <id,...>")
                if tok[1] in seen["vc"]:
                    raise ValueError(f"duplicate VC id {tok[1]}")
                srcs = [s for s in ",".join(tok[5:]).split(",") if s]
                if not srcs:
                    raise ValueError(f"VC {tok[1]} has no sources")
                seen["vc"].add(tok[1])
                vc_lines[tok[1]] = lineno
                vc_decl.append((tok[1], tok[3], tuple(srcs)))
            elif kw == "route":
                if len(tok) != 6 or tok[4] != "->":
                    raise ValueError("expected: route <vc> <switch> <in_port> -> <out_port>")
                routes.setdefault(tok[1], []).append((tok[2], tok[3], tok[5]))
                route_lines.setdefault(tok[1], []).append(lineno)
            elif kw == "param":
                if len(tok) != 3:
                    raise ValueError("expected: param <key> <value>")
                sc.params[tok[1]] = _parse_param(tok[1], tok[2])
            else:
                raise ValueError(f"unknown section {kw!r}")
        except ValueError as exc:
            errors.append((lineno, str(exc)))

    for l in sc.links:
        for end in (l.src, l.dst):
            if end.kind == "sw" and end.node not in seen["switch"]:
                errors.append((link_lines[l.id], f"unresolved reference: switch {end.node}"))
    attached_src = {l.src.node for l in sc.links if l.src.kind == "src"}
    attached_dst = {l.dst.node for l in sc.links if l.dst.kind == "dst"}
    for vc_id, entries in routes.items():
        if vc_id not in seen["vc"]:
            errors.append((route_lines[vc_id][0], f"unresolved reference: VC {vc_id}"))
        for (sw, _, _), n in zip(entries, route_lines[vc_id]):
            if sw not in seen["switch"]:
                errors.append((n, f"unresolved reference: switch {sw}"))
    for vc_id, dst, srcs in vc_decl:
        n = vc_lines[vc_id]
        if dst not in attached_dst:
            errors.append((n, f"unresolved reference: destination {dst}"))
        for s in srcs:
            if s not in attached_src:
                errors.append((n, f"unresolved reference: source {s}"))
        sc.vcs.append(VirtualConnection(vc_id, dst, srcs, tuple(routes.get(vc_id, ()))))
    if errors:
        raise ScenarioError(sorted(errors, key=lambda e: e[0] or 0))
    return sc


def load_scenario(text: str, name: str = "") -> Scenario:
    """Parse and validate; structural errors become :class:`ScenarioError`."""
    sc = parse_scenario(text, name)
    try:
        sc.topology
    except TopologyError as exc:
        raise ScenarioError([(None, v) for v in exc.violations]) from None
    return sc


def _fmt_value(v) -> str:
    if isinstance(v, Fraction):
        return format_exact(v)
    return str(v)


def emit_scenario(sc: Scenario) -> str:
    out = [f"switch {s}" for s in sc.switches]
    for l in sc.links:
        out.append(f"link {l.id} {l.src} {l.dst} {format_exact(l.capacity)}")
    for vc in sc.vcs:
        out.append(f"vc {vc.id} dst {vc.destination} sources {','.join(vc.sources)}")
        for sw, pin, pout in vc.route:
            out.append(f"route {vc.id} {sw} {pin} -> {pout}")
    for k, v in sc.params.items():
        out.append(f"param {k} {_fmt_value(v)}")
    return "\n".join(out) + "\n"


EXAMPLE1 = """\
# Downstream bottleneck: S1, S2, S3 -> dS1 (VC M), SA -> dSA (VC A).
# Chain Sw1 -> Sw2 -> Sw3 -> Sw4; every link 150 Mbps.
switch Sw1
switch Sw2
switch Sw3
switch Sw4
link acc_S1 src:S1 sw:Sw1:1 150
link acc_S2 src:S2 sw:Sw2:2 150
link acc_S3 src:S3 sw:Sw3:2 150
link acc_SA src:SA sw:Sw3:3 150
link LINK1 sw:Sw1:9 sw:Sw2:1 150
link LINK2 sw:Sw2:9 sw:Sw3:1 150
link LINK3 sw:Sw3:9 sw:Sw4:1 150
link eg_dS1 sw:Sw4:8 dst:dS1 150
link eg_dSA sw:Sw4:9 dst:dSA 150
vc M dst dS1 sources S1,S2,S3
route M Sw1 1 -> 9
route M Sw2 1 -> 9
route M Sw2 2 -> 9
route M Sw3 1 -> 9
route M Sw3 2 -> 9
route M Sw4 1 -> 8
vc A dst dSA sources SA
route A Sw3 3 -> 9
route A Sw4 1 -> 9
"""

EXAMPLE2 = """\
# Upstream bottleneck: S1..S4 -> dS1 (VC M), SA -> dSA (VC A).
# Chain Sw1 -> Sw2 -> Sw3 -> Sw4; LINK1 is 50 Mbps, the rest 150 Mbps.
# SA leaves at Sw3 and does not cross LINK3.
switch Sw1
switch Sw2
switch Sw3
switch Sw4
link acc_S1 src:S1 sw:Sw1:1 150
link acc_S2 src:S2 sw:Sw1:2 150
link acc_SA src:SA sw:Sw1:3 150
link acc_S3 src:S3 sw:Sw2:2 150
link acc_S4 src:S4 sw:Sw3:2 150
link LINK1 sw:Sw1:9 sw:Sw2:1 50
link LINK2 sw:Sw2:9 sw:Sw3:1 150
link LINK3 sw:Sw3:9 sw:Sw4:1 150
link eg_dSA sw:Sw3:8 dst:dSA 150
link eg_dS1 sw:Sw4:8 dst:dS1 150
vc M dst dS1 sources S1,S2,S3,S4
route M Sw1 1 -> 9
route M Sw1 2 -> 9
route M Sw2 1 -> 9
route M Sw2 2 -> 9
route M Sw3 1 -> 9
route M Sw3 2 -> 9
route M Sw4 1 -> 8
vc A dst dSA sources SA
route A Sw1 3 -> 9
route A Sw2 1 -> 9
route A Sw3 1 -> 8
"""

BUILTINS = {"example1": EXAMPLE1, "example2": EXAMPLE2}


def builtin_scenario(name: str) -> Scenario:
    if name not in BUILTINS:
        raise ScenarioError([(None, f"unknown built-in scenario {name!r} "
                                    f"(choose from {', '.join(BUILTINS)})")])
    return load_scenario(BUILTINS[name], name)


def resolve_scenario(ref: str) -> Scenario:
    """``builtin:<name>`` or a filesystem path."""
    if ref.startswith("builtin:"):
        return builtin_scenario(ref[len("builtin:"):])
    try:
        with open(ref, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioError([(None, f"cannot read scenario {ref}: {exc.strerror}")]) from None
    return load_scenario(text, ref)


# -- emitters ----------------------------------------------------------------

def format_exact(x: Fraction) -> str:
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def format_decimal(x: Fraction, places: int = 2) -> str:
    """Round half-up to ``places`` decimals."""
    x = Fraction(x)
    scale = 10 ** places
    sign = "-" if x < 0 else ""
    q = abs(x) * scale
    n = int(q + Fraction(1, 2))
    whole, frac = divmod(n, scale)
    return f"{sign}{whole}.{frac:0{places}d}"


def _as_comparison(result) -> Comparison:
    if isinstance(result, AllocationVector):
        t = result.topology
        return Comparison(t.sources, tuple(v.id for v in t.vcs), [result])
    return result


def emit_allocation(result, fmt: str = "table") -> str:
    """Render an allocation or a policy comparison as table, csv or json-lines."""
    cmp = _as_comparison(result)
    rows = []
    for alloc in cmp.rows:
        sums = alloc.vc_sums()
        rows.append((alloc.policy.value,
                     [alloc.rates[s] for s in cmp.sources],
                     [sums[v] for v in cmp.vcs]))
    if fmt == "csv":
        header = ["policy", *cmp.sources, *(f"vc:{v}" for v in cmp.vcs)]
        lines = [",".join(header)]
        for pol, rates, sums in rows:
            lines.append(",".join([pol, *map(format_exact, rates), *map(format_exact, sums)]))
        return "\n".join(lines) + "\n"
    if fmt == "json-lines":
        lines = []
        for pol, rates, sums in rows:
            lines.append(json.dumps({
                "policy": pol,
                "rates": {s: format_exact(r) for s, r in zip(cmp.sources, rates)},
                "vc_sums": {v: format_exact(r) for v, r in zip(cmp.vcs, sums)},
            }))
        return "".join(l + "\n" for l in lines)
    if fmt != "table":
        raise ValueError(f"unknown format {fmt!r}")
    header = ["policy", *cmp.sources, *(f"vc:{v}" for v in cmp.vcs)]
    body = [[pol, *map(format_decimal, rates), *map(format_decimal, sums)]
            for pol, rates, sums in rows]
    return render_table(header, body)


def render_table(header: list, body: list) -> str:
    widths = [len(h) for h in header]
    for row in body:
        widths = [max(w, len(c)) for w, c in zip(widths, row)]
    def fmt(row):
        return "  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                         for i, (c, w) in enumerate(zip(row, widths))).rstrip()
    return "\n".join([fmt(header)] + [fmt(r) for r in body]) + "\n"


def read_allocation(text: str) -> dict:
    """Read rates written by :func:`emit_allocation` (csv or json-lines, first row)."""
    text = text.strip()
    if not text:
        raise ValueError("empty allocation file")
    if text.startswith("{"):
        obj = json.loads(text.splitlines()[0])
        return {s: parse_rational(v) for s, v in obj["rates"].items()}
    lines = [l for l in text.splitlines() if l.strip()]
    header = lines[0].split(",")
    if len(lines) < 2:
        raise ValueError("allocation file has no data row")
    values = lines[1].split(",")
    if len(values) != len(header):
        raise ValueError("allocation row length does not match header")
    return {h: parse_rational(v) for h, v in zip(header, values)
            if h != "policy" and not h.startswith("vc:")}
