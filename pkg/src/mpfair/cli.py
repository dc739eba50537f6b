"""Command-line entry point.

Exit codes: 0 success, 1 input or usage error, 2 verification failure,
3 simulation did not converge.
"""
from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction

from .hwf import FairnessPolicy, compare_policies, verify_maxmin, water_fill
from .scenario import (ScenarioError, emit_allocation, read_allocation, render_table,
                       resolve_scenario)
from .topology import count_flows, flows_at

EXIT_OK, EXIT_INPUT, EXIT_VERIFY, EXIT_DIVERGED = 0, 1, 2, 3
FORMATS = ("table", "csv", "json-lines")
POLICIES = tuple(p.value for p in FairnessPolicy)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INPUT)


def _rows_out(header, rows, fmt):
    """Plain records in the requested format."""
    if fmt == "csv":
        return "".join(",".join(map(str, r)) + "\n" for r in [header, *rows])
    if fmt == "json-lines":
        return "".join(json.dumps(dict(zip(header, r))) + "\n" for r in rows)
    return render_table(list(header), [[str(c) for c in r] for r in rows])


def _write(args, text):
    if args.out in (None, "-", "stdout"):
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)


def _report(violations):
    for v in violations:
        print(f"verification failed: {v}", file=sys.stderr)


def cmd_allocate(args):
    sc = resolve_scenario(args.scenario)
    policy = FairnessPolicy.parse(args.policy)
    alloc = water_fill(sc.topology, policy)
    _write(args, emit_allocation(alloc, args.format))
    report = verify_maxmin(sc.topology, policy, alloc.rates)
    if not report.ok:
        _report(report.violations)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_compare(args):
    sc = resolve_scenario(args.scenario)
    policies = [FairnessPolicy.parse(p) for p in args.policies.split(",")] \
        if args.policies else None
    cmp = compare_policies(sc.topology, policies)
    _write(args, emit_allocation(cmp, args.format))
    bad = []
    for alloc in cmp.rows:
        rep = verify_maxmin(sc.topology, alloc.policy, alloc.rates)
        bad += [f"{alloc.policy.value}: {v}" for v in rep.violations]
    if bad:
        _report(bad)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_flows(args):
    sc = resolve_scenario(args.scenario)
    topo = sc.topology
    links = topo.links if args.all else topo.switch_links()
    if args.format == "table":
        lines = []
        for l in links:
            lines.append(f"{l.id}: {count_flows(topo, l.id)}")
            if args.detail and l.src.kind == "sw":
                for f in flows_at(topo, l.src.node, l.src.port):
                    lines.append(f"  {f.vc} from port {f.in_port}: "
                                 f"{','.join(sorted(f.members))}")
        _write(args, "\n".join(lines) + "\n")
    else:
        rows = [(l.id, count_flows(topo, l.id)) for l in links]
        _write(args, _rows_out(("link", "flows"), rows, args.format))
    return EXIT_OK


def cmd_verify(args):
    sc = resolve_scenario(args.scenario)
    policy = FairnessPolicy.parse(args.policy)
    try:
        with open(args.allocation, encoding="utf-8") as fh:
            rates = read_allocation(fh.read())
    except OSError as exc:
        raise UsageError(f"cannot read allocation {args.allocation}: {exc.strerror}")
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad allocation file {args.allocation}: {exc}")
    unknown = sorted(set(rates) - set(sc.topology.sources))
    if unknown:
        raise UsageError(f"allocation names unknown sources: {', '.join(unknown)}")
    report = verify_maxmin(sc.topology, policy, rates)
    if report.ok:
        rows = [(s, link, "/".join(chain)) for s, (link, chain) in report.certificates.items()]
        _write(args, _rows_out(("source", "bottleneck", "chain"), rows, args.format))
        return EXIT_OK
    _report(report.violations)
    return EXIT_VERIFY


def cmd_simulate(args):
    from .sim.engine import run_simulation, write_trace

    sc = resolve_scenario(args.scenario)
    policy = FairnessPolicy.parse(args.policy)
    if args.duration_ms is not None and args.duration_ms < 0:
        raise UsageError("--duration-ms must not be negative")
    res = run_simulation(sc, policy, args.merge_alg, args.merge_mode, args.duration_ms,
                         seed=args.seed, utilization=args.utilization)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            write_trace(res.trace, fh)
    u = Fraction(res.utilization).limit_denominator(10**6)
    oracle = water_fill(sc.topology, policy).rates
    rows = []
    for s in sc.topology.sources:
        want = float(oracle[s] * u)
        got = res.steady_rates[s]
        err = abs(got - want) / want if want else float("inf")
        rows.append(("source", s, f"{got:.4f}", f"{want:.4f}", f"{err:.4f}",
                     f"{res.amplitudes[s]:.4f}"))
    if res.merge_mode == "vp":
        for (sw, out), ps in sorted(res.port_states.items()):
            for src, rate in sorted((ps.source_rates or {}).items()):
                rows.append(("port_source", f"{sw}:{out}/{src}", f"{rate:.4f}", "", "", ""))
    header = ("kind", "entity", "steady_rate", "oracle_rate", "rel_error", "amplitude")
    _write(args, _rows_out(header, rows, args.format))
    status = "converged" if res.converged else "did not converge"
    print(f"{status}: max link load {res.max_link_load_ratio():.3f} of capacity",
          file=sys.stderr)
    return EXIT_OK if res.converged else EXIT_DIVERGED


def _levels(text):
    try:
        levels = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}") from None
    if not levels or min(levels) < 1:
        raise argparse.ArgumentTypeError("levels must be positive integers")
    return levels


def cmd_probe_depth(args):
    from .sim.probe import PROBE_COLUMNS, feedback_delay_probe, probe_csv

    rows = feedback_delay_probe(args.levels, duration_ms=args.duration_ms, rate=args.rate,
                                seed=args.seed, stagger=not args.synchronized)
    if args.format == "csv":
        _write(args, probe_csv(rows))
    else:
        recs = [(r.algorithm, r.depth, r.samples, f"{r.mean_feedback_delay_us:.3f}",
                 f"{r.max_feedback_delay_us:.3f}", f"{r.mean_brm_rtt_us:.3f}") for r in rows]
        _write(args, _rows_out(PROBE_COLUMNS, recs, args.format))
    return EXIT_OK


def _common():
    # a fresh parent per subcommand: parents share action objects
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", default="builtin:example1",
                        help="scenario file or builtin:<name> (default: builtin:example1)")
    common.add_argument("--format", choices=FORMATS, default="table")
    common.add_argument("--out", default="-", help="output path (default: stdout)")
    common.add_argument("--seed", type=int, default=0)
    return common


def build_parser():

    parser = _Parser(prog="mpfair",
                     description="Max-min fairness for multipoint-to-point connections.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("allocate", parents=[_common()], help="centralized allocation")
    p.add_argument("--policy", choices=POLICIES, default="source")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("compare", parents=[_common()], help="all policies side by side")
    p.add_argument("--policies", help="comma-separated subset (default: all four)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("flows", parents=[_common()], help="flow counts per link")
    p.add_argument("--all", action="store_true", help="include access links")
    p.add_argument("--detail", action="store_true", help="list the flows (table format)")
    p.set_defaults(func=cmd_flows)

    p = sub.add_parser("verify", parents=[_common()], help="certify an allocation file")
    p.add_argument("--allocation", required=True, help="csv or json-lines allocation")
    p.add_argument("--policy", choices=POLICIES, default="source")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", parents=[_common()], help="ABR feedback simulation")
    p.add_argument("--policy", choices=POLICIES, default="source")
    p.add_argument("--merge-alg", choices=("turnaround", "bitmark"))
    p.add_argument("--merge-mode", choices=("vc", "vp"))
    p.add_argument("--duration-ms", type=float)
    p.add_argument("--utilization", type=float)
    p.add_argument("--trace", help="write the per-interval trace CSV here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("probe-depth", parents=[_common()], help="feedback delay vs merge depth")
    p.add_argument("--levels", type=_levels, default=[1, 2, 4, 8])
    p.add_argument("--duration-ms", type=float, default=100)
    p.add_argument("--rate", type=float, default=10)
    p.add_argument("--synchronized", action="store_true",
                   help="start every source at time zero instead of staggering")
    p.set_defaults(func=cmd_probe_depth, format="csv")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
