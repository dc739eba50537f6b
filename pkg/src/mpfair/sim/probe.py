"""Feedback delay as a function of the number of merge levels."""
from __future__ import annotations

import bisect
import csv
import io
from dataclasses import dataclass

from ..scenario import load_scenario
from .engine import run_simulation
from .merge import BITMARK, TURNAROUND

LEAF = "L"


def chain_scenario(depth: int, rate=10, capacity=150):
    """A leaf joined by one side source at each of ``depth`` successive switches.

    Every source runs at a fixed ``rate`` (PCR = ICR), far below any link's
    share, so ACRs never move and FRMs leave on a synchronized schedule.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    lines = [f"param pcr {rate}", f"param icr {rate}"]
    lines += [f"switch Sw{i}" for i in range(1, depth + 1)]
    lines.append(f"link acc_{LEAF} src:{LEAF} sw:Sw1:1 {capacity}")
    routes = [f"route T Sw1 1 -> 9"]
    sources = [LEAF]
    for i in range(1, depth + 1):
        side = f"X{i}"
        sources.append(side)
        lines.append(f"link acc_{side} src:{side} sw:Sw{i}:2 {capacity}")
        routes.append(f"route T Sw{i} 2 -> 9")
        if i < depth:
            lines.append(f"link T{i} sw:Sw{i}:9 sw:Sw{i + 1}:1 {capacity}")
            routes.append(f"route T Sw{i + 1} 1 -> 9")
    lines.append(f"link T{depth} sw:Sw{depth}:9 dst:R {capacity}")
    lines.append(f"vc T dst R sources {','.join(sources)}")
    lines += routes
    return load_scenario("\n".join(lines) + "\n", f"chain{depth}")


@dataclass
class ProbeRow:
    algorithm: str
    depth: int
    samples: int
    mean_feedback_delay_us: float
    max_feedback_delay_us: float
    mean_brm_rtt_us: float


def leaf_delays(result, leaf=LEAF, warmup_us=None):
    """Per-FRM delays seen by the leaf after the warm-up.

    Returns ``(feedback, round_trip)``. Feedback delay runs from FRM emission
    until the leaf first receives a BRM carrying destination feedback at least
    as recent as that FRM's arrival at the destination; FRMs never answered
    that way are left out. Round trip runs from FRM emission to the next BRM.
    """
    if warmup_us is None:
        warmup_us = result.duration_us / 10
    brms = [(t, rt) for t, s, _er, _seq, rt in result.brm_log if s == leaf]
    times = [t for t, _ in brms]
    feedback, round_trip = [], []
    for (src, seq), t_emit in sorted(result.frm_log.items(), key=lambda kv: kv[1]):
        if src != leaf or t_emit < warmup_us:
            continue
        i = bisect.bisect_right(times, t_emit)
        if i == len(times):
            continue
        round_trip.append(times[i] - t_emit)
        t_root = result.root_log.get((src, seq))
        if t_root is None:
            continue
        for t, rt in brms[i:]:
            if rt is not None and rt >= t_root:
                feedback.append(t - t_emit)
                break
    return feedback, round_trip


def staggered_starts(scenario, rate):
    """Start offsets spreading the sources' FRMs evenly over one FRM period."""
    sources = scenario.topology.sources
    period = 32 * 424 / float(rate)
    return {s: i * period / len(sources) for i, s in enumerate(sources)}


def _mean(xs):
    return sum(xs) / len(xs) if xs else float("nan")


def feedback_delay_probe(depths=(1, 2, 4, 8), algorithms=(TURNAROUND, BITMARK),
                         duration_ms=100, rate=10, seed=0, stagger=True) -> list:
    """Run the chain at each depth under each algorithm.

    With ``stagger`` the sources start evenly spread over one FRM period;
    otherwise all start together. Either way both algorithms see the same
    emission schedule.
    """
    rows = []
    for alg in algorithms:
        for k in depths:
            sc = chain_scenario(k, rate)
            if stagger:
                for s, t in staggered_starts(sc, rate).items():
                    sc.params[f"source.{s}.start_us"] = t
            res = run_simulation(sc, "source", alg, "vc", duration_ms, seed=seed,
                                 jitter=False)
            fb, rtt = leaf_delays(res)
            rows.append(ProbeRow(alg, k, len(fb), _mean(fb),
                                 max(fb) if fb else float("nan"), _mean(rtt)))
    return rows


PROBE_COLUMNS = ("algorithm", "depth", "samples", "mean_feedback_delay_us",
                 "max_feedback_delay_us", "mean_brm_rtt_us")


def probe_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PROBE_COLUMNS)
    for r in rows:
        w.writerow((r.algorithm, r.depth, r.samples, f"{r.mean_feedback_delay_us:.3f}",
                    f"{r.max_feedback_delay_us:.3f}", f"{r.mean_brm_rtt_us:.3f}"))
    return buf.getvalue()


def is_monotone(rows, algorithm) -> bool:
    """Mean feedback delay never decreases with depth."""
    seq = [r.mean_feedback_delay_us for r in sorted(rows, key=lambda r: r.depth)
           if r.algorithm == algorithm]
    # an unanswered depth counts as an unbounded delay
    seq = [float("inf") if x != x else x for x in seq]
    return all(a <= b for a, b in zip(seq, seq[1:]))
