"""Post-run audits: RM conservation at merge points and the VC-merge accounting rule."""
from __future__ import annotations

from dataclasses import dataclass

from .cells import CELL_BITS
from .merge import BITMARK
from .switch import VC_MERGE


@dataclass
class ConservationReport:
    merge_point: tuple
    frm_in: dict          # branch -> FRMs delivered into the switch
    frm_out: int          # FRMs of the VC put on the output link
    data_in: dict
    data_out: int
    brm_down: dict        # branch -> BRMs sent back down the branch
    data_slack: float     # cells allowed between inflow and outflow
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def conservation_check(result, merge_point) -> ConservationReport:
    """Counting identities at one merge point, read off the link counters.

    FRMs are forwarded without delay, so the output count must equal the sum
    of the branch counts exactly. Data cells may sit in the merge queue, so
    their totals may differ by at most one measurement interval's worth of
    cells at the downstream rate.
    """
    sw, vc, out = merge_point
    fwd, bwd = result.forward_channels, result.backward_channels
    branches = result.branch_links[merge_point]
    out_link = result.out_links[merge_point]
    frm_in = {b: fwd[l].delivered.get((vc, "frm"), 0) for b, l in branches.items()}
    data_in = {b: fwd[l].delivered.get((vc, "data"), 0) for b, l in branches.items()}
    brm_down = {b: bwd[l].sent.get((vc, "brm"), 0) for b, l in branches.items()}
    frm_out = fwd[out_link].sent.get((vc, "frm"), 0)
    data_out = fwd[out_link].sent.get((vc, "data"), 0)

    violations = []
    if frm_out != sum(frm_in.values()):
        violations.append(f"{sw}:{out} VC {vc}: {frm_out} FRMs forwarded, "
                          f"{sum(frm_in.values())} received on branches")
    duration = result.duration_us
    rate_out = data_out * CELL_BITS / duration if duration > 0 else 0.0
    slack = max(1.0, rate_out * result.interval_us / CELL_BITS)
    if abs(sum(data_in.values()) - data_out) > slack:
        violations.append(f"{sw}:{out} VC {vc}: data in {sum(data_in.values())} vs out "
                          f"{data_out} exceeds {slack:.1f} cells")
    if result.merge_alg == BITMARK:
        for b in branches:
            if brm_down[b] > frm_in[b]:
                violations.append(f"{sw}:{out} VC {vc}: branch {b} got {brm_down[b]} BRMs "
                                  f"for {frm_in[b]} FRMs")
    return ConservationReport(merge_point, frm_in, frm_out, data_in, data_out, brm_down,
                              slack, violations)


def interval_rate_check(result, merge_point) -> list:
    """Steady-window data rate downstream vs the sum of branch rates.

    Compares cumulative cell counts at every interval boundary of the final
    quarter; returns ``(interval index, inflow, outflow)`` wherever the two
    drift apart by more than one interval's worth of downstream cells.
    """
    snaps = result.merge_counts.get(merge_point, [])
    w = result.steady_window
    if not snaps or w == 0:
        return []
    tail = snaps[-(w + 1):]
    base_in, base_out = tail[0]
    span_out = tail[-1][1] - base_out
    slack = max(1.0, span_out / max(1, len(tail) - 1))
    bad = []
    for i, (cin, cout) in enumerate(tail[1:], start=len(snaps) - len(tail) + 1):
        din, dout = cin - base_in, cout - base_out
        if abs(din - dout) > slack:
            bad.append((i, din, dout))
    return bad


def per_source_state(result) -> list:
    """Switch ports holding any state keyed by a source id.

    Under VC merge the answer must be empty: keys are VCs, (VC, input port)
    flows, or nothing.
    """
    sources = set(result.steady_rates)
    found = []
    for port, ps in result.port_states.items():
        if ps.source_cells is not None or ps.source_rates is not None:
            found.append((port, "per-source counters"))
        for key in ps.state_keys():
            parts = key if isinstance(key, tuple) else (key,)
            if any(p in sources for p in parts):
                found.append((port, key))
    return found


def accounting_is_vc_only(result) -> bool:
    return result.merge_mode != VC_MERGE or not per_source_state(result)
