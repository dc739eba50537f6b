"""Discrete-event ABR simulation over a scenario.

Time is in microseconds, rates in Mbit/s, so one cell takes ``424 / rate``
microseconds on the wire. Events are ordered by (time, sequence number),
which makes every run with the same inputs and seed reproduce exactly.
"""
from __future__ import annotations

import csv
import heapq
import io
import random
from dataclasses import dataclass, field

from ..hwf import FairnessPolicy
from .cells import BACKWARD, CELL_BITS, SourceState
from .merge import BITMARK, TURNAROUND, MergePoint, MergeQueue
from .switch import VC_MERGE, VP_MERGE, SwitchRateState

EMIT, FWD, BWD, TICK = range(4)

TRACE_COLUMNS = ("time_us", "entity_kind", "entity_id", "metric", "value")
AMPLITUDE_LIMIT = 0.10


class _Channel:
    """One direction of a link: FIFO serialization plus a fixed propagation delay."""

    __slots__ = ("link", "tx", "prop", "busy", "limit", "drops", "interval_cells",
                 "sent", "delivered")

    def __init__(self, link, prop, limit=None):
        self.link = link
        self.tx = CELL_BITS / float(link.capacity)
        self.prop = prop
        self.busy = 0.0
        self.limit = limit
        self.drops = 0
        self.interval_cells = 0
        self.sent = {}       # (vc, kind) -> cells put on the wire
        self.delivered = {}  # (vc, kind) -> cells that reached the far end

    def queue(self, now):
        return max(0.0, self.busy - now) / self.tx

    def send(self, now, cell):
        """Arrival time at the far end, or None if the cell is dropped."""
        if self.limit is not None and self.queue(now) >= self.limit:
            self.drops += 1
            return None
        start = self.busy if self.busy > now else now
        self.busy = start + self.tx
        self.interval_cells += 1
        key = (cell.vc, _kind(cell))
        self.sent[key] = self.sent.get(key, 0) + 1
        return self.busy + self.prop

    def arrived(self, cell):
        key = (cell.vc, _kind(cell))
        self.delivered[key] = self.delivered.get(key, 0) + 1


def _kind(cell):
    if not cell.is_rm:
        return "data"
    return "brm" if cell.direction == BACKWARD else "frm"


@dataclass
class SimulationResult:
    policy: FairnessPolicy
    merge_alg: str
    merge_mode: str
    duration_us: float
    interval_us: float
    utilization: float
    trace: list
    acr_series: dict            # source -> per-interval time-averaged ACR
    steady_rates: dict
    amplitudes: dict
    converged: bool
    link_load_series: dict      # link -> per-interval load (Mbit/s)
    merge_points: dict          # (switch, vc, out_port) -> MergePoint
    merge_queues: dict          # (switch, vc, out_port) -> MergeQueue
    port_states: dict           # (switch, out_port) -> SwitchRateState
    forward_channels: dict      # link id -> _Channel
    backward_channels: dict
    branch_links: dict          # (switch, vc, out_port) -> {in_port: link id}
    out_links: dict             # (switch, vc, out_port) -> link id
    brm_log: list = field(default_factory=list)     # (time, source, er, seq, root_time)
    frm_log: dict = field(default_factory=dict)     # (source, seq) -> emission time
    root_log: dict = field(default_factory=dict)    # (source, seq) -> arrival at destination
    merged_streams: dict = field(default_factory=dict)
    merge_counts: dict = field(default_factory=dict)  # key -> [(cum data in, cum data out)] per tick

    @property
    def steady_window(self) -> int:
        n = len(next(iter(self.acr_series.values()), []))
        return max(1, n // 4) if n else 0

    def max_link_load_ratio(self) -> float:
        """Largest steady-state mean load over capacity."""
        w = self.steady_window
        worst = 0.0
        for lid, series in self.link_load_series.items():
            if not series:
                continue
            tail = series[-w:]
            cap = float(self.forward_channels[lid].link.capacity)
            worst = max(worst, sum(tail) / len(tail) / cap)
        return worst

    def trace_csv(self) -> str:
        return write_trace(self.trace)


def write_trace(rows, fh=None):
    """Trace rows as CSV; returns the text when ``fh`` is None."""
    buf = fh if fh is not None else io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for t, kind, ent, metric, value in rows:
        w.writerow((f"{t:.3f}", kind, ent, metric, f"{value:.6g}"))
    return None if fh is not None else buf.getvalue()


def steady_stats(series):
    """Mean and half peak-to-peak amplitude (relative to the mean) over the last quarter."""
    if not series:
        return 0.0, float("inf")
    tail = series[-max(1, len(series) // 4):]
    mean = sum(tail) / len(tail)
    if mean <= 0:
        return mean, float("inf")
    return mean, (max(tail) - min(tail)) / (2 * mean)


class Simulator:
    def __init__(self, scenario, policy="source", merge_alg=None, merge_mode=None,
                 duration_ms=None, seed=0, utilization=None, interval_ms=None,
                 prop_delay_us=None, jitter=True, queue_limit=None, merge_buffer=None,
                 mer_min=False, record_streams=False):
        sc = scenario
        topo = sc.topology
        self.topology = topo
        self.policy = FairnessPolicy.parse(policy) if isinstance(policy, str) else policy
        self.merge_alg = merge_alg or sc.param("merge_alg", TURNAROUND)
        self.merge_mode = merge_mode or sc.param("merge_mode", VC_MERGE)
        if self.merge_alg not in (TURNAROUND, BITMARK):
            raise ValueError(f"unknown merge algorithm {self.merge_alg!r}")
        if self.merge_mode not in (VC_MERGE, VP_MERGE):
            raise ValueError(f"unknown merge mode {self.merge_mode!r}")

        def pick(explicit, key, default):
            return float(explicit if explicit is not None else sc.param(key, default))

        self.duration = pick(duration_ms, "duration_ms", 500) * 1000.0
        self.interval = pick(interval_ms, "interval_ms", 1) * 1000.0
        self.utilization = pick(utilization, "utilization", 0.95)
        prop = pick(prop_delay_us, "prop_delay_us", 1)
        if self.interval <= 0:
            raise ValueError("measurement interval must be positive")
        if queue_limit is None:
            queue_limit = sc.param("queue_limit")
        if merge_buffer is None:
            merge_buffer = sc.param("merge_buffer")
        self.record_streams = record_streams
        rng = random.Random(seed)

        self.sources = {}
        self.start = {}
        for vc in topo.vcs:
            for s in vc.sources:
                pcr = sc.param("pcr", 150, source=s)
                st = SourceState(s, vc.id, pcr, sc.param("icr", None, source=s),
                                 int(sc.param("nrm", 32, source=s)),
                                 int(sc.param("packet_cells", 8)))
                self.sources[s] = st
                offset = rng.uniform(0, self.interval) if jitter else 0.0
                self.start[s] = float(sc.param("start_us", 0, source=s)) + offset

        self.fwd = {l.id: _Channel(l, prop, queue_limit) for l in topo.links}
        self.bwd = {l.id: _Channel(l, prop) for l in topo.links}
        self.ports = {
            (l.src.node, l.src.port): SwitchRateState(
                l.src.node, l, self.policy, self.merge_mode, self.utilization, self.interval)
            for l in topo.switch_links()
        }
        self.route = {}
        self.back = {}
        for vc in topo.vcs:
            for sw, pin, pout in vc.route:
                self.route[(vc.id, sw, pin)] = pout
                self.back.setdefault((vc.id, sw, pout), []).append(pin)
        self.merges = {}
        self.queues = {}
        self.branch_links = {}
        self.out_links = {}
        for sw, vc_id, out in topo.merge_points():
            branches = topo.branches(sw, vc_id, out)
            pcr = max(self.sources[s].pcr for s in topo.vc(vc_id).sources)
            self.merges[(sw, vc_id, out)] = MergePoint(branches, self.merge_alg, pcr, mer_min)
            if self.merge_mode == VC_MERGE:
                self.queues[(sw, vc_id, out)] = MergeQueue(merge_buffer)
            self.branch_links[(sw, vc_id, out)] = {b: topo.link_in(sw, b).id for b in branches}
            self.out_links[(sw, vc_id, out)] = topo.link_out(sw, out).id
        self.streams = {k: [] for k in self.merges} if record_streams else {}
        self.merge_counts = {k: [] for k in self.merges}

        self.events = []
        self.seq = 0
        self.gen = {s: 0 for s in self.sources}
        self.last_emit = {s: None for s in self.sources}
        self.acr_area = {s: 0.0 for s in self.sources}
        self.acr_since = {s: 0.0 for s in self.sources}
        self.trace = []
        self.acr_series = {s: [] for s in self.sources}
        self.load_series = {l.id: [] for l in topo.links}
        self.brm_log = []
        self.frm_log = {}
        self.root_log = {}

    def _push(self, t, kind, a, b=None):
        self.seq += 1
        heapq.heappush(self.events, (t, self.seq, kind, a, b))

    def _transmit(self, now, link_id, cell):
        t = self.fwd[link_id].send(now, cell)
        if t is not None:
            self._push(t, FWD, link_id, cell)

    def _transmit_back(self, now, link_id, cell):
        t = self.bwd[link_id].send(now, cell)
        if t is not None:
            self._push(t, BWD, link_id, cell)

    # -- sources --------------------------------------------------------------
    def _set_acr(self, now, st, er):
        s = st.source
        self.acr_area[s] += st.acr * (now - self.acr_since[s])
        self.acr_since[s] = now
        st.on_brm(er)

    def _emit(self, now, s, gen):
        if gen != self.gen[s]:
            return
        st = self.sources[s]
        cell = st.next_cell(now)
        if cell is None:
            return
        if cell.is_rm:
            self.frm_log[(s, cell.seq)] = now
        self.last_emit[s] = now
        self._transmit(now, self.topology.access_link(s).id, cell)
        self._push(now + st.cell_gap(), EMIT, s, gen)

    def _reschedule(self, now, s):
        st = self.sources[s]
        if st.acr <= 0:
            return
        self.gen[s] += 1
        last = self.last_emit[s]
        t = now if last is None else max(now, last + st.cell_gap())
        self._push(t, EMIT, s, self.gen[s])

    # -- forward path ---------------------------------------------------------
    def _forward(self, now, link_id, cell):
        link = self.fwd[link_id].link
        self.fwd[link_id].arrived(cell)
        end = link.dst
        if end.kind == "dst":
            if cell.is_rm:
                self.root_log[(cell.origin, cell.seq)] = now
                self._transmit_back(now, link_id, cell.backward(cell.er, root_time=now))
            return
        sw, pin = end.node, end.port
        out = self.route[(cell.vc, sw, pin)]
        out_link = self.topology.link_out(sw, out).id
        self.ports[(sw, out)].count(cell.vc, pin, cell.origin)
        key = (sw, cell.vc, out)
        mp = self.merges.get(key)
        if cell.is_rm:
            if mp is not None:
                cell, replies = mp.on_frm(cell, pin)
                for branch, brm in replies:
                    self._send_down(now, sw, out, branch, brm)
            self._transmit(now, out_link, cell)
            return
        q = self.queues.get(key)
        if q is None:
            self._transmit(now, out_link, cell)
            return
        for flow, c, eom in q.enqueue(pin, cell, cell.eom):
            if self.record_streams:
                self.streams[key].append((flow, eom))
            self._transmit(now, out_link, c)

    # -- backward path --------------------------------------------------------
    def _send_down(self, now, sw, out, branch, brm):
        er = self.ports[(sw, out)].stamp(brm.vc, branch, brm.er, brm.origin)
        self._transmit_back(now, self.topology.link_in(sw, branch).id, brm.with_er(er))

    def _backward(self, now, link_id, cell):
        link = self.bwd[link_id].link
        self.bwd[link_id].arrived(cell)
        end = link.src
        if end.kind == "src":
            st = self.sources[end.node]
            self.brm_log.append((now, end.node, cell.er, cell.seq, cell.root_time))
            self._set_acr(now, st, cell.er)
            self._reschedule(now, end.node)
            return
        sw, out = end.node, end.port
        mp = self.merges.get((sw, cell.vc, out))
        if mp is not None:
            copies = mp.on_brm(cell)
        else:
            copies = [(b, cell) for b in self.back[(cell.vc, sw, out)]]
        for branch, brm in copies:
            self._send_down(now, sw, out, branch, brm)

    # -- measurement ----------------------------------------------------------
    def _tick(self, now):
        span = self.interval
        for s, st in self.sources.items():
            self.acr_area[s] += st.acr * (now - self.acr_since[s])
            self.acr_since[s] = now
            avg = self.acr_area[s] / span
            self.acr_area[s] = 0.0
            self.acr_series[s].append(avg)
            self.trace.append((now, "source", s, "acr", avg))
        for lid, ch in self.fwd.items():
            load = ch.interval_cells * CELL_BITS / span
            ch.interval_cells = 0
            self.load_series[lid].append(load)
            self.trace.append((now, "link", lid, "load", load))
            self.trace.append((now, "link", lid, "queue_cells", ch.queue(now)))
        for key, snaps in self.merge_counts.items():
            vc = key[1]
            cin = sum(self.fwd[l].delivered.get((vc, "data"), 0)
                      for l in self.branch_links[key].values())
            cout = self.fwd[self.out_links[key]].sent.get((vc, "data"), 0)
            snaps.append((cin, cout))
        for (sw, out), ps in self.ports.items():
            ps.end_interval(self.fwd[self.topology.link_out(sw, out).id].queue(now))
            port = f"{sw}:{out}"
            if self.policy is FairnessPolicy.SOURCE:
                self.trace.append((now, "port", port, "share", ps.share))
            if ps.source_rates is not None:
                for src in sorted(ps.source_rates):
                    self.trace.append((now, "port_source", f"{port}/{src}", "measured_rate",
                                       ps.source_rates[src]))

    def run(self) -> SimulationResult:
        for s in sorted(self.sources, key=lambda x: (self.start[x], x)):
            self.acr_since[s] = 0.0
            self.last_emit[s] = None
            self._push(self.start[s], EMIT, s, 0)
        k = 1
        while k * self.interval <= self.duration + 1e-9:
            self._push(k * self.interval, TICK, k)
            k += 1
        handlers = {EMIT: self._emit, FWD: self._forward, BWD: self._backward}
        events = self.events
        end = self.duration
        while events:
            t, _seq, kind, a, b = heapq.heappop(events)
            if t > end:
                break
            if kind == TICK:
                self._tick(t)
            else:
                handlers[kind](t, a, b)
        return self._result()

    def _result(self):
        steady, amps = {}, {}
        for s, series in self.acr_series.items():
            steady[s], amps[s] = steady_stats(series)
        converged = bool(self.acr_series) and all(a < AMPLITUDE_LIMIT for a in amps.values())
        return SimulationResult(
            policy=self.policy, merge_alg=self.merge_alg, merge_mode=self.merge_mode,
            duration_us=self.duration, interval_us=self.interval,
            utilization=self.utilization, trace=self.trace,
            acr_series=self.acr_series, steady_rates=steady, amplitudes=amps,
            converged=converged, link_load_series=self.load_series,
            merge_points=self.merges, merge_queues=self.queues, port_states=self.ports,
            forward_channels=self.fwd, backward_channels=self.bwd,
            branch_links=self.branch_links, out_links=self.out_links,
            brm_log=self.brm_log, frm_log=self.frm_log, root_log=self.root_log,
            merged_streams=self.streams, merge_counts=self.merge_counts,
        )


def run_simulation(scenario, policy="source", merge_alg=None, merge_mode=None,
                   duration_ms=None, seed=0, **options) -> SimulationResult:
    """Run one simulation; ``options`` are passed to :class:`Simulator`."""
    return Simulator(scenario, policy, merge_alg, merge_mode, duration_ms, seed,
                     **options).run()
