"""Explicit-rate computation at a switch output port.

The switch never sees individual senders under VC merge: it may count cells
per VC and per (VC, input port) flow, plus the aggregate. Under VP merge the
VCI identifies the sender and per-source counters are kept as well.

Shares are recomputed once per measurement interval:

* source fairness, VC merge: one scalar per-source share, scaled each
  interval by ``(target / measured load) ** gain``; the fixed point loads the
  link to exactly its target with every locally bottlenecked source at the
  share.
* source fairness, VP merge: the max-min level over measured per-source rates.
* VC/source: max-min VC shares from measured VC rates, and inside each VC the
  same scalar update driven by the VC's share.
* flow and VC/flow: max-min shares over measured flow (or VC) rates; the
  ER arriving from downstream is the allocation of this port's aggregate and
  is subdivided among the VC's flows here.
"""
from __future__ import annotations

from ..hwf import FairnessPolicy, waterfill_level

VC_MERGE = "vc"
VP_MERGE = "vp"


def unbounded_share(capacity, demands: dict, key):
    """Share ``key`` would get if it wanted more, others held to ``demands``."""
    keys = list(demands)
    vals = [None if k == key else demands[k] for k in keys]
    return waterfill_level(capacity, vals)[keys.index(key)]


class SwitchRateState:
    def __init__(self, switch, link, policy, mode, utilization=0.95, interval_us=1000.0,
                 gain=0.5, queue_threshold=50, drain_intervals=10):
        self.switch = switch
        self.link = link.id
        self.capacity = float(link.capacity)
        self.policy = policy
        self.mode = mode
        self.utilization = float(utilization)
        self.interval_us = float(interval_us)
        self.gain = gain
        self.queue_threshold = queue_threshold
        self.drain_intervals = drain_intervals
        # counters for the running interval
        self.cells = 0
        self.vc_cells = {}
        self.flow_cells = {}
        # per-source accounting exists only where senders are distinguishable
        self.source_cells = {} if mode == VP_MERGE else None
        # last interval's measurements and the shares derived from them
        self.load = 0.0
        self.vc_rates = {}
        self.flow_rates = {}
        self.source_rates = {} if mode == VP_MERGE else None
        self.target = self.capacity * self.utilization
        self.share = self.target
        self.vc_share = {}
        self.vc_inner = {}
        self.flow_share = {}

    def count(self, vc, in_port, origin=None):
        self.cells += 1
        self.vc_cells[vc] = self.vc_cells.get(vc, 0) + 1
        key = (vc, in_port)
        self.flow_cells[key] = self.flow_cells.get(key, 0) + 1
        if self.source_cells is not None:
            self.source_cells[origin] = self.source_cells.get(origin, 0) + 1

    def _rate(self, cells):
        return cells * 424 / self.interval_us

    def _scaled(self, current, target, load):
        if load <= 0:
            return target
        factor = (target / load) ** self.gain
        factor = min(2.0, max(0.5, factor))
        return min(target, max(target * 1e-4, current * factor))

    def end_interval(self, queue_cells=0.0):
        """Close the measurement interval and recompute shares."""
        self.load = self._rate(self.cells)
        # idle entities drop out after one silent interval
        self.vc_rates = {k: self._rate(v) for k, v in self.vc_cells.items()}
        self.flow_rates = {k: self._rate(v) for k, v in self.flow_cells.items()}
        if self.source_cells is not None:
            self.source_rates = {k: self._rate(v) for k, v in self.source_cells.items()}
            self.source_cells = {}
        self.cells = 0
        self.vc_cells = {}
        self.flow_cells = {}

        # backlog above the threshold is drained over ``drain_intervals``
        excess = max(0.0, queue_cells - self.queue_threshold)
        base = self.capacity * self.utilization
        drain = excess * 424 / (self.interval_us * self.drain_intervals)
        self.target = max(base / 2, base - drain)

        p = self.policy
        if p is FairnessPolicy.SOURCE:
            if self.mode == VP_MERGE:
                rates = self.source_rates
                if rates:
                    top = max(rates, key=lambda k: (rates[k], str(k)))
                    self.share = unbounded_share(self.target, rates, top)
                else:
                    self.share = self.target
            else:
                self.share = self._scaled(self.share, self.target, self.load)
        if p in (FairnessPolicy.VC_SOURCE, FairnessPolicy.VC_FLOW):
            self.vc_share = {v: unbounded_share(self.target, self.vc_rates, v)
                             for v in self.vc_rates}
        if p is FairnessPolicy.VC_SOURCE:
            self.vc_inner = {
                v: self._scaled(self.vc_inner.get(v, s), s, self.vc_rates[v])
                for v, s in self.vc_share.items()
            }
        if p is FairnessPolicy.FLOW:
            self.flow_share = {f: unbounded_share(self.target, self.flow_rates, f)
                               for f in self.flow_rates}

    def _subdivide(self, vc, in_port, allocation):
        flows = {f: r for f, r in self.flow_rates.items() if f[0] == vc}
        key = (vc, in_port)
        if key not in flows:
            return allocation
        return unbounded_share(allocation, flows, key)

    def stamp(self, vc, in_port, er, origin=None):
        """ER for a BRM leaving this port backward toward ``in_port``."""
        p = self.policy
        if p is FairnessPolicy.SOURCE:
            return min(er, self.share)
        if p is FairnessPolicy.VC_SOURCE:
            return min(er, self.vc_inner.get(vc, self.target))
        if p is FairnessPolicy.FLOW:
            here = self.flow_share.get((vc, in_port), self.target)
            return min(here, self._subdivide(vc, in_port, er))
        allocation = min(er, self.vc_share.get(vc, self.target))
        return self._subdivide(vc, in_port, allocation)

    def state_keys(self):
        """Every key held in rate state, for the VC-merge accounting audit."""
        keys = set(self.vc_cells) | set(self.vc_rates) | set(self.vc_share) | set(self.vc_inner)
        keys |= set(self.flow_cells) | set(self.flow_rates) | set(self.flow_share)
        if self.source_cells is not None:
            keys |= set(self.source_cells) | set(self.source_rates or {})
        return keys


def switch_stamp_er(state: SwitchRateState, cell, in_port):
    return cell.with_er(state.stamp(cell.vc, in_port, cell.er))
