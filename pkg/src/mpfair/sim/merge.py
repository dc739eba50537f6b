"""Merge-point RM-cell handling and VC-merge cut-through queueing."""
from __future__ import annotations

from collections import deque

TURNAROUND = "turnaround"
BITMARK = "bitmark"


class MergePoint:
    """RM-cell state for one (switch, VC, output port) where branches join.

    ``turnaround``: the merge point answers every FRM itself with a BRM
    carrying the MER register, then resets MER to PCR; BRMs from the root
    only refresh MER and are discarded.

    ``bitmark``: FRMs set their branch's bit and go on to the root; a BRM from
    the root is copied to every marked branch and the bits are cleared.
    """

    def __init__(self, branches, algorithm, pcr, mer_min=False):
        if algorithm not in (TURNAROUND, BITMARK):
            raise ValueError(f"unknown merge algorithm {algorithm!r}")
        self.algorithm = algorithm
        self.pcr = pcr
        self.mer = pcr
        self.mer_root_time = None
        self.mer_min = mer_min
        self.branches = list(branches)
        self.bits = {b: False for b in self.branches}
        self.frm_in = {b: 0 for b in self.branches}
        self.frm_out = 0
        self.brm_in = 0
        self.brm_out = {b: 0 for b in self.branches}

    def on_frm(self, cell, branch):
        """Returns ``(forwarded FRM, [(branch, BRM), ...])``."""
        self.frm_in[branch] += 1
        self.frm_out += 1
        replies = []
        if self.algorithm == TURNAROUND:
            replies.append((branch, cell.backward(self.mer, self.mer_root_time)))
            self.mer = self.pcr
            self.mer_root_time = None
        else:
            self.bits[branch] = True
        for b, _ in replies:
            self.brm_out[b] += 1
        return cell, replies

    def on_brm(self, cell):
        """Returns the ``(branch, BRM)`` copies to send toward the leaves."""
        self.brm_in += 1
        if self.algorithm == TURNAROUND:
            self.mer = min(self.mer, cell.er) if self.mer_min else cell.er
            self.mer_root_time = cell.root_time
            return []
        out = [(b, cell) for b in self.branches if self.bits[b]]
        for b in self.branches:
            self.bits[b] = False
        for b, _ in out:
            self.brm_out[b] += 1
        return out


def merge_on_frm(state: MergePoint, cell, branch):
    return state.on_frm(cell, branch)


def merge_on_brm(state: MergePoint, cell):
    return state.on_brm(cell)


class MergeQueue:
    """Packet-boundary merging of several input flows onto one output.

    Cells of the packet in progress go straight through; cells of other flows
    wait in per-flow FIFOs until the end-of-message cell passes. The next flow
    is then chosen round-robin.
    """

    def __init__(self, limit=None):
        self.limit = limit
        self.fifos = {}
        self.order = []
        self.current = None
        self.last = -1
        self.drops = 0
        self.buffered = 0

    def _fifo(self, flow):
        if flow not in self.fifos:
            self.fifos[flow] = deque()
            self.order.append(flow)
        return self.fifos[flow]

    def enqueue(self, flow, cell, eom):
        """Accept one cell; returns the ``(flow, cell, eom)`` items released, in order."""
        fifo = self._fifo(flow)
        if self.current is None:
            self.current = flow
            self.last = self.order.index(flow)
        if flow != self.current:
            if self.limit is not None and self.buffered >= self.limit:
                self.drops += 1
                return []
            fifo.append((cell, eom))
            self.buffered += 1
            return []
        out = [(flow, cell, eom)]
        if eom:
            self.current = None
            self._advance(out)
        return out

    def _advance(self, out):
        n = len(self.order)
        while self.current is None and self.buffered:
            for step in range(1, n + 1):
                idx = (self.last + step) % n
                if self.fifos[self.order[idx]]:
                    break
            flow = self.order[idx]
            self.last = idx
            self.current = flow
            fifo = self.fifos[flow]
            while fifo:
                cell, eom = fifo.popleft()
                self.buffered -= 1
                out.append((flow, cell, eom))
                if eom:
                    self.current = None
                    break

    def dequeue(self):
        """Release whatever is eligible without new arrivals (normally nothing)."""
        out = []
        if self.current is None:
            self._advance(out)
        return out


def merge_enqueue(queue: MergeQueue, flow, cell, eom):
    return queue.enqueue(flow, cell, eom)


def merge_dequeue(queue: MergeQueue):
    return queue.dequeue()


def count_interleavings(stream) -> int:
    """Mid-packet switches of flow in an output stream of ``(flow, eom)`` pairs."""
    bad = 0
    current = None
    for flow, eom in stream:
        if current is not None and flow != current:
            bad += 1
        current = None if eom else flow
    return bad
