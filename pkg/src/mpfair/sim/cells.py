"""Cells and per-source ABR state."""
from __future__ import annotations

CELL_BITS = 53 * 8

FORWARD = "forward"
BACKWARD = "backward"


class DataCell:
    __slots__ = ("vc", "origin", "eom")
    is_rm = False

    def __init__(self, vc, origin, eom):
        self.vc = vc
        self.origin = origin  # tracing only
        self.eom = eom


class RMCell:
    __slots__ = ("vc", "direction", "er", "ccr", "origin", "timestamp", "seq", "root_time")
    is_rm = True
    eom = False

    def __init__(self, vc, direction, er, ccr, origin, timestamp, seq=0, root_time=None):
        self.vc = vc
        self.direction = direction
        self.er = er
        self.ccr = ccr
        self.origin = origin  # tracing only; VC-merge switch logic never reads it
        self.timestamp = timestamp
        self.seq = seq
        self.root_time = root_time  # when the destination produced the feedback carried

    def backward(self, er, root_time=None):
        return RMCell(self.vc, BACKWARD, er, self.ccr, self.origin, self.timestamp,
                      self.seq, root_time)

    def with_er(self, er):
        return RMCell(self.vc, self.direction, er, self.ccr, self.origin, self.timestamp,
                      self.seq, self.root_time)

    def __repr__(self):
        return f"RMCell({self.vc}, {self.direction}, er={self.er}, origin={self.origin})"


class SourceState:
    """ACR bookkeeping for one ABR source.

    The rate rule is deliberately minimal: a BRM sets ``ACR = min(PCR, ER)``.
    """

    def __init__(self, source, vc, pcr, icr=None, nrm=32, packet_cells=8):
        self.source = source
        self.vc = vc
        self.pcr = float(pcr)
        self.icr = float(icr) if icr is not None else self.pcr / 30
        self.acr = self.icr
        self.nrm = nrm
        self.packet_cells = packet_cells
        self.sent = 0
        self.frm_sent = 0
        self.data_sent = 0

    def on_brm(self, er):
        self.acr = min(self.pcr, er)
        return self

    def next_cell(self, now):
        """The next cell of the stream: every ``nrm``-th cell (the first included) is an FRM."""
        if self.acr <= 0:
            return None
        if self.sent % self.nrm == 0:
            cell = RMCell(self.vc, FORWARD, self.pcr, self.acr, self.source, now,
                          seq=self.frm_sent)
            self.frm_sent += 1
        else:
            self.data_sent += 1
            cell = DataCell(self.vc, self.source, self.data_sent % self.packet_cells == 0)
        self.sent += 1
        return cell

    def cell_gap(self):
        """Microseconds between cells at the current ACR (rates are Mbit/s)."""
        return CELL_BITS / self.acr


def source_on_brm(state: SourceState, cell: RMCell) -> SourceState:
    return state.on_brm(cell.er)


def source_tick(state: SourceState, now: float, cells: int = 1) -> list:
    out = []
    for _ in range(cells):
        c = state.next_cell(now)
        if c is None:
            break
        out.append(c)
    return out
