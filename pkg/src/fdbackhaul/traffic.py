"""FTP file arrivals and two-hop queue service.

Queues hold integer bits so flow conservation can be audited exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .modes import ADL, AUL, BDL, BUL, Direction
from .scenario import STREAM_TRAFFIC, NodeId, NodeKind

MB = 10 ** 6
KB = 10 ** 3

DL, UL = 0, 1


@dataclass
class TrafficConfig:
    symmetric: bool = True
    dl_file_bits: int = int(1.25 * MB * 8)
    ul_file_bits: int = 250 * KB * 8
    mean_reading_time_s: float = 1.0
    enabled: bool = True

    def validate(self):
        if self.dl_file_bits <= 0 or self.ul_file_bits <= 0:
            raise ValueError("file sizes must be positive")
        if not self.mean_reading_time_s > 0:
            raise ValueError("mean_reading_time_s must be positive")
        return self

    @property
    def file_bits(self) -> tuple[int, int]:
        """(downlink, uplink) file size in bits; symmetric traffic uses the
        downlink size both ways."""
        ul = self.dl_file_bits if self.symmetric else self.ul_file_bits
        return int(self.dl_file_bits), int(ul)


@dataclass
class QueueMatrix:
    """Backlogs in bits, each of shape ``(num_cells, ues_per_cell)``.

    Downlink traffic waits at the MBS then the SBS; uplink traffic waits at
    the UE then the SBS. Final destinations are sinks with no queue.
    """

    mbs_dl: np.ndarray
    sbs_dl: np.ndarray
    sbs_ul: np.ndarray
    ue_ul: np.ndarray

    @classmethod
    def empty(cls, num_cells: int, ues_per_cell: int) -> "QueueMatrix":
        shape = (num_cells, ues_per_cell)
        return cls(*(np.zeros(shape, dtype=np.int64) for _ in range(4)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.mbs_dl.shape

    def copy(self) -> "QueueMatrix":
        return QueueMatrix(self.mbs_dl.copy(), self.sbs_dl.copy(), self.sbs_ul.copy(), self.ue_ul.copy())

    def backlog(self, holder: NodeId, ue: int, direction: int, cell: int | None = None) -> int:
        """Bits of ``ue``'s flow held at ``holder``; ``cell`` is required
        when the holder is the MBS."""
        kind = holder.kind
        if kind is NodeKind.MBS:
            return int(self.mbs_dl[cell, ue]) if direction == DL else 0
        if kind is NodeKind.SBS:
            q = self.sbs_dl if direction == DL else self.sbs_ul
            return int(q[holder.cell, ue])
        return int(self.ue_ul[holder.cell, holder.ue]) if direction == UL and holder.ue == ue else 0

    def in_flight(self) -> np.ndarray:
        """Queued bits per flow, shape ``(num_cells, ues_per_cell, 2)``."""
        return np.stack([self.mbs_dl + self.sbs_dl, self.ue_ul + self.sbs_ul], axis=-1)

    def total(self) -> int:
        return int(self.mbs_dl.sum() + self.sbs_dl.sum() + self.sbs_ul.sum() + self.ue_ul.sum())

    def max_backlog(self) -> int:
        return int(max(self.mbs_dl.max(), self.sbs_dl.max(), self.sbs_ul.max(), self.ue_ul.max()))

    def source_and_sink(self, direction: Direction):
        """(source queue, downstream queue or None for sinks) of a link direction."""
        if direction is BDL:
            return self.mbs_dl, self.sbs_dl
        if direction is ADL:
            return self.sbs_dl, None
        if direction is AUL:
            return self.ue_ul, self.sbs_ul
        return self.sbs_ul, None


@dataclass
class Arrival:
    cell: int
    ue: int
    direction: int
    bits: int


@dataclass
class FlowState:
    """Per-flow FTP state; flows are indexed ``[cell, ue, direction]``."""

    config: TrafficConfig
    next_arrival: np.ndarray
    active: np.ndarray
    rngs: list = field(repr=False)
    injected: np.ndarray = None
    delivered: np.ndarray = None
    last_request: np.ndarray = None

    @classmethod
    def start(cls, config: TrafficConfig, num_cells: int, ues_per_cell: int, seed: int) -> "FlowState":
        """All flows idle; each first request after its own exponential draw."""
        config.validate()
        shape = (num_cells, ues_per_cell, 2)
        rngs = [np.random.default_rng(np.random.SeedSequence([seed, STREAM_TRAFFIC, c, n, d]))
                for c in range(num_cells) for n in range(ues_per_cell) for d in range(2)]
        flows = cls(config, np.full(shape, np.inf), np.zeros(shape, dtype=bool), rngs,
                    np.zeros(shape, dtype=np.int64), np.zeros(shape, dtype=np.int64),
                    np.full(shape, -np.inf))
        if config.enabled:
            for idx in np.ndindex(shape):
                flows.next_arrival[idx] = flows._reading_time(idx)
        return flows

    def _rng(self, idx) -> np.random.Generator:
        c, n, d = idx
        return self.rngs[(c * self.next_arrival.shape[1] + n) * 2 + d]

    def _reading_time(self, idx) -> float:
        return float(self._rng(idx).exponential(self.config.mean_reading_time_s))

    def generate_arrivals(self, now: float) -> list[Arrival]:
        """Start a new file on every idle flow whose timer has expired."""
        due = (~self.active) & (self.next_arrival <= now)
        sizes = self.config.file_bits
        arrivals = []
        for c, n, d in zip(*np.nonzero(due)):
            self.active[c, n, d] = True
            self.last_request[c, n, d] = now
            bits = sizes[d]
            self.injected[c, n, d] += bits
            arrivals.append(Arrival(int(c), int(n), int(d), bits))
        return arrivals

    def complete(self, queues: QueueMatrix, now: float) -> int:
        """Close files fully delivered to their destination and schedule the
        next request; returns how many completed."""
        done = self.active & (queues.in_flight() == 0)
        for idx in zip(*np.nonzero(done)):
            self.active[idx] = False
            self.next_arrival[idx] = now + self._reading_time(idx)
        return int(done.sum())


def inject(queues: QueueMatrix, arrivals) -> None:
    for a in arrivals:
        if a.direction == DL:
            queues.mbs_dl[a.cell, a.ue] += a.bits
        else:
            queues.ue_ul[a.cell, a.ue] += a.bits


def generate_arrivals(flows: FlowState, queues: QueueMatrix, now: float) -> list[Arrival]:
    arrivals = flows.generate_arrivals(now)
    inject(queues, arrivals)
    return arrivals


def apply_service(queues: QueueMatrix, links, rates, slot_duration: float,
                  delivered: np.ndarray | None = None):
    """Serve every link for one slot.

    Each link moves ``min(floor(rate * slot), source backlog)`` bits of its
    flow, computed from the start-of-slot backlogs so relayed bits are only
    forwarded in a later slot. Returns the served bits per link; sink
    deliveries are added to ``delivered[cell, ue, direction]`` when given.
    """
    budgets = np.floor(np.asarray(rates, dtype=float) * slot_duration).astype(np.int64)
    served = np.zeros(len(links), dtype=np.int64)
    start = queues.copy()
    for i, link in enumerate(links):
        c, n = link.cell, link.flow_ue
        src_now, _ = start.source_and_sink(link.direction)
        served[i] = min(int(budgets[i]), int(src_now[c, n]))
    for i, link in enumerate(links):
        if served[i] == 0:
            continue
        c, n = link.cell, link.flow_ue
        src, dst = queues.source_and_sink(link.direction)
        src[c, n] -= served[i]
        if dst is not None:
            dst[c, n] += served[i]
        elif delivered is not None:
            delivered[c, n, UL if link.direction is BUL else DL] += served[i]
    return served
