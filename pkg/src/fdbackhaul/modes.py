"""Transmission-mode alphabet, link expansion and per-link SINR / rate."""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .beamforming import BeamformerSet, effective_gain
from .scenario import MBS, CapabilityProfile, ChannelState, NodeId, NodeKind, sbs, ue


class CellMode(str, enum.Enum):
    OFF = "OFF"
    FDD = "FDD"
    FDU = "FDU"
    FDA = "FDA"
    FDB = "FDB"
    HDBU = "HDBU"
    HDAU = "HDAU"
    HDBD = "HDBD"
    HDAD = "HDAD"


class Direction(str, enum.Enum):
    BACKHAUL_UL = "backhaul-UL"
    BACKHAUL_DL = "backhaul-DL"
    ACCESS_UL = "access-UL"
    ACCESS_DL = "access-DL"

    @property
    def is_backhaul(self) -> bool:
        return self in (Direction.BACKHAUL_UL, Direction.BACKHAUL_DL)

    @property
    def is_uplink(self) -> bool:
        return self in (Direction.BACKHAUL_UL, Direction.ACCESS_UL)


BUL, BDL, AUL, ADL = (Direction.BACKHAUL_UL, Direction.BACKHAUL_DL,
                      Direction.ACCESS_UL, Direction.ACCESS_DL)

CELL_LINKS: dict[CellMode, tuple[Direction, ...]] = {
    CellMode.OFF: (),
    CellMode.FDD: (BDL, ADL),
    CellMode.FDU: (AUL, BUL),
    CellMode.FDA: (ADL, AUL),
    CellMode.FDB: (BDL, BUL),
    CellMode.HDBU: (BUL,),
    CellMode.HDAU: (AUL,),
    CellMode.HDBD: (BDL,),
    CellMode.HDAD: (ADL,),
}


class InfeasibleModeError(ValueError):
    pass


@dataclass(frozen=True)
class TransmissionMode:
    per_cell: tuple[CellMode, ...]

    def __post_init__(self):
        object.__setattr__(self, "per_cell", tuple(CellMode(m) for m in self.per_cell))
        if not self.per_cell:
            raise ValueError("a mode needs at least one cell")
        if all(m is CellMode.OFF for m in self.per_cell):
            raise ValueError("the all-OFF mode is not a transmission mode")

    def __str__(self):
        return "-".join(m.value for m in self.per_cell)

    @classmethod
    def parse(cls, text: str) -> "TransmissionMode":
        return cls(tuple(CellMode(part) for part in text.split("-")))

    @property
    def num_cells(self) -> int:
        return len(self.per_cell)

    def structure(self) -> list[tuple[int, Direction]]:
        """(cell, direction) of every active link, in expansion order."""
        return [(c, d) for c, m in enumerate(self.per_cell) for d in CELL_LINKS[m]]


@dataclass(frozen=True)
class Link:
    src: NodeId
    dst: NodeId
    direction: Direction
    flow_ue: int

    @property
    def cell(self) -> int:
        return self.dst.cell if self.src.kind is NodeKind.MBS else self.src.cell

    def __str__(self):
        return f"{self.src}->{self.dst}[ue{self.flow_ue}]"


def make_link(cell: int, direction: Direction, flow_ue: int) -> Link:
    if direction is BDL:
        return Link(MBS, sbs(cell), direction, flow_ue)
    if direction is BUL:
        return Link(sbs(cell), MBS, direction, flow_ue)
    if direction is ADL:
        return Link(sbs(cell), ue(cell, flow_ue), direction, flow_ue)
    return Link(ue(cell, flow_ue), sbs(cell), direction, flow_ue)


def _roles(structure: Iterable[tuple[int, Direction]]):
    """Transmitting and receiving infrastructure nodes (UE roles never clash
    because FDA uses two distinct UEs)."""
    tx, rx = [], []
    for cell, d in structure:
        if d is BDL:
            tx.append("M")
            rx.append(("S", cell))
        elif d is BUL:
            tx.append(("S", cell))
            rx.append("M")
        elif d is ADL:
            tx.append(("S", cell))
        else:
            rx.append(("S", cell))
    return tx, rx


def is_feasible(mode: TransmissionMode, profile: CapabilityProfile) -> bool:
    structure = mode.structure()
    tx, rx = _roles(structure)
    for node in set(tx) & set(rx):
        if node == "M" and not profile.mbs_full_duplex:
            return False
        if node != "M" and not profile.sbs_full_duplex:
            return False
    if not profile.mbs_sdma:
        if tx.count("M") > 1 or rx.count("M") > 1:
            return False
    if profile.max_simultaneous_links is not None and len(structure) > profile.max_simultaneous_links:
        return False
    return True


def all_modes(num_cells: int) -> list[TransmissionMode]:
    """Every per-cell combination except all-OFF, in lexicographic order."""
    if num_cells < 1:
        raise ValueError("num_cells must be >= 1")
    return [TransmissionMode(combo)
            for combo in itertools.product(list(CellMode), repeat=num_cells)
            if any(m is not CellMode.OFF for m in combo)]


def enumerate_modes(num_cells: int, profile: CapabilityProfile) -> list[TransmissionMode]:
    return [m for m in all_modes(num_cells) if is_feasible(m, profile)]


FlowChoice = Mapping[tuple[int, Direction], int]


def expand_links(mode: TransmissionMode, flow_choice: FlowChoice | None = None) -> list[Link]:
    """Active links of ``mode``; ``flow_choice[(cell, direction)]`` is the UE
    served on that link (defaults to UE 0, or UE 1 for the FDA uplink)."""
    links = []
    for cell, d in mode.structure():
        if flow_choice is not None and (cell, d) in flow_choice:
            flow = int(flow_choice[(cell, d)])
        else:
            flow = 1 if (mode.per_cell[cell] is CellMode.FDA and d is AUL) else 0
        links.append(make_link(cell, d, flow))
    for cell, m in enumerate(mode.per_cell):
        if m is CellMode.FDA:
            dl = next(l for l in links if l.cell == cell and l.direction is ADL)
            ul = next(l for l in links if l.cell == cell and l.direction is AUL)
            if dl.flow_ue == ul.flow_ue:
                raise InfeasibleModeError(f"FDA in cell {cell} needs two distinct UEs")
    return links


@dataclass
class LinkBudget:
    """Gains seen by one receiver: ``interference`` maps every other active
    link to the gain from its transmitter, ``self_links`` are the receiver's
    own transmissions leaking through ``self_interference_gain``."""

    link: Link
    signal_gain: float
    interference: list[tuple[Link, float]]
    self_interference_gain: float
    self_links: list[Link]
    noise: float


def _beam(beams: BeamformerSet, link: Link) -> np.ndarray:
    table = beams.receive if link.direction is BUL else beams.transmit
    try:
        return table[link.cell]
    except KeyError:
        raise ValueError(f"no beam for {link}") from None


def cross_gain(rx_link: Link, tx_link: Link, channel: ChannelState, beams: BeamformerSet) -> float:
    """Power gain from the transmitter of ``tx_link`` to the receiver of ``rx_link``.

    MBS-side gains always pass through the active beam of the relevant stream.
    """
    r, t = rx_link.dst, tx_link.src
    if r.kind is NodeKind.MBS:
        if t.kind is NodeKind.MBS:
            return channel.gamma_mbs
        return effective_gain(channel.h_mbs(t), _beam(beams, rx_link))
    if t.kind is NodeKind.MBS:
        return effective_gain(channel.h_mbs(r), _beam(beams, tx_link))
    if r == t:
        if r.kind is NodeKind.UE:
            raise InfeasibleModeError(f"{r} cannot transmit and receive at once")
        return channel.gamma_sbs
    return channel.gain(r, t)


def link_budgets(links: Sequence[Link], channel: ChannelState, beams: BeamformerSet) -> list[LinkBudget]:
    budgets = []
    for i, link in enumerate(links):
        signal = cross_gain(link, link, channel, beams)
        interference, self_links = [], []
        self_gain = 0.0
        for j, other in enumerate(links):
            if j == i:
                continue
            if other.src == link.dst:
                self_links.append(other)
                self_gain = cross_gain(link, other, channel, beams)
            else:
                interference.append((other, cross_gain(link, other, channel, beams)))
        budgets.append(LinkBudget(link, signal, interference, self_gain, self_links,
                                  channel.noise[link.dst.kind]))
    return budgets


def gain_matrix(budgets: Sequence[LinkBudget]) -> tuple[np.ndarray, np.ndarray]:
    """``G[l, j]`` = gain from link ``j``'s transmitter into link ``l``'s
    receiver (diagonal = signal), plus the receiver noise vector."""
    index = {b.link: i for i, b in enumerate(budgets)}
    k = len(budgets)
    G = np.zeros((k, k))
    for i, b in enumerate(budgets):
        G[i, i] = b.signal_gain
        for other, g in b.interference:
            G[i, index[other]] = g
        for other in b.self_links:
            G[i, index[other]] = b.self_interference_gain
    return G, np.array([b.noise for b in budgets])


def sinr_from_matrix(G: np.ndarray, noise: np.ndarray, p: np.ndarray) -> np.ndarray:
    received = G * p[None, :]
    signal = np.diag(received)
    return signal / (received.sum(axis=1) - signal + noise)


def link_sinr(links: Sequence[Link], powers, channel: ChannelState, beams: BeamformerSet) -> np.ndarray:
    """Linear SINR of every link; ``powers`` maps each link to the watts of
    its transmitter (or is an array aligned with ``links``)."""
    if isinstance(powers, Mapping):
        missing = [str(l) for l in links if l not in powers]
        if missing:
            raise ValueError(f"missing power for {missing}")
        p = np.array([powers[l] for l in links], dtype=float)
    else:
        p = np.asarray(powers, dtype=float)
        if p.shape != (len(links),):
            raise ValueError("power vector does not match links")
    G, noise = gain_matrix(link_budgets(links, channel, beams))
    return sinr_from_matrix(G, noise, p)


def link_rate(sinr, bandwidth: float, spectral_cap: float = 7.0):
    """Shannon rate in bit/s with the spectral efficiency capped."""
    s = np.asarray(sinr, dtype=float)
    if np.any(s < 0):
        raise ValueError("sinr must be non-negative")
    rate = bandwidth * np.minimum(np.log2(1.0 + s), spectral_cap)
    return float(rate) if rate.ndim == 0 else rate


def mode_beam_cells(links: Sequence[Link]) -> tuple[list[int], list[int]]:
    """Cells needing MBS receive and transmit beams."""
    rx = [l.cell for l in links if l.direction is BUL]
    tx = [l.cell for l in links if l.direction is BDL]
    return rx, tx
