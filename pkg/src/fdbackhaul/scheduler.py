"""Back-pressure link weights and max-weight mode selection.

:func:`select_mode` is the direct, object-level implementation. The engine
uses :class:`fdbackhaul.fast.BatchScheduler`, which evaluates the same rule
with compiled kernels and is tested against this one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .beamforming import BeamformerSet, compute_beams
from .modes import (ADL, AUL, BDL, BUL, CELL_LINKS, CellMode, Direction, InfeasibleModeError,
                    Link, TransmissionMode, expand_links, link_budgets, link_rate, mode_beam_cells)
from .power import SolverOptions, WeightedRateProblem, max_power_allocation, optimize_powers
from .scenario import ChannelState, NodeKind, ScenarioConfig
from .traffic import QueueMatrix


@dataclass
class SchedulerOptions:
    solver: SolverOptions = field(default_factory=SolverOptions)
    power_control: bool = True
    floor_negative_weights: bool = True
    reoptimize_top_k: int = 1
    beam_loading: str = "interferer"
    capped_power_objective: bool = True

    def validate(self):
        self.solver.validate()
        if self.reoptimize_top_k < 1:
            raise ValueError("reoptimize_top_k must be >= 1")
        if self.beam_loading not in ("interferer", "printed"):
            raise ValueError("beam_loading must be 'interferer' or 'printed'")
        return self


def differentials(queues: QueueMatrix, direction: Direction) -> np.ndarray:
    """Per-UE backlog differential (source minus downstream), shape (cells, UEs)."""
    if direction is BDL:
        return queues.mbs_dl - queues.sbs_dl
    if direction is BUL:
        return queues.sbs_ul.copy()
    if direction is ADL:
        return queues.sbs_dl.copy()
    return queues.ue_ul - queues.sbs_ul


def link_weight(queues: QueueMatrix, link: Link, floor: bool = True) -> tuple[float, int]:
    """Largest backlog differential over the UEs that can use ``link``'s
    (cell, direction) slot, and the UE attaining it (lowest index on ties)."""
    diff = differentials(queues, link.direction)[link.cell]
    n = int(np.argmax(diff))
    w = float(diff[n])
    return (max(w, 0.0) if floor else w), n


def fda_flows(queues: QueueMatrix, cell: int, floor: bool = True) -> tuple[int, int, float, float] | None:
    """Distinct (downlink UE, uplink UE) pair maximizing the summed weight of
    the two FDA access links, or None with fewer than two UEs."""
    dl = differentials(queues, ADL)[cell].astype(float)
    ul = differentials(queues, AUL)[cell].astype(float)
    if floor:
        dl, ul = np.maximum(dl, 0.0), np.maximum(ul, 0.0)
    n = dl.shape[0]
    if n < 2:
        return None
    total = dl[:, None] + ul[None, :]
    np.fill_diagonal(total, -np.inf)
    a, b = np.unravel_index(int(np.argmax(total)), total.shape)
    return int(a), int(b), float(dl[a]), float(ul[b])


def mode_flows(mode: TransmissionMode, queues: QueueMatrix, floor: bool = True):
    """Flow choice and weight for every link of ``mode``."""
    flows, weights = {}, {}
    for cell, m in enumerate(mode.per_cell):
        if m is CellMode.FDA:
            pair = fda_flows(queues, cell, floor)
            if pair is None:
                raise InfeasibleModeError("FDA needs two UEs")
            a, b, wa, wb = pair
            flows[(cell, ADL)], weights[(cell, ADL)] = a, wa
            flows[(cell, AUL)], weights[(cell, AUL)] = b, wb
            continue
        for d in CELL_LINKS[m]:
            diff = differentials(queues, d)[cell]
            n = int(np.argmax(diff))
            flows[(cell, d)] = n
            weights[(cell, d)] = max(float(diff[n]), 0.0) if floor else float(diff[n])
    return flows, weights


def link_max_powers(links: Sequence[Link], radio: ScenarioConfig) -> np.ndarray:
    """Per-link transmit budget; simultaneous MBS streams split ``p_M`` equally."""
    streams = sum(1 for l in links if l.direction is BDL)
    out = []
    for l in links:
        if l.direction is BDL:
            out.append(radio.max_power(NodeKind.MBS) / streams)
        else:
            out.append(radio.max_power(l.src.kind))
    return np.array(out)


def mode_beams(links: Sequence[Link], channel: ChannelState, radio: ScenarioConfig,
               loading: str = "interferer") -> BeamformerSet:
    rx, tx = mode_beam_cells(links)
    return compute_beams(channel, rx, tx, radio.max_power(NodeKind.SBS),
                         channel.noise[NodeKind.MBS], loading)


@dataclass
class ScheduleDecision:
    mode: TransmissionMode | None
    links: list[Link] = field(default_factory=list)
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    powers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rates: np.ndarray = field(default_factory=lambda: np.zeros(0))
    score: float = 0.0
    converged: bool = True

    @property
    def idle(self) -> bool:
        return self.mode is None

    @property
    def allocation(self) -> dict[Link, float]:
        return {l: float(p) for l, p in zip(self.links, self.powers)}


@dataclass
class ModeEvaluation:
    mode: TransmissionMode
    links: list[Link]
    weights: np.ndarray
    problem: WeightedRateProblem
    powers: np.ndarray
    rates: np.ndarray
    converged: bool

    @property
    def score(self) -> float:
        return float(np.dot(self.weights, self.rates))


def _allocate(problem: WeightedRateProblem, options: SchedulerOptions):
    if not options.power_control:
        result = max_power_allocation(problem)
        return result.powers, True
    result = optimize_powers(problem, options.solver)
    return result.powers, result.converged


def evaluate_mode(mode: TransmissionMode, queues: QueueMatrix, channel: ChannelState,
                  radio: ScenarioConfig, options: SchedulerOptions,
                  gp_weights: np.ndarray | None = None) -> ModeEvaluation:
    """Flows, beams, powers and capped rates of one mode.

    Powers maximize the rate sum with ``gp_weights`` (equal weights when None).
    """
    flows, weights = mode_flows(mode, queues, options.floor_negative_weights)
    links = expand_links(mode, flows)
    w = np.array([weights[(l.cell, l.direction)] for l in links])
    beams = mode_beams(links, channel, radio, options.beam_loading)
    budgets = link_budgets(links, channel, beams)
    solve_w = np.ones(len(links)) if gp_weights is None else np.maximum(gp_weights, 0.0)
    cap = radio.spectral_cap if options.capped_power_objective else None
    problem = WeightedRateProblem.from_budgets(budgets, solve_w, link_max_powers(links, radio), cap)
    powers, converged = _allocate(problem, options)
    rates = link_rate(problem.sinr(powers), radio.bandwidth_hz, radio.spectral_cap)
    return ModeEvaluation(mode, links, w, problem, powers, np.atleast_1d(rates), converged)


def estimate_mode_rates(mode: TransmissionMode, queues: QueueMatrix, channel: ChannelState,
                        radio: ScenarioConfig, options: SchedulerOptions | None = None) -> np.ndarray:
    """Capped link rates of ``mode`` under the equal-weight power allocation."""
    options = (options or SchedulerOptions()).validate()
    return evaluate_mode(mode, queues, channel, radio, options).rates


def select_mode(feasible_modes: Sequence[TransmissionMode], queues: QueueMatrix,
                channel: ChannelState, radio: ScenarioConfig,
                options: SchedulerOptions | None = None) -> ScheduleDecision:
    """Max-weight mode selection.

    Every mode is scored as ``sum_l W_l R_l`` with equal-weight rates; the
    ``reoptimize_top_k`` best are re-solved with the true weights and the
    best of those is returned. All-zero scores give an idle decision.
    """
    options = (options or SchedulerOptions()).validate()
    if not feasible_modes:
        raise ValueError("no feasible modes")
    scored = []
    for index, mode in enumerate(feasible_modes):
        try:
            ev = evaluate_mode(mode, queues, channel, radio, options)
        except InfeasibleModeError:
            continue
        if not np.any(ev.weights > 0):
            continue
        scored.append((ev.score, index, ev))
    scored = [s for s in scored if s[0] > 0]
    if not scored:
        return ScheduleDecision(None)
    scored.sort(key=lambda s: (-s[0], s[1]))
    best = None
    for score, index, ev in scored[: options.reoptimize_top_k]:
        final = evaluate_mode(ev.mode, queues, channel, radio, options, gp_weights=ev.weights)
        key = (final.score, -index)
        if best is None or key > best[0]:
            best = (key, final)
    final = best[1]
    return ScheduleDecision(final.mode, final.links, final.weights, final.powers, final.rates,
                            final.score, final.converged)
