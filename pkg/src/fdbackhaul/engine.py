"""Slot-level simulation loop and run statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .config import SimulationConfig
from .fast import BatchScheduler
from .modes import enumerate_modes
from .scenario import build_topology, draw_channels, large_scale_gains, watts_to_dbm
from .traffic import DL, UL, FlowState, QueueMatrix, apply_service, generate_arrivals


@dataclass
class RunMetrics:
    baseline: str
    seed: int
    num_slots: int
    sim_seconds: float
    dl_mbps: np.ndarray  # per cell
    ul_mbps: np.ndarray
    mode_counts: dict[str, int]
    idle_slots: int
    solver_warnings: int
    injected: np.ndarray  # bits per (cell, ue, direction)
    delivered: np.ndarray
    buffered: np.ndarray
    max_backlog: np.ndarray | None = None  # bits per slot, after service
    total_backlog: np.ndarray | None = None
    trace: list[dict] | None = None

    @property
    def mode_usage(self) -> dict[str, float]:
        return usage_from_counts(self.mode_counts)

    @property
    def total_mbps(self) -> float:
        return float(self.dl_mbps.sum() + self.ul_mbps.sum())

    def cell_mean_mbps(self, direction: str) -> float:
        """Served throughput per cell, averaged over cells."""
        values = {"dl": self.dl_mbps, "ul": self.ul_mbps, "total": self.dl_mbps + self.ul_mbps}
        return float(values[direction].mean())

    def conserved(self) -> bool:
        return bool(np.array_equal(self.injected, self.delivered + self.buffered))

    def summary(self) -> dict:
        return {
            "baseline": self.baseline,
            "seed": self.seed,
            "num_slots": self.num_slots,
            "dl_mbps": [float(x) for x in self.dl_mbps],
            "ul_mbps": [float(x) for x in self.ul_mbps],
            "idle_slots": self.idle_slots,
            "solver_warnings": self.solver_warnings,
            "injected_bits": int(self.injected.sum()),
            "delivered_bits": int(self.delivered.sum()),
            "buffered_bits": int(self.buffered.sum()),
            "mode_usage": self.mode_usage,
        }


def usage_from_counts(counts: dict[str, int]) -> dict[str, float]:
    total = sum(counts.values())
    if total == 0:
        return {}
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return {k: v / total for k, v in ordered}


def mode_usage(trace: Iterable) -> dict[str, float]:
    """Fraction of non-idle slots per mode, most used first.

    ``trace`` items are mode strings (None for idle) or trace records.
    """
    counts: dict[str, int] = {}
    for item in trace:
        mode = item.get("mode") if isinstance(item, dict) else item
        if mode is None:
            continue
        mode = str(mode)
        counts[mode] = counts.get(mode, 0) + 1
    return usage_from_counts(counts)


def _trace_record(slot: int, decision) -> dict:
    return {
        "slot": slot,
        "mode": None if decision.idle else str(decision.mode),
        "links": [
            {
                "cell": l.cell,
                "direction": l.direction.value,
                "ue": l.flow_ue,
                "weight_bits": float(w),
                "power_dbm": watts_to_dbm(float(p)) if p > 0 else None,
                "rate_mbps": float(r) / 1e6,
            }
            for l, w, p, r in zip(decision.links, decision.weights, decision.powers, decision.rates)
        ],
    }


def run_simulation(config: SimulationConfig, seed: int, trace: bool = False,
                   progress=None) -> RunMetrics:
    """Simulate one topology for ``config.engine.sim_seconds``.

    Each slot: draw fading, pick a mode by back-pressure, serve the chosen
    links, close finished files and admit new requests.
    """
    config.validate()
    profile = config.profile
    radio = config.scenario
    topology = build_topology(radio, seed, profile)
    gains = large_scale_gains(topology)
    ns, N = radio.num_cells, radio.ues_per_cell
    scheduler = BatchScheduler(enumerate_modes(ns, profile), radio, config.scheduler_options())
    dt = config.engine.slot_duration_s
    slots = config.engine.num_slots
    queues = QueueMatrix.empty(ns, N)
    flows = FlowState.start(config.traffic, ns, N, seed)
    delivered = np.zeros((ns, N, 2), dtype=np.int64)
    counts: dict[str, int] = {}
    idle = 0
    record = config.engine.record_backlog
    max_backlog = np.zeros(slots, dtype=np.int64) if record else None
    total_backlog = np.zeros(slots, dtype=np.int64) if record else None
    records = [] if trace else None
    generate_arrivals(flows, queues, 0.0)
    for t in range(slots):
        decision = None
        if queues.total() > 0:
            channel = draw_channels(topology, t, seed, gains)
            decision = scheduler.decide(queues, channel)
        if decision is None or decision.idle:
            idle += 1
        else:
            name = str(decision.mode)
            counts[name] = counts.get(name, 0) + 1
            apply_service(queues, decision.links, decision.rates, dt, delivered)
        if records is not None:
            records.append(_trace_record(t, decision) if decision is not None
                           else {"slot": t, "mode": None, "links": []})
        now = (t + 1) * dt
        flows.delivered[...] = delivered
        flows.complete(queues, now)
        generate_arrivals(flows, queues, now)
        if record:
            max_backlog[t] = queues.max_backlog()
            total_backlog[t] = queues.total()
        if progress is not None and (t + 1) % 1000 == 0:
            progress(t + 1, slots)
    sim_seconds = slots * dt
    served = delivered.sum(axis=1) / sim_seconds / 1e6
    return RunMetrics(
        baseline=profile.name,
        seed=seed,
        num_slots=slots,
        sim_seconds=sim_seconds,
        dl_mbps=served[:, DL],
        ul_mbps=served[:, UL],
        mode_counts=counts,
        idle_slots=idle,
        solver_warnings=int(scheduler.unconverged[0]),
        injected=flows.injected.copy(),
        delivered=delivered,
        buffered=queues.in_flight(),
        max_backlog=max_backlog,
        total_backlog=total_backlog,
        trace=records,
    )


@dataclass
class Aggregate:
    direction: str
    mean_mbps: float
    stderr_mbps: float
    n_seeds: int


def aggregate_cells(values_or_runs: Sequence, direction: str = "total") -> Aggregate:
    """Mean and standard error across seeds of the per-cell served throughput.

    Accepts RunMetrics (reduced with ``cell_mean_mbps``) or plain numbers.
    """
    if len(values_or_runs) == 0:
        raise ValueError("need at least one run")
    values = np.array([v.cell_mean_mbps(direction) if isinstance(v, RunMetrics) else float(v)
                       for v in values_or_runs])
    n = values.size
    stderr = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return Aggregate(direction, float(values.mean()), stderr, n)
