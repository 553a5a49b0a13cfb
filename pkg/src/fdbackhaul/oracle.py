"""Random power-allocation instances and the solver-versus-grid comparison."""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from .modes import TransmissionMode, expand_links, link_budgets
from .power import (ConvergenceWarning, SolverOptions, WeightedRateProblem, grid_oracle,
                    optimize_powers)
from .scenario import ScenarioConfig, build_topology, draw_channels
from .scheduler import link_max_powers, mode_beams

FDU_FDD = TransmissionMode.parse("FDU-FDD")


def random_mode_problem(rng: np.random.Generator, mode: TransmissionMode = FDU_FDD,
                        scenario: ScenarioConfig | None = None,
                        rate_cap: float | None = None) -> WeightedRateProblem:
    """A mode instance on a random topology and fading draw with random flows
    and back-pressure weights (uniform up to one 1.25 MB file)."""
    scenario = scenario or ScenarioConfig()
    seed = int(rng.integers(2 ** 31))
    topology = build_topology(scenario, seed, "FD-SDMA")
    channel = draw_channels(topology, int(rng.integers(2 ** 31)), seed)
    flows = {}
    for cell, d in mode.structure():
        flows[(cell, d)] = int(rng.integers(scenario.ues_per_cell))
    links = expand_links(mode, flows)
    beams = mode_beams(links, channel, scenario)
    weights = rng.uniform(0.0, 1e7, size=len(links))
    return WeightedRateProblem.from_budgets(link_budgets(links, channel, beams), weights,
                                            link_max_powers(links, scenario), rate_cap)


@dataclass
class OracleRecord:
    instance: int
    objective: str
    solver_value: float
    grid_value: float
    ratio: float
    iterations: int
    converged: bool


def compare_with_grid(num_instances: int = 100, seed: int = 0, points_per_axis: int = 20,
                      forms=("product",), options: SolverOptions | None = None,
                      rate_cap: float | None = None):
    """Weighted sum rate of the successive-GP solution over the grid optimum
    for random FDU-FDD instances. Returns (records, seconds spent in the solver)."""
    rng = np.random.default_rng(seed)
    problems = [random_mode_problem(rng, rate_cap=rate_cap) for _ in range(num_instances)]
    records = []
    solver_seconds = 0.0
    base = options or SolverOptions()
    for form in forms:
        opts = SolverOptions(**{**base.__dict__, "objective": form})
        for i, problem in enumerate(problems):
            start = time.perf_counter()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                result = optimize_powers(problem, opts)
            solver_seconds += time.perf_counter() - start
            grid = grid_oracle(problem, points_per_axis)
            ratio = result.weighted_sum_rate / grid.weighted_sum_rate if grid.weighted_sum_rate > 0 else 1.0
            records.append(OracleRecord(i, form, result.weighted_sum_rate, grid.weighted_sum_rate,
                                        ratio, result.iterations, result.converged))
    return records, solver_seconds
