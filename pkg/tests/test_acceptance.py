"""Acceptance criteria 1-11, each printed as one PASS/FAIL line.

Desk-scale runs are shared through a session cache. Setting
``FDBACKHAUL_ACCEPTANCE_CACHE=<dir>`` also persists them on disk, keyed by
a hash of the package source, which is only meant for iterating locally.
"""
from __future__ import annotations

import hashlib
import json
import os
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
import yaml
from scipy import stats

import fdbackhaul
from conftest import ACCEPTANCE_LINES
from fdbackhaul.beamforming import mmse_receive, mmse_transmit, receive_quotient, transmit_quotient
from fdbackhaul.cli import main as cli_main
from fdbackhaul.config import config_from_dict
from fdbackhaul.engine import aggregate_cells, run_simulation, usage_from_counts
from fdbackhaul.modes import enumerate_modes, expand_links
from fdbackhaul.oracle import compare_with_grid, random_mode_problem
from fdbackhaul.power import ConvergenceWarning, SolverOptions, optimize_powers, true_objective
from fdbackhaul.scenario import NodeKind, ScenarioConfig, build_topology, draw_channels, get_profile
from fdbackhaul.traffic import DL, UL

D1, D2 = 212.06, 180.0
SEEDS = tuple(range(10))
SWEEP_SEEDS = tuple(range(3))
CAPABILITY_ORDER = ["FD-SDMA", "FD2", "HD-SDMA", "HD2", "HD1"]
FAMILIES = {
    "d1 sweep, symmetric": ("symmetric", [(150.0, D2), (D1, D2), (280.0, D2)]),
    "d1 sweep, asymmetric": ("asymmetric", [(150.0, D2), (D1, D2), (280.0, D2)]),
    "d2 sweep, symmetric": ("symmetric", [(D1, 55.36), (D1, 120.0), (D1, D2)]),
    "d2 sweep, asymmetric": ("asymmetric", [(D1, 55.36), (D1, 120.0), (D1, D2)]),
}


def report(number, passed: bool, detail: str):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


# ---- desk runs ------------------------------------------------------------

def _source_hash() -> str:
    h = hashlib.sha256()
    for path in sorted(Path(fdbackhaul.__file__).parent.glob("*.py")):
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


_SESSION: dict[tuple, dict] = {}
_CACHE_DIR = os.environ.get("FDBACKHAUL_ACCEPTANCE_CACHE")


def desk_run(baseline: str, traffic: str, d1: float, d2: float, seed: int) -> dict:
    key = (baseline, traffic, d1, d2, seed)
    if key in _SESSION:
        return _SESSION[key]
    disk = None
    if _CACHE_DIR:
        name = f"{_source_hash()}_{baseline}_{traffic}_{d1:g}_{d2:g}_{seed}.json"
        disk = Path(_CACHE_DIR) / name
        if disk.exists():
            _SESSION[key] = json.loads(disk.read_text())
            return _SESSION[key]
    cfg = config_from_dict({"baseline": baseline, "scenario": {"d1_m": d1, "d2_m": d2},
                            "traffic": {"symmetric": traffic == "symmetric"}})
    m = run_simulation(cfg, seed)
    out = {
        "dl_mbps": m.dl_mbps.tolist(),
        "ul_mbps": m.ul_mbps.tolist(),
        "total_cell_mbps": m.cell_mean_mbps("total"),
        "mode_counts": m.mode_counts,
        "injected_dl": int(m.injected[..., DL].sum()),
        "injected_ul": int(m.injected[..., UL].sum()),
        "conserved": m.conserved(),
        "max_backlog": m.max_backlog.tolist(),
    }
    _SESSION[key] = out
    if disk is not None:
        disk.parent.mkdir(parents=True, exist_ok=True)
        disk.write_text(json.dumps(out))
    return out


def base_runs(baseline: str, traffic: str = "symmetric") -> list[dict]:
    return [desk_run(baseline, traffic, D1, D2, s) for s in SEEDS]


def point_runs(traffic: str, d1: float, d2: float) -> list[dict]:
    seeds = SEEDS if (d1, d2) == (D1, D2) else SWEEP_SEEDS
    return [desk_run("FD-SDMA", traffic, d1, d2, s) for s in seeds]


def all_desk_runs() -> list[dict]:
    """Every desk run used by this module."""
    runs = [r for b in CAPABILITY_ORDER + ["FD-SDMA-MP"] for r in base_runs(b)]
    runs += base_runs("FD-SDMA", "asymmetric")
    for traffic, points in FAMILIES.values():
        runs += [r for d1, d2 in points for r in point_runs(traffic, d1, d2)]
    return runs


def mean_total(runs) -> float:
    return aggregate_cells([r["total_cell_mbps"] for r in runs]).mean_mbps


def pooled_usage(runs) -> dict[str, float]:
    counts: dict[str, int] = {}
    for r in runs:
        for mode, n in r["mode_counts"].items():
            counts[mode] = counts.get(mode, 0) + n
    return usage_from_counts(counts)


# ---- criteria ---------------------------------------------------------------

def test_criterion_01_gp_oracle():
    start = time.perf_counter()
    records, _ = compare_with_grid(num_instances=100, seed=0, points_per_axis=20, forms=("product",))
    elapsed = time.perf_counter() - start
    ratios = np.array([r.ratio for r in records])
    ok = bool(np.all(ratios >= 0.98)) and elapsed < 60.0
    report(1, ok, f"min ratio to grid {ratios.min():.4f} over {ratios.size} FDU-FDD instances "
                  f"(need >= 0.98), {elapsed:.1f} s (need < 60 s)")
    assert ok


def test_criterion_02_condensation_monotone():
    rng = np.random.default_rng(2024)
    worst, checked = -np.inf, 0
    capped_worse, capped_rejected = 0, 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for _ in range(1000):
            seed = int(rng.integers(2 ** 31))
            problem = random_mode_problem(np.random.default_rng(seed))
            capped = random_mode_problem(np.random.default_rng(seed), rate_cap=7.0)
            for init in ("half", "search"):
                # the history is the minimized objective, so the weighted rate
                # it encodes is non-decreasing when this never goes up
                history = optimize_powers(problem, SolverOptions(init=init)).history
                if history.size > 1:
                    worst = max(worst, float(np.max(np.diff(history))))
                checked += 1
                # capped extension: a trial step that would lose is discarded
                result = optimize_powers(capped, SolverOptions(init=init))
                h = result.history
                capped_rejected += bool(h.size > 1 and h[-1] > h[-2])
                capped_worse += true_objective(capped, result.powers) > h[0] + 1e-9
    ok = worst <= 1e-9 and capped_worse == 0
    report(2, ok, f"largest per-iteration objective decrease {max(worst, 0.0):.2e} over {checked} "
                  f"solves on 1000 instances (tolerance 1e-9); capped variant: {capped_worse} "
                  f"solutions worse than their start, {capped_rejected} trial steps discarded")
    assert ok


def test_criterion_03_mmse_optimality():
    radio = ScenarioConfig(num_antennas=8)
    p_s, rng = radio.max_power(NodeKind.SBS), np.random.default_rng(3)
    failures = 0
    for draw in range(100):
        topo = build_topology(radio, draw, "FD-SDMA")
        ch = draw_channels(topo, draw, draw)
        noise = ch.noise[NodeKind.MBS]
        h = ch.mbs[:2]
        powers = [p_s, p_s]
        rx = mmse_receive(list(h), powers, noise)
        tx = mmse_transmit(list(h), powers, noise)
        u = rng.standard_normal((1000, 8)) + 1j * rng.standard_normal((1000, 8))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        for k in range(2):
            best_rx = receive_quotient(h, powers, noise, k, rx[k])
            best_tx = transmit_quotient(h, powers, noise, k, tx[k])
            failures += sum(receive_quotient(h, powers, noise, k, x) > best_rx for x in u)
            failures += sum(transmit_quotient(h, powers, noise, k, x) > best_tx for x in u)
    ok = failures == 0
    report(3, ok, f"{failures} of 400000 random unit vectors beat the MMSE beams (need 0)")
    assert ok


def test_criterion_04_mode_combinatorics():
    fd = get_profile("FD-SDMA")
    counts = [len(enumerate_modes(n, fd)) for n in (1, 2, 3)]
    hd1 = [len(expand_links(m)) for m in enumerate_modes(2, get_profile("HD1"))]
    ok = counts == [8, 80, 728] and set(hd1) == {1}
    report(4, ok, f"FD-SDMA mode counts {counts} (need [8, 80, 728]); HD1 link counts {sorted(set(hd1))}")
    assert ok


@pytest.mark.slow
def test_criterion_05_fd_vs_hd_sdma():
    fd, hd = mean_total(base_runs("FD-SDMA")), mean_total(base_runs("HD-SDMA"))
    ok = fd / hd >= 1.5
    report(5, ok, f"FD-SDMA {fd:.2f} / HD-SDMA {hd:.2f} Mb/s per cell = {fd / hd:.3f} (need >= 1.5)")
    assert ok


@pytest.mark.slow
def test_criterion_06_power_control_gain():
    fd, mp = mean_total(base_runs("FD-SDMA")), mean_total(base_runs("FD-SDMA-MP"))
    ok = fd / mp >= 1.15
    report(6, ok, f"FD-SDMA {fd:.2f} / FD-SDMA-MP {mp:.2f} Mb/s per cell = {fd / mp:.3f} (need >= 1.15)")
    assert ok


@pytest.mark.slow
def test_criterion_07_mode_concentration():
    parts, ok = [], True
    for name, (traffic, points) in FAMILIES.items():
        runs = [r for d1, d2 in points for r in point_runs(traffic, d1, d2)]
        above = sum(f > 0.05 for f in pooled_usage(runs).values())
        worst_run = max(sum(f > 0.05 for f in usage_from_counts(r["mode_counts"]).values()) for r in runs)
        ok &= above <= 10
        parts.append(f"{name}: {above} (single run max {worst_run})")
    report(7, ok, "modes above 5% usage per FD-SDMA matrix, need <= 10: " + "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_criterion_08_asymmetric_traffic():
    runs = base_runs("FD-SDMA", "asymmetric")
    fdd = pooled_usage(runs).get("FDD-FDD", 0.0)
    ratio = sum(r["injected_dl"] for r in runs) / sum(r["injected_ul"] for r in runs)
    ok = 0.35 <= fdd <= 0.65 and 4.5 <= ratio <= 5.5
    report(8, ok, f"FDD-FDD usage {fdd:.3f} (need 0.35-0.65), injected DL:UL {ratio:.2f} (need 4.5-5.5)")
    assert ok


def _final_half_slope(series) -> float:
    y = np.asarray(series, dtype=float)
    y = y[y.size // 2:]
    x = np.arange(y.size, dtype=float)
    return float(np.polyfit(x, y, 1)[0])


@pytest.mark.slow
def test_criterion_09_queue_stability():
    parts, ok = [], True
    for baseline in ("FD-SDMA", "HD-SDMA"):
        slopes = np.array([_final_half_slope(r["max_backlog"]) for r in base_runs(baseline)])
        # seeds are independent replicates: one-sided t-test of a positive mean slope
        test = stats.ttest_1samp(slopes, 0.0, alternative="greater")
        p = float(test.pvalue)
        ok &= p > 0.05
        parts.append(f"{baseline} mean slope {slopes.mean():+.2f} bit/slot, p = {p:.3f}")
    report(9, ok, "no positive max-backlog trend over the final 50% (need p > 0.05): " + "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_criterion_10_conservation(tmp_path):
    runs = all_desk_runs()
    cfg = config_from_dict({"engine": {"sim_seconds": 0.5}, "traffic": {"mean_reading_time_s": 0.05}})
    extra = [run_simulation(cfg.with_point(b, t), s)
             for b in ("FD-SDMA", "HD1", "FD2") for t in ("symmetric", "asymmetric") for s in (0, 1)]
    bad = sum(not r["conserved"] for r in runs) + sum(not m.conserved() for m in extra)
    total = len(runs) + len(extra)
    ok = bad == 0
    report(10, ok, f"{total - bad} of {total} runs conserve bits exactly per flow")
    assert ok


def test_criterion_11_determinism(tmp_path):
    cfg = {"engine": {"sim_seconds": 0.3, "seeds": [0, 1]},
           "traffic": {"mean_reading_time_s": 0.05},
           "sweep": {"param": "d2", "values": [55.36, 180.0], "baselines": ["FD-SDMA", "HD-SDMA"],
                     "traffic": ["symmetric", "asymmetric"]}}
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    digests = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli_main(["sweep", str(path), "--out-dir", str(out), "--trace"]) == 0
        digests.append({p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(out.iterdir())})
    ok = digests[0] == digests[1] and len(digests[0]) > 0
    report(11, ok, f"{len(digests[0])} output files byte-identical across two executions")
    assert ok


# ---- statistical checks beyond the numbered criteria ------------------------

@pytest.mark.slow
def test_capability_ordering():
    order = CAPABILITY_ORDER
    totals = {b: np.array([r["total_cell_mbps"] for r in base_runs(b)]) for b in order}
    lines = []
    for hi, lo in zip(order, order[1:]):
        diff = totals[hi] - totals[lo]  # paired: same topology and traffic seeds
        se = diff.std(ddof=1) / np.sqrt(diff.size)
        lines.append((hi, lo, diff.mean(), se))
    print("; ".join(f"{a} - {b} = {d:+.2f} +/- {s:.2f}" for a, b, d, s in lines))
    for a, b, d, s in lines:
        assert d + s >= 0, f"{a} below {b} by more than one standard error"


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="with these channel constants the leading symmetric modes are "
                                       "FDD-FDD / FDB-FDB / FDU-FDU; see the decisions ledger")
def test_symmetric_leading_modes():
    top = list(pooled_usage(base_runs("FD-SDMA")))[:2]
    assert set(top) == {"FDU-FDD", "FDD-FDU"}
