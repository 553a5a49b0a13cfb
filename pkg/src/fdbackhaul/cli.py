"""Command-line entry point: ``run``, ``sweep``, ``validate`` and ``oracle``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, SimulationConfig, parse_config, serialize_config
from .engine import aggregate_cells, run_simulation, usage_from_counts
from .oracle import compare_with_grid

RESULT_COLUMNS = ["sweep_param", "value", "baseline", "traffic", "direction", "mean_mbps",
                  "stderr_mbps", "n_seeds"]
RUN_COLUMNS = ["sweep_param", "value", "baseline", "traffic", "seed", "status", "dl_mbps",
               "ul_mbps", "total_mbps", "idle_slots", "solver_warnings", "injected_bits",
               "delivered_bits", "buffered_bits", "conserved"]
DIRECTIONS = ("dl", "ul", "total")


def log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _traffic_name(cfg: SimulationConfig) -> str:
    return "symmetric" if cfg.traffic.symmetric else "asymmetric"


def _point_key(rec: dict) -> tuple:
    return (rec["sweep_param"], float(rec["value"]), rec["baseline"], rec["traffic"], int(rec["seed"]))


def execute_run(task: dict) -> dict:
    """Run one (point, seed) and return its JSON-serializable record."""
    cfg: SimulationConfig = task["config"]
    rec = {k: task[k] for k in ("sweep_param", "value", "baseline", "traffic", "seed")}
    start = time.perf_counter()
    try:
        m = run_simulation(cfg, task["seed"], trace=task["trace"])
    except Exception as exc:  # recorded, the sweep continues
        rec.update(status="error", error=f"{type(exc).__name__}: {exc}",
                   detail=traceback.format_exc(limit=3))
        return rec
    rec.update(
        status="ok",
        dl_mbps=[float(x) for x in m.dl_mbps],
        ul_mbps=[float(x) for x in m.ul_mbps],
        total_mbps=m.total_mbps,
        mode_counts=dict(sorted(m.mode_counts.items())),
        idle_slots=m.idle_slots,
        solver_warnings=m.solver_warnings,
        injected_bits=int(m.injected.sum()),
        delivered_bits=int(m.delivered.sum()),
        buffered_bits=int(m.buffered.sum()),
        conserved=m.conserved(),
    )
    if task["trace"] and task.get("trace_path"):
        with open(task["trace_path"], "w") as fh:
            for r in m.trace:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
    rec["_seconds"] = time.perf_counter() - start
    return rec


def build_tasks(cfg: SimulationConfig, out_dir: Path, trace: bool) -> list[dict]:
    spec = cfg.sweep
    if spec is None:
        points = [("d1", cfg.scenario.d1_m, cfg.baseline, _traffic_name(cfg))]
    else:
        points = [(spec.param, v, b, t) for v in spec.values for b in spec.baselines for t in spec.traffic]
    tasks = []
    for param, value, baseline, traffic in points:
        point_cfg = cfg.with_point(baseline, traffic, param, value)
        for seed in cfg.engine.seeds:
            name = f"trace_{baseline}_{traffic}_{param}{value:g}_seed{seed}.jsonl"
            tasks.append({"config": point_cfg, "sweep_param": param, "value": float(value),
                          "baseline": baseline, "traffic": traffic, "seed": int(seed),
                          "trace": trace, "trace_path": str(out_dir / name)})
    return tasks


def _load_completed(path: Path) -> dict:
    done = {}
    if path.exists():
        for line in path.read_text().splitlines():
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                continue  # a torn final line from an interrupted run
            if rec.get("status") == "ok":
                done[_point_key(rec)] = rec
    return done


def run_tasks(tasks: list[dict], out_dir: Path, jobs: int = 1) -> list[dict]:
    """Execute tasks not already in ``runs.jsonl``, appending each result as it
    completes so that an interrupted sweep resumes where it stopped."""
    out_dir.mkdir(parents=True, exist_ok=True)
    journal = out_dir / "runs.jsonl"
    done = _load_completed(journal)
    pending = [t for t in tasks if _point_key(t) not in done]
    if len(done):
        log(f"resuming: {len(tasks) - len(pending)} of {len(tasks)} runs already complete")
    records = dict(done)

    def collect(i, rec):
        seconds = rec.pop("_seconds", None)
        with open(journal, "a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        records[_point_key(rec)] = rec
        extra = f"{rec['total_mbps']:.2f} Mb/s in {seconds:.1f} s" if rec["status"] == "ok" else rec["error"]
        log(f"[{i}/{len(pending)}] {rec['baseline']} {rec['traffic']} "
            f"{rec['sweep_param']}={rec['value']:g} seed={rec['seed']}: {extra}")

    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for i, rec in enumerate(pool.map(execute_run, pending), 1):
                collect(i, rec)
    else:
        for i, task in enumerate(pending, 1):
            collect(i, execute_run(task))
    ordered = [records[k] for k in sorted(records) if k in {_point_key(t) for t in tasks}]
    # Rewrite the journal in canonical order so output files are reproducible.
    with open(journal, "w") as fh:
        for rec in ordered:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return ordered


def aggregate(records: list[dict], directions=DIRECTIONS) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        if rec["status"] == "ok":
            groups.setdefault(_point_key(rec)[:4], []).append(rec)
    rows = []
    for key in sorted(groups):
        runs = groups[key]
        for direction in directions:
            per_run = []
            for r in runs:
                dl, ul = np.array(r["dl_mbps"]), np.array(r["ul_mbps"])
                per_run.append({"dl": dl, "ul": ul, "total": dl + ul}[direction].mean())
            agg = aggregate_cells(per_run, direction)
            rows.append(dict(zip(RESULT_COLUMNS, (*key, direction, agg.mean_mbps, agg.stderr_mbps,
                                                  agg.n_seeds))))
    return rows


def mode_usage_tables(records: list[dict]) -> dict[tuple[str, str], dict]:
    """Mode counts pooled over all points and seeds of each (baseline, traffic)."""
    out: dict[tuple[str, str], dict[str, int]] = {}
    for rec in records:
        if rec["status"] != "ok":
            continue
        counts = out.setdefault((rec["baseline"], rec["traffic"]), {})
        for mode, n in rec["mode_counts"].items():
            counts[mode] = counts.get(mode, 0) + n
    return {k: v for k, v in sorted(out.items())}


def _fmt(value):
    return repr(value) if isinstance(value, float) else str(value)


def write_outputs(records: list[dict], out_dir: Path, formats=("csv", "json")) -> list[Path]:
    rows = aggregate(records)
    written = []
    if "csv" in formats:
        path = out_dir / "results.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_COLUMNS)
            for r in rows:
                w.writerow([_fmt(r[c]) for c in RESULT_COLUMNS])
        written.append(path)
        path = out_dir / "runs.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RUN_COLUMNS)
            for rec in records:
                row = []
                for c in RUN_COLUMNS:
                    v = rec.get(c, "")
                    row.append(";".join(_fmt(x) for x in v) if isinstance(v, list) else _fmt(v))
                w.writerow(row)
        written.append(path)
    if "json" in formats:
        path = out_dir / "results.json"
        path.write_text(json.dumps({"columns": RESULT_COLUMNS, "rows": rows}, indent=2, sort_keys=True) + "\n")
        written.append(path)
    for (baseline, traffic), counts in mode_usage_tables(records).items():
        usage = usage_from_counts(counts)
        stem = out_dir / f"mode_usage_{baseline}_{traffic}"
        if "csv" in formats:
            with open(f"{stem}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["mode", "count", "fraction"])
                for mode, frac in usage.items():
                    w.writerow([mode, counts[mode], repr(frac)])
            written.append(Path(f"{stem}.csv"))
        if "json" in formats:
            Path(f"{stem}.json").write_text(json.dumps(
                {"baseline": baseline, "traffic": traffic, "counts": dict(sorted(counts.items())),
                 "usage": usage}, indent=2) + "\n")
            written.append(Path(f"{stem}.json"))
    return written


def _load(args) -> SimulationConfig:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.engine.seeds = list(args.seed)
    return cfg.validate()


def cmd_run(args, sweep: bool) -> int:
    cfg = _load(args)
    if sweep and cfg.sweep is None:
        raise ConfigError("sweep", "the sweep command needs a sweep block")
    if not sweep:
        cfg.sweep = None
    out_dir = Path(args.out_dir or cfg.output.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace = args.trace or cfg.output.trace
    tasks = build_tasks(cfg, out_dir, trace)
    log(f"{len(tasks)} runs, {cfg.engine.num_slots} slots each -> {out_dir}")
    records = run_tasks(tasks, out_dir, args.jobs)
    (out_dir / "config.yaml").write_text(serialize_config(cfg))
    write_outputs(records, out_dir, cfg.output.formats)
    failed = [r for r in records if r["status"] != "ok"]
    if failed:
        log(f"{len(failed)} runs failed; see runs.jsonl")
    return 0 if not failed else 3


def cmd_validate(args) -> int:
    cfg = _load(args)
    sys.stdout.write(serialize_config(cfg))
    return 0


def cmd_oracle(args) -> int:
    forms = ("product", "sum") if args.form == "both" else (args.form,)
    start = time.perf_counter()
    records, solver_seconds = compare_with_grid(args.instances, args.seed or 0, args.points, forms)
    summary = {}
    for form in forms:
        ratios = np.array([r.ratio for r in records if r.objective == form])
        summary[form] = {"instances": int(ratios.size), "min_ratio": float(ratios.min()),
                         "mean_ratio": float(ratios.mean()),
                         "fraction_at_least_0.98": float(np.mean(ratios >= 0.98))}
    report = {"points_per_axis": args.points, "seed": args.seed or 0, "summary": summary}
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "oracle.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["instance", "objective", "solver_value", "grid_value", "ratio", "iterations", "converged"])
            for r in records:
                w.writerow([r.instance, r.objective, repr(r.solver_value), repr(r.grid_value), repr(r.ratio),
                            r.iterations, r.converged])
        (out / "oracle.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    log(f"oracle finished in {time.perf_counter() - start:.1f} s ({solver_seconds:.2f} s in the solver)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdbackhaul", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("config", help="YAML or JSON configuration file")
        p.add_argument("--seed", type=int, action="append",
                       help="seed to run (repeatable); overrides engine.seeds")
        p.add_argument("--out-dir", help="output directory (default: output.out_dir)")
        p.add_argument("--trace", action="store_true", help="write per-slot decision traces")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")

    common(sub.add_parser("run", help="run one configuration over its seeds"))
    common(sub.add_parser("sweep", help="run the configuration's sweep block"))
    common(sub.add_parser("validate", help="check a configuration and print it with defaults"))
    p = sub.add_parser("oracle", help="compare the power solver with exhaustive grid search")
    common(p, config=False)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--points", type=int, default=20, help="grid points per axis")
    p.add_argument("--form", choices=("product", "sum", "both"), default="both")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "oracle" and args.seed:
        args.seed = args.seed[0]
    try:
        if args.command == "run":
            return cmd_run(args, sweep=False)
        if args.command == "sweep":
            return cmd_run(args, sweep=True)
        if args.command == "validate":
            return cmd_validate(args)
        return cmd_oracle(args)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "path": exc.path, "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
