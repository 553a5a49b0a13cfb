"""Run and sweep configuration.

Config files are YAML (JSON also parses) with nested blocks::

    baseline: FD-SDMA
    scenario: {d1_m: 212.06, max_power_dbm: {mbs: 46}}
    traffic: {symmetric: false}
    engine: {sim_seconds: 12.5, seeds: [0, 1, 2]}
    sweep: {param: d1, values: [150, 212.06, 280], baselines: [FD-SDMA, HD-SDMA]}

Omitted keys take their defaults, unknown keys are an error naming the key path.
"""
from __future__ import annotations

import copy
import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .power import SolverOptions
from .scenario import PROFILES, ScenarioConfig, get_profile
from .scheduler import SchedulerOptions
from .traffic import TrafficConfig

TRAFFIC_MODES = ("symmetric", "asymmetric")
SWEEP_PARAMS = {"d1": "d1_m", "d2": "d2_m"}
_EXP_FLOAT = re.compile(r"[-+]?\d+(\.\d*)?[eE][-+]?\d+")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted key path at fault."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass
class EngineConfig:
    slot_duration_s: float = 1e-3
    sim_seconds: float = 12.5
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    record_backlog: bool = True

    @property
    def num_slots(self) -> int:
        return int(round(self.sim_seconds / self.slot_duration_s))

    def validate(self):
        if not self.slot_duration_s > 0 or not self.sim_seconds > 0:
            raise ValueError("slot_duration_s and sim_seconds must be positive")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        return self


@dataclass
class SchedulerConfig:
    floor_negative_weights: bool = True
    reoptimize_top_k: int = 1
    beam_loading: str = "interferer"
    capped_power_objective: bool = True


@dataclass
class OutputConfig:
    out_dir: str = "results"
    formats: list[str] = field(default_factory=lambda: ["csv", "json"])
    trace: bool = False

    def validate(self):
        bad = set(self.formats) - {"csv", "json"}
        if bad or not self.formats:
            raise ValueError(f"formats must be a non-empty subset of csv, json; got {self.formats}")
        return self


@dataclass
class SweepSpec:
    param: str = "d1"
    values: list[float] = field(default_factory=list)
    baselines: list[str] = field(default_factory=lambda: ["FD-SDMA"])
    traffic: list[str] = field(default_factory=lambda: ["symmetric"])

    def validate(self):
        if self.param not in SWEEP_PARAMS:
            raise ValueError(f"param must be one of {sorted(SWEEP_PARAMS)}")
        if not self.values:
            raise ValueError("values must be non-empty")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("values must be strictly increasing")
        for b in self.baselines:
            get_profile(b)
        if not self.baselines:
            raise ValueError("baselines must be non-empty")
        bad = set(self.traffic) - set(TRAFFIC_MODES)
        if bad or not self.traffic:
            raise ValueError(f"traffic entries must be in {TRAFFIC_MODES}")
        return self


@dataclass
class SimulationConfig:
    baseline: str = "FD-SDMA"
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    solver: SolverOptions = field(default_factory=SolverOptions)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    sweep: SweepSpec | None = None

    def validate(self):
        for name, fn in (("baseline", lambda: get_profile(self.baseline)),
                         ("scenario", self.scenario.validate),
                         ("traffic", self.traffic.validate),
                         ("solver", self.solver.validate),
                         ("scheduler", self.scheduler_options().validate),
                         ("engine", self.engine.validate),
                         ("output", self.output.validate)):
            try:
                fn()
            except (ValueError, KeyError) as exc:
                raise ConfigError(name, str(exc).strip("'\"")) from None
        if self.sweep is not None:
            try:
                self.sweep.validate()
            except (ValueError, KeyError) as exc:
                raise ConfigError("sweep", str(exc).strip("'\"")) from None
        return self

    @property
    def profile(self):
        return get_profile(self.baseline)

    def scheduler_options(self) -> SchedulerOptions:
        return SchedulerOptions(
            solver=self.solver,
            power_control=self.profile.power_control,
            floor_negative_weights=self.scheduler.floor_negative_weights,
            reoptimize_top_k=self.scheduler.reoptimize_top_k,
            beam_loading=self.scheduler.beam_loading,
            capped_power_objective=self.scheduler.capped_power_objective,
        )

    def with_point(self, baseline: str | None = None, traffic: str | None = None,
                   param: str | None = None, value: float | None = None) -> "SimulationConfig":
        """Copy with one sweep coordinate applied."""
        cfg = copy.deepcopy(self)
        cfg.sweep = None
        if baseline is not None:
            cfg.baseline = baseline
        if traffic is not None:
            cfg.traffic.symmetric = traffic == "symmetric"
        if param is not None:
            setattr(cfg.scenario, SWEEP_PARAMS[param], float(value))
        return cfg.validate()

    def to_dict(self) -> dict:
        out = _to_plain(self)
        if self.sweep is None:
            out.pop("sweep")
        return out


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _coerce(value, default, path: str):
    """Type-check ``value`` against the type of its default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, str) and _EXP_FLOAT.fullmatch(value.strip()):
            return float(value)  # YAML 1.1 leaves "1e-6" as a string
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise ConfigError(path, f"expected a list of {len(default)} numbers")
        return tuple(_coerce(v, d, f"{path}[{i}]") for i, (v, d) in enumerate(zip(value, default)))
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return list(value)
    return value


def _merge_dict(default: dict, data, path: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a mapping")
    out = dict(default)
    for key, value in data.items():
        if key not in default:
            raise ConfigError(f"{path}.{key}", f"unknown key (expected one of {sorted(default)})")
        out[key] = _coerce(value, default[key], f"{path}.{key}")
    return out


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a mapping")
    obj = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(where, f"unknown key (expected one of {sorted(names)})")
        default = getattr(obj, key)
        if isinstance(default, dict):
            value = _merge_dict(default, value, where)
        elif key == "seeds":
            if not isinstance(value, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in value):
                raise ConfigError(where, "expected a list of integers")
        elif key in ("values",):
            if not isinstance(value, list):
                raise ConfigError(where, "expected a list of numbers")
            value = [_coerce(v, 0.0, f"{where}[{i}]") for i, v in enumerate(value)]
        elif key in ("baselines", "traffic", "formats") and isinstance(default, list):
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise ConfigError(where, "expected a list of strings")
        else:
            value = _coerce(value, default, where)
        setattr(obj, key, value)
    return obj


_BLOCKS = {
    "scenario": ScenarioConfig,
    "traffic": TrafficConfig,
    "solver": SolverOptions,
    "scheduler": SchedulerConfig,
    "engine": EngineConfig,
    "output": OutputConfig,
    "sweep": SweepSpec,
}


def config_from_dict(data: dict[str, Any] | None) -> SimulationConfig:
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError("", "top level must be a mapping")
    cfg = SimulationConfig()
    for key, value in data.items():
        if key == "baseline":
            if value not in PROFILES:
                raise ConfigError("baseline", f"unknown baseline {value!r} (expected one of {sorted(PROFILES)})")
            cfg.baseline = value
        elif key in _BLOCKS:
            setattr(cfg, key, _build(_BLOCKS[key], value, key))
        else:
            raise ConfigError(key, f"unknown key (expected one of {sorted(['baseline', *_BLOCKS])})")
    return cfg.validate()


def parse_config(path: str | Path) -> SimulationConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    try:
        # YAML 1.1 reads exponent floats such as 1e-06 as strings, so JSON
        # files go through the JSON parser.
        data = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError("", f"cannot parse {path}: {exc}") from None
    return config_from_dict(data)


def serialize_config(cfg: SimulationConfig, fmt: str = "yaml") -> str:
    data = cfg.to_dict()
    if fmt == "json":
        return json.dumps(data, indent=2, sort_keys=True)
    return yaml.safe_dump(data, sort_keys=True)
