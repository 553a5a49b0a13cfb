"""Network geometry, large-scale path loss, noise and per-slot Rayleigh fading.

Node indexing used throughout the package: the MBS is kept apart (it owns a
vector channel of length ``L``); SBS ``c`` has flat index ``c`` and UE ``n`` of
cell ``c`` has flat index ``num_cells + c * ues_per_cell + n``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

THERMAL_NOISE_DBM_HZ = -174.0

# Stream tags mixed into SeedSequence entropy so fading, UE placement and
# traffic never share random numbers.
STREAM_TOPOLOGY = 0x70
STREAM_CHANNEL = 0xC4
STREAM_TRAFFIC = 0x7F


class NodeKind(str, enum.Enum):
    MBS = "MBS"
    SBS = "SBS"
    UE = "UE"


@dataclass(frozen=True, order=True)
class NodeId:
    kind: NodeKind
    cell: int = 0
    ue: int = 0

    def __str__(self):
        if self.kind is NodeKind.MBS:
            return "MBS"
        if self.kind is NodeKind.SBS:
            return f"SBS{self.cell}"
        return f"UE{self.cell}.{self.ue}"


MBS = NodeId(NodeKind.MBS)


def sbs(cell: int) -> NodeId:
    return NodeId(NodeKind.SBS, cell)


def ue(cell: int, index: int) -> NodeId:
    return NodeId(NodeKind.UE, cell, index)


@dataclass(frozen=True)
class CapabilityProfile:
    name: str
    mbs_full_duplex: bool
    sbs_full_duplex: bool
    mbs_sdma: bool
    power_control: bool = True
    max_simultaneous_links: int | None = None

    @property
    def multi_antenna(self) -> bool:
        # Baselines without SDMA are the single-antenna MBS cases.
        return self.mbs_sdma


PROFILES: dict[str, CapabilityProfile] = {
    p.name: p
    for p in (
        CapabilityProfile("HD1", False, False, False, max_simultaneous_links=1),
        CapabilityProfile("HD2", False, False, False),
        CapabilityProfile("HD-SDMA", False, False, True),
        CapabilityProfile("FD1", True, True, False),
        CapabilityProfile("FD2", False, True, True),
        CapabilityProfile("FD-SDMA", True, True, True),
        CapabilityProfile("FD-SDMA-MP", True, True, True, power_control=False),
    )
}


def get_profile(name: str) -> CapabilityProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown baseline {name!r}; expected one of {sorted(PROFILES)}") from None


class LinkKind(str, enum.Enum):
    MBS_SBS = "mbs_sbs"
    MBS_UE = "mbs_ue"
    SBS_UE = "sbs_ue"
    SBS_SBS = "sbs_sbs"
    UE_UE = "ue_ue"


MACRO_NLOS = (128.1, 37.6)
PICO_NLOS = (140.7, 36.7)

DEFAULT_PATH_LOSS: dict[str, tuple[float, float]] = {
    LinkKind.MBS_SBS.value: MACRO_NLOS,
    LinkKind.MBS_UE.value: MACRO_NLOS,
    LinkKind.SBS_UE.value: PICO_NLOS,
    LinkKind.SBS_SBS.value: PICO_NLOS,
    LinkKind.UE_UE.value: PICO_NLOS,
}


def link_kind(a: NodeKind, b: NodeKind) -> LinkKind:
    pair = {NodeKind(a), NodeKind(b)}
    if pair == {NodeKind.MBS, NodeKind.SBS}:
        return LinkKind.MBS_SBS
    if pair == {NodeKind.MBS, NodeKind.UE}:
        return LinkKind.MBS_UE
    if pair == {NodeKind.SBS, NodeKind.UE}:
        return LinkKind.SBS_UE
    if pair == {NodeKind.SBS}:
        return LinkKind.SBS_SBS
    if pair == {NodeKind.UE}:
        return LinkKind.UE_UE
    raise ValueError(f"no path-loss model between {a} and {b}")


def path_loss_db(kind, distance_m, constants: Mapping[str, tuple[float, float]] | None = None):
    """NLoS path loss ``A + B log10(d_km)`` in dB for the given link kind.

    Accepts a scalar or an array of distances.
    """
    d = np.asarray(distance_m, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError("distance must be positive")
    table = DEFAULT_PATH_LOSS if constants is None else constants
    intercept, slope = table[LinkKind(kind).value]
    loss = intercept + slope * np.log10(d / 1000.0)
    return float(loss) if loss.ndim == 0 else loss


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0


def noise_power_dbm(bandwidth_hz: float, noise_figure_db: float) -> float:
    if not bandwidth_hz > 0:
        raise ValueError("bandwidth must be positive")
    return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(bandwidth_hz) + noise_figure_db


def noise_power_watts(bandwidth_hz: float, noise_figure_db: float) -> float:
    return dbm_to_watts(noise_power_dbm(bandwidth_hz, noise_figure_db))


@dataclass
class ScenarioConfig:
    """Radio and geometry parameters; defaults are the standard two-tier simulation values."""

    num_cells: int = 2
    ues_per_cell: int = 10
    d1_m: float = 212.06
    d2_m: float = 180.0
    num_antennas: int = 32
    sic_db: float = 120.0
    ue_min_distance_m: float = 10.0
    ue_max_distance_m: float = 40.0
    min_link_distance_m: float = 1.0
    bandwidth_hz: float = 10e6
    spectral_cap: float = 7.0
    max_power_dbm: dict[str, float] = field(
        default_factory=lambda: {"mbs": 46.0, "sbs": 24.0, "ue": 23.0})
    noise_figure_db: dict[str, float] = field(
        default_factory=lambda: {"mbs": 5.0, "sbs": 12.0, "ue": 9.0})
    path_loss: dict[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_PATH_LOSS))

    def validate(self):
        if self.num_cells < 1 or self.ues_per_cell < 1:
            raise ValueError("num_cells and ues_per_cell must be >= 1")
        if not self.d1_m > 0 or self.d2_m < 0:
            raise ValueError("need d1 > 0 and d2 >= 0")
        if self.num_cells == 2 and self.d2_m > 2 * self.d1_m:
            raise ValueError(f"d2={self.d2_m} m cannot exceed 2*d1={2 * self.d1_m} m")
        if self.num_antennas < 1:
            raise ValueError("num_antennas must be >= 1")
        if not 0 < self.ue_min_distance_m <= self.ue_max_distance_m:
            raise ValueError("need 0 < ue_min_distance_m <= ue_max_distance_m")
        if not self.bandwidth_hz > 0 or not self.spectral_cap > 0:
            raise ValueError("bandwidth and spectral cap must be positive")
        for block in ("max_power_dbm", "noise_figure_db"):
            missing = {"mbs", "sbs", "ue"} - set(getattr(self, block))
            if missing:
                raise ValueError(f"{block} missing entries {sorted(missing)}")
        missing = {k.value for k in LinkKind} - set(self.path_loss)
        if missing:
            raise ValueError(f"path_loss missing entries {sorted(missing)}")
        return self

    @property
    def gamma(self) -> float:
        return 10.0 ** (-self.sic_db / 10.0)

    def max_power(self, kind: NodeKind) -> float:
        return dbm_to_watts(self.max_power_dbm[NodeKind(kind).value.lower()])

    def noise(self, kind: NodeKind) -> float:
        return noise_power_watts(self.bandwidth_hz, self.noise_figure_db[NodeKind(kind).value.lower()])


@dataclass
class Topology:
    mbs_xy: np.ndarray
    sbs_xy: np.ndarray  # (num_cells, 2)
    ue_xy: np.ndarray  # (num_cells, ues_per_cell, 2)
    d1: float
    d2: float
    num_antennas_mbs: int
    capabilities: CapabilityProfile
    config: ScenarioConfig

    @property
    def num_cells(self) -> int:
        return self.sbs_xy.shape[0]

    @property
    def ues_per_cell(self) -> int:
        return self.ue_xy.shape[1]

    @property
    def num_nodes(self) -> int:
        """Number of SBS and UE nodes (the MBS is indexed separately)."""
        return self.num_cells * (1 + self.ues_per_cell)

    def index(self, node: NodeId) -> int:
        return node_index(node, self.num_cells, self.ues_per_cell)

    @property
    def positions(self) -> dict[NodeId, np.ndarray]:
        out = {MBS: self.mbs_xy}
        for c in range(self.num_cells):
            out[sbs(c)] = self.sbs_xy[c]
            for n in range(self.ues_per_cell):
                out[ue(c, n)] = self.ue_xy[c, n]
        return out

    def node_xy(self) -> np.ndarray:
        """Flat-indexed coordinates of all SBS and UE nodes."""
        return np.concatenate([self.sbs_xy, self.ue_xy.reshape(-1, 2)])

    def node_kinds(self) -> np.ndarray:
        kinds = np.empty(self.num_nodes, dtype=object)
        kinds[: self.num_cells] = NodeKind.SBS
        kinds[self.num_cells:] = NodeKind.UE
        return kinds


def node_index(node: NodeId, num_cells: int, ues_per_cell: int) -> int:
    if node.kind is NodeKind.SBS:
        return node.cell
    if node.kind is NodeKind.UE:
        return num_cells + node.cell * ues_per_cell + node.ue
    raise ValueError("the MBS has no flat node index")


def sbs_positions(num_cells: int, d1: float, d2: float) -> np.ndarray:
    if num_cells == 1:
        return np.array([[d1, 0.0]])
    if num_cells == 2:
        if d2 > 2 * d1:
            raise ValueError(f"d2={d2} m cannot exceed 2*d1={2 * d1} m")
        half = d2 / 2.0
        x = math.sqrt(d1 * d1 - half * half)
        return np.array([[x, half], [x, -half]])
    angles = 2 * np.pi * np.arange(num_cells) / num_cells
    return d1 * np.column_stack([np.cos(angles), np.sin(angles)])


def build_topology(config: ScenarioConfig, seed: int, profile: CapabilityProfile | str = "FD-SDMA") -> Topology:
    """Place the MBS at the origin, SBSs at the (d1, d2) geometry and UEs
    uniformly over the annulus around their serving SBS."""
    config.validate()
    if isinstance(profile, str):
        profile = get_profile(profile)
    rng = np.random.default_rng(np.random.SeedSequence([seed, STREAM_TOPOLOGY]))
    sbs_xy = sbs_positions(config.num_cells, config.d1_m, config.d2_m)
    shape = (config.num_cells, config.ues_per_cell)
    r2 = rng.uniform(config.ue_min_distance_m ** 2, config.ue_max_distance_m ** 2, size=shape)
    r = np.clip(np.sqrt(r2), config.ue_min_distance_m, config.ue_max_distance_m)
    theta = rng.uniform(0.0, 2 * np.pi, size=shape)
    offsets = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)
    ue_xy = sbs_xy[:, None, :] + offsets
    antennas = config.num_antennas if profile.multi_antenna else 1
    return Topology(
        mbs_xy=np.zeros(2),
        sbs_xy=sbs_xy,
        ue_xy=ue_xy,
        d1=config.d1_m,
        d2=config.d2_m if config.num_cells == 2 else 0.0,
        num_antennas_mbs=antennas,
        capabilities=profile,
        config=config,
    )


@dataclass(frozen=True)
class LargeScaleGains:
    """Linear path gains: ``scalar[i, j]`` between flat nodes, ``mbs[i]`` from the MBS."""

    scalar: np.ndarray
    mbs: np.ndarray


def large_scale_gains(topology: Topology) -> LargeScaleGains:
    cfg = topology.config
    xy = topology.node_xy()
    ns = topology.num_cells
    k = topology.num_nodes
    dist = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=-1)
    dist = np.maximum(dist, cfg.min_link_distance_m)
    is_ue = np.arange(k) >= ns
    kinds = np.where(
        is_ue[:, None] & is_ue[None, :], 2, np.where(is_ue[:, None] | is_ue[None, :], 1, 0))
    loss = np.empty_like(dist)
    for code, kind in ((0, LinkKind.SBS_SBS), (1, LinkKind.SBS_UE), (2, LinkKind.UE_UE)):
        mask = kinds == code
        loss[mask] = path_loss_db(kind, dist[mask], cfg.path_loss)
    scalar = 10.0 ** (-loss / 10.0)
    np.fill_diagonal(scalar, 0.0)
    d_mbs = np.maximum(np.linalg.norm(xy - topology.mbs_xy, axis=-1), cfg.min_link_distance_m)
    mbs_loss = np.where(
        is_ue,
        path_loss_db(LinkKind.MBS_UE, d_mbs, cfg.path_loss),
        path_loss_db(LinkKind.MBS_SBS, d_mbs, cfg.path_loss),
    )
    return LargeScaleGains(scalar=scalar, mbs=10.0 ** (-mbs_loss / 10.0))


@dataclass(frozen=True)
class ChannelState:
    """Complex channel responses for one slot.

    ``scalar`` is the symmetric matrix of single-antenna responses between flat
    nodes, ``mbs`` holds the length-``L`` MBS response of every flat node.
    """

    scalar: np.ndarray
    mbs: np.ndarray
    gamma_mbs: float
    gamma_sbs: float
    noise: Mapping[NodeKind, float]
    num_cells: int
    ues_per_cell: int

    @property
    def num_antennas(self) -> int:
        return self.mbs.shape[1]

    def index(self, node: NodeId) -> int:
        return node_index(node, self.num_cells, self.ues_per_cell)

    def h(self, a: NodeId, b: NodeId) -> complex:
        return complex(self.scalar[self.index(a), self.index(b)])

    def h_mbs(self, node: NodeId) -> np.ndarray:
        return self.mbs[self.index(node)]

    def gain(self, a: NodeId, b: NodeId) -> float:
        return abs(self.h(a, b)) ** 2

    @property
    def scalar_gain(self) -> np.ndarray:
        return np.abs(self.scalar) ** 2


def complex_normal(rng: np.random.Generator, size) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian samples (unit variance)."""
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / math.sqrt(2.0)


def channel_rng(seed: int, slot: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, STREAM_CHANNEL, slot]))


def draw_channels(topology: Topology, slot: int, seed: int = 0,
                  gains: LargeScaleGains | None = None,
                  rng: np.random.Generator | None = None) -> ChannelState:
    """Draw i.i.d. Rayleigh block fading for one slot.

    The stream is a pure function of ``(seed, slot)`` unless an explicit
    generator is passed.
    """
    if gains is None:
        gains = large_scale_gains(topology)
    if rng is None:
        rng = channel_rng(seed, slot)
    cfg = topology.config
    k = topology.num_nodes
    z = complex_normal(rng, (k, k))
    upper = np.triu(z, 1)
    scalar = np.sqrt(gains.scalar) * (upper + upper.T)
    mbs = np.sqrt(gains.mbs)[:, None] * complex_normal(rng, (k, topology.num_antennas_mbs))
    gamma = cfg.gamma
    return ChannelState(
        scalar=scalar,
        mbs=mbs,
        gamma_mbs=gamma,
        gamma_sbs=gamma,
        noise={kind: cfg.noise(kind) for kind in NodeKind},
        num_cells=topology.num_cells,
        ues_per_cell=topology.ues_per_cell,
    )
