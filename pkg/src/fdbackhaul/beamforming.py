"""MMSE receive/transmit beamforming at the multi-antenna MBS."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LOADINGS = ("interferer", "printed")


@dataclass
class BeamformerSet:
    """Unit-norm beams keyed by small-cell index."""

    receive: dict[int, np.ndarray] = field(default_factory=dict)
    transmit: dict[int, np.ndarray] = field(default_factory=dict)

    def __bool__(self):
        return bool(self.receive or self.transmit)


def _as_matrix(channels) -> np.ndarray:
    h = np.atleast_2d(np.asarray(channels, dtype=complex))
    if h.ndim != 2:
        raise ValueError("channels must be a list of equal-length vectors")
    return h


def _mmse(channels, loads, loading: str) -> list[np.ndarray]:
    h = _as_matrix(channels)
    loads = np.asarray(loads, dtype=float)
    if loads.shape != (h.shape[0],):
        raise ValueError(f"expected {h.shape[0]} powers, got {loads.shape}")
    if np.any(loads < 0):
        raise ValueError("powers must be non-negative")
    if loading not in LOADINGS:
        raise ValueError(f"loading must be one of {LOADINGS}")
    # (I + sum_i d_i h_i h_i^H)^{-1} h_k = B (I + D B^H B)^{-1} e_k with
    # B = [h_1 .. h_n], so only an n x n system is solved.
    n = h.shape[0]
    gram = h.conj() @ h.T
    eye = np.eye(n)
    if loading == "interferer":
        coeffs = np.linalg.solve(eye + loads[:, None] * gram, eye)
    beams = []
    for k in range(n):
        if loading == "printed":
            c = np.linalg.solve(eye + loads[k] * gram, eye[:, k])
        else:
            c = coeffs[:, k]
        x = h.T @ c
        norm = np.linalg.norm(x)
        if norm == 0:
            raise ValueError(f"channel {k} is identically zero")
        beams.append(x / norm)
    return beams


def mmse_receive(channels: Sequence[np.ndarray], powers: Sequence[float], noise: float,
                 loading: str = "interferer") -> list[np.ndarray]:
    """Receive beams ``v_k ∝ (I + Σ_i p_i/σ² h_i h_i^H)^{-1} h_k``.

    With ``loading="printed"`` every term uses the desired user's power
    ``p_k`` instead of ``p_i``.
    """
    if not noise > 0:
        raise ValueError("noise must be positive")
    return _mmse(channels, np.asarray(powers, dtype=float) / noise, loading)


def mmse_transmit(channels: Sequence[np.ndarray], powers: Sequence[float], noise: float,
                  num_sbs: int | None = None, loading: str = "interferer") -> list[np.ndarray]:
    """Transmit beams with per-stream loading ``p / (N_S σ²)``."""
    if not noise > 0:
        raise ValueError("noise must be positive")
    n = len(channels) if num_sbs is None else num_sbs
    return _mmse(channels, np.asarray(powers, dtype=float) / (n * noise), loading)


def effective_gain(vector_channel, beam) -> float:
    """``|h^H b|^2``."""
    h = np.asarray(vector_channel, dtype=complex)
    b = np.asarray(beam, dtype=complex)
    if h.shape != b.shape:
        raise ValueError(f"length mismatch: {h.shape} vs {b.shape}")
    return float(abs(np.vdot(h, b)) ** 2)


def receive_quotient(channels, powers, noise, k: int, beam) -> float:
    """SINR of stream ``k`` at the MBS for an arbitrary beam (interference
    through each interferer's own channel)."""
    h = _as_matrix(channels)
    b = np.asarray(beam, dtype=complex)
    g = np.abs(h.conj() @ b) ** 2
    p = np.asarray(powers, dtype=float)
    interference = sum(p[i] * g[i] for i in range(len(p)) if i != k)
    return float(p[k] * g[k] / (interference + noise * np.vdot(b, b).real))


def transmit_quotient(channels, powers, noise, k: int, beam, num_sbs: int | None = None) -> float:
    n = _as_matrix(channels).shape[0] if num_sbs is None else num_sbs
    return receive_quotient(channels, powers, n * noise, k, beam)


def compute_beams(channel, receive_cells: Sequence[int], transmit_cells: Sequence[int],
                  sbs_power: float, noise: float, loading: str = "interferer") -> BeamformerSet:
    """Beams for one mode: receive beams toward the backhaul-uplink SBSs and
    transmit beams toward the backhaul-downlink SBSs.

    Both use the SBS maximum power as the loading power and the MBS noise
    power, since beams are fixed before power allocation.
    """
    beams = BeamformerSet()
    if receive_cells:
        hs = [channel.mbs[c] for c in receive_cells]
        for c, v in zip(receive_cells, mmse_receive(hs, [sbs_power] * len(hs), noise, loading)):
            beams.receive[c] = v
    if transmit_cells:
        hs = [channel.mbs[c] for c in transmit_cells]
        ws = mmse_transmit(hs, [sbs_power] * len(hs), noise, len(hs), loading)
        for c, w in zip(transmit_cells, ws):
            beams.transmit[c] = w
    return beams
