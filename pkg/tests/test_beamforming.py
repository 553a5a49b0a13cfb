import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_complex
from fdbackhaul.beamforming import (compute_beams, effective_gain, mmse_receive, mmse_transmit,
                                    receive_quotient, transmit_quotient)
from fdbackhaul.fast import BatchScheduler
from fdbackhaul.modes import enumerate_modes
from fdbackhaul.scenario import NodeKind, ScenarioConfig, get_profile
from fdbackhaul.scheduler import SchedulerOptions


def collinear(a, b, tol=1e-10):
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    return abs(abs(np.vdot(a, b)) - 1.0) < tol


def test_single_user_matched_filter():
    e1 = np.zeros(4, complex)
    e1[0] = 1.0
    (v,) = mmse_receive([e1], [3.0], 0.1)
    assert collinear(v, e1)


def test_orthogonal_channels_give_matched_beams():
    h1 = np.array([1, 1j, 0, 0]) * 2.0
    h2 = np.array([0, 0, 1, -1j]) * 0.5
    for beams in (mmse_receive([h1, h2], [1.0, 5.0], 0.01),
                  mmse_transmit([h1, h2], [1.0, 5.0], 0.01)):
        assert collinear(beams[0], h1) and collinear(beams[1], h2)


@pytest.mark.parametrize("loading", ["interferer", "printed"])
def test_unit_norm(loading):
    rng = np.random.default_rng(0)
    for _ in range(50):
        h = random_complex(rng, (3, 8))
        for b in mmse_receive(list(h), rng.uniform(0.1, 10, 3), 0.3, loading):
            assert abs(np.linalg.norm(b) ** 2 - 1) < 1e-10


@pytest.mark.parametrize("loading", ["interferer", "printed"])
def test_matches_direct_inversion(loading):
    rng = np.random.default_rng(1)
    h = random_complex(rng, (2, 8)) * 1e-4
    p, noise = np.array([0.25, 0.25]), 1e-12
    beams = mmse_transmit(list(h), p, noise, 2, loading)
    for k in range(2):
        c = p / (2 * noise) if loading == "interferer" else np.full(2, p[k] / (2 * noise))
        A = np.eye(8) + sum(c[i] * np.outer(h[i], h[i].conj()) for i in range(2))
        assert collinear(beams[k], np.linalg.solve(A, h[k]), 1e-9)


def test_single_stream_transmit_matches_receive_direction():
    rng = np.random.default_rng(2)
    h = random_complex(rng, 8)
    assert collinear(mmse_transmit([h], [2.0], 0.5)[0], mmse_receive([h], [2.0], 0.5)[0])


def test_generalized_eigen_oracle():
    rng = np.random.default_rng(3)
    h = random_complex(rng, (2, 4))
    p, noise = np.array([2.0, 3.0]), 0.5
    beams = mmse_receive(list(h), p, noise)
    for k in range(2):
        R = noise * np.eye(4) + sum(p[i] * np.outer(h[i], h[i].conj()) for i in range(2) if i != k)
        # Largest generalized eigenvalue of (p_k h_k h_k^H, R).
        vals = np.linalg.eigvals(np.linalg.solve(R, p[k] * np.outer(h[k], h[k].conj())))
        assert receive_quotient(h, p, noise, k, beams[k]) == pytest.approx(vals.real.max(), rel=1e-9)


def test_beats_random_vectors():
    rng = np.random.default_rng(4)
    h = random_complex(rng, (2, 8))
    p, noise = np.array([1.0, 1.0]), 0.2
    rx, tx = mmse_receive(list(h), p, noise), mmse_transmit(list(h), p, noise)
    u = random_complex(rng, (1000, 8))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    for k in range(2):
        best_rx = receive_quotient(h, p, noise, k, rx[k])
        best_tx = transmit_quotient(h, p, noise, k, tx[k])
        assert all(receive_quotient(h, p, noise, k, x) <= best_rx for x in u)
        assert all(transmit_quotient(h, p, noise, k, x) <= best_tx for x in u)


def test_zero_interferer_limit():
    rng = np.random.default_rng(5)
    h = random_complex(rng, (2, 8))
    angles = []
    for scale in (1.0, 1e-3, 1e-9):
        v = mmse_receive(list(h), [1.0, scale], 0.1)[0]
        u = h[0] / np.linalg.norm(h[0])
        angles.append(np.linalg.norm(v - np.vdot(u, v) * u))  # sine of the angle
    assert angles[0] > angles[1] > angles[2] and angles[2] < 1e-6


def test_effective_gain_examples():
    h = np.array([1 + 1j, 2, -1j])
    b = h / np.linalg.norm(h)
    assert effective_gain(h, b) == pytest.approx(np.linalg.norm(h) ** 2)
    assert effective_gain(np.array([1, 0]), np.array([0, 1])) == 0.0
    rng = np.random.default_rng(6)
    x, y = random_complex(rng, 5), random_complex(rng, 5)
    direct = abs(sum(np.conj(x[i]) * y[i] for i in range(5))) ** 2
    assert effective_gain(x, y) == pytest.approx(direct)


def test_effective_gain_length_mismatch():
    with pytest.raises(ValueError):
        effective_gain(np.ones(3), np.ones(4))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), phase=st.floats(0, 2 * np.pi))
def test_phase_invariance(seed, phase):
    rng = np.random.default_rng(seed)
    h = random_complex(rng, (2, 6))
    rot = h * np.exp(1j * phase)
    a = mmse_receive(list(h), [1.0, 2.0], 0.3)
    b = mmse_receive(list(rot), [1.0, 2.0], 0.3)
    for i in range(2):
        for k in range(2):
            assert effective_gain(rot[i], b[k]) == pytest.approx(effective_gain(h[i], a[k]), rel=1e-9)


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        mmse_receive([np.ones(3)], [1.0, 2.0], 1.0)
    with pytest.raises(ValueError):
        mmse_receive([np.ones(3)], [-1.0], 1.0)
    with pytest.raises(ValueError):
        mmse_receive([np.ones(3)], [1.0], 0.0)


@pytest.mark.parametrize("loading", ["interferer", "printed"])
def test_fast_beam_table_matches_module(channel, loading):
    radio = ScenarioConfig()
    sched = BatchScheduler(enumerate_modes(2, get_profile("FD-SDMA")), radio,
                           SchedulerOptions(beam_loading=loading))
    rx_gain, tx_gain = sched.beam_gains(channel)
    p, noise = radio.max_power(NodeKind.SBS), channel.noise[NodeKind.MBS]
    for mask in (1, 2, 3):
        cells = [c for c in range(2) if mask >> c & 1]
        beams = compute_beams(channel, cells, cells, p, noise, loading)
        for c in cells:
            for node in range(channel.mbs.shape[0]):
                h = channel.mbs[node]
                assert rx_gain[mask, c, node] == pytest.approx(effective_gain(h, beams.receive[c]), rel=1e-9, abs=1e-30)
                assert tx_gain[mask, c, node] == pytest.approx(effective_gain(h, beams.transmit[c]), rel=1e-9, abs=1e-30)
