import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdbackhaul.scenario import (MBS, PROFILES, LinkKind, NodeKind, ScenarioConfig, build_topology,
                                 complex_normal, db_to_linear, dbm_to_watts, draw_channels,
                                 get_profile, large_scale_gains, link_kind, noise_power_dbm,
                                 noise_power_watts, path_loss_db, sbs, ue, watts_to_dbm)


def test_macro_path_loss_at_one_km():
    assert path_loss_db(LinkKind.MBS_SBS, 1000.0) == pytest.approx(128.1)


def test_pico_path_loss_at_one_km():
    assert path_loss_db(LinkKind.SBS_UE, 1000.0) == pytest.approx(140.7)


@pytest.mark.parametrize("kind", list(LinkKind))
def test_path_loss_increases_with_distance(kind):
    d = np.array([1.0, 5.0, 40.0, 212.06, 1000.0])
    loss = path_loss_db(kind, d)
    assert np.all(np.diff(loss) > 0)
    assert np.all(path_loss_db(kind, 2 * d) > loss)


def test_path_loss_rejects_non_positive_distance():
    with pytest.raises(ValueError):
        path_loss_db(LinkKind.UE_UE, 0.0)


def test_link_kinds():
    assert link_kind(NodeKind.MBS, NodeKind.UE) is LinkKind.MBS_UE
    assert link_kind(NodeKind.UE, NodeKind.SBS) is LinkKind.SBS_UE
    assert link_kind(NodeKind.SBS, NodeKind.SBS) is LinkKind.SBS_SBS


@pytest.mark.parametrize("nf, expected", [(5.0, -99.0), (9.0, -95.0), (12.0, -92.0)])
def test_noise_power_at_10_mhz(nf, expected):
    assert noise_power_dbm(10e6, nf) == pytest.approx(expected)
    assert noise_power_watts(10e6, nf) == pytest.approx(10 ** ((expected - 30) / 10))


def test_thermal_floor():
    assert noise_power_dbm(1.0, 0.0) == pytest.approx(-174.0)


def test_unit_conversions():
    assert dbm_to_watts(46.0) == pytest.approx(39.810717, rel=1e-6)
    assert watts_to_dbm(1.0) == pytest.approx(30.0)
    assert db_to_linear(-120.0) == pytest.approx(1e-12)


def test_sic_gives_gamma_1e_minus_12():
    assert ScenarioConfig().gamma == 1e-12


def test_two_cell_geometry():
    topo = build_topology(ScenarioConfig(), 0)
    assert np.allclose(np.linalg.norm(topo.sbs_xy, axis=1), 212.06)
    assert np.linalg.norm(topo.sbs_xy[0] - topo.sbs_xy[1]) == pytest.approx(180.0)
    assert np.allclose(topo.mbs_xy, 0.0)


def test_single_cell_ignores_d2():
    topo = build_topology(ScenarioConfig(num_cells=1, d2_m=999.0), 0)
    assert np.allclose(topo.sbs_xy, [[212.06, 0.0]])


def test_impossible_geometry_rejected():
    with pytest.raises(ValueError):
        build_topology(ScenarioConfig(d1_m=50.0, d2_m=101.0), 0)


def test_topology_deterministic():
    a = build_topology(ScenarioConfig(), 7)
    b = build_topology(ScenarioConfig(), 7)
    assert np.array_equal(a.ue_xy, b.ue_xy)
    assert not np.array_equal(a.ue_xy, build_topology(ScenarioConfig(), 8).ue_xy)


def test_ue_annulus_over_many_topologies():
    cfg = ScenarioConfig()
    dist = np.concatenate([
        np.linalg.norm(t.ue_xy - t.sbs_xy[:, None, :], axis=-1).ravel()
        for t in (build_topology(cfg, s) for s in range(10_000 // 20))])
    assert dist.size >= 10_000
    assert dist.min() >= 10.0 and dist.max() <= 40.0


def test_antenna_count_follows_profile():
    for name, profile in PROFILES.items():
        topo = build_topology(ScenarioConfig(), 0, name)
        assert topo.num_antennas_mbs == (32 if profile.mbs_sdma else 1)


def test_unknown_profile():
    with pytest.raises(ValueError):
        get_profile("FD3")


def test_hd1_single_link_limit():
    assert get_profile("HD1").max_simultaneous_links == 1


def test_path_gains_in_unit_interval():
    g = large_scale_gains(build_topology(ScenarioConfig(), 1))
    off = ~np.eye(g.scalar.shape[0], dtype=bool)
    assert np.all((g.scalar[off] > 0) & (g.scalar[off] < 1))
    assert np.all((g.mbs > 0) & (g.mbs < 1))


def test_channel_shapes_and_reciprocity(channel):
    assert channel.mbs.shape == (22, 32)
    assert np.array_equal(channel.scalar, channel.scalar.T)
    assert channel.h(sbs(0), ue(1, 3)) == channel.h(ue(1, 3), sbs(0))
    assert channel.h_mbs(sbs(1)).shape == (32,)


def test_channel_deterministic_per_slot():
    topo = build_topology(ScenarioConfig(), 2)
    a, b = draw_channels(topo, 5, 2), draw_channels(topo, 5, 2)
    assert np.array_equal(a.scalar, b.scalar) and np.array_equal(a.mbs, b.mbs)
    assert not np.array_equal(a.mbs, draw_channels(topo, 6, 2).mbs)


def test_rayleigh_mean_power():
    rng = np.random.default_rng(0)
    g = 1e-10
    h = math.sqrt(g) * complex_normal(rng, 100_000)
    assert np.mean(np.abs(h) ** 2) == pytest.approx(g, rel=0.02)


def test_complex_normal_component_variance():
    z = complex_normal(np.random.default_rng(1), 100_000)
    assert np.var(z.real) == pytest.approx(0.5, rel=0.02)
    assert np.var(z.imag) == pytest.approx(0.5, rel=0.02)


def test_channel_large_scale_average():
    topo = build_topology(ScenarioConfig(), 4)
    gains = large_scale_gains(topo)
    draws = np.array([np.abs(draw_channels(topo, t, 4, gains).mbs[0]) ** 2 for t in range(400)])
    assert draws.mean() == pytest.approx(gains.mbs[0], rel=0.03)


@settings(max_examples=30, deadline=None)
@given(d1=st.floats(60.0, 400.0), frac=st.floats(0.05, 1.9), seed=st.integers(0, 2 ** 20))
def test_geometry_property(d1, frac, seed):
    d2 = frac * d1
    topo = build_topology(ScenarioConfig(d1_m=d1, d2_m=d2), seed)
    assert np.allclose(np.linalg.norm(topo.sbs_xy, axis=1), d1)
    assert np.linalg.norm(topo.sbs_xy[0] - topo.sbs_xy[1]) == pytest.approx(d2)
    assert np.all(np.isfinite(topo.ue_xy))


def test_positions_map_covers_all_nodes():
    topo = build_topology(ScenarioConfig(ues_per_cell=3), 0)
    pos = topo.positions
    assert MBS in pos and len(pos) == 1 + 2 + 6
