import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdbackhaul.modes import ADL, AUL, BDL, BUL, make_link
from fdbackhaul.traffic import (DL, UL, FlowState, QueueMatrix, TrafficConfig, apply_service,
                                generate_arrivals)


def test_symmetric_file_sizes():
    assert TrafficConfig(symmetric=True).file_bits == (10 ** 7, 10 ** 7)


def test_asymmetric_file_sizes():
    assert TrafficConfig(symmetric=False).file_bits == (10 ** 7, 2 * 10 ** 6)


def test_invalid_config():
    with pytest.raises(ValueError):
        TrafficConfig(dl_file_bits=0).validate()
    with pytest.raises(ValueError):
        TrafficConfig(mean_reading_time_s=0.0).validate()


def test_injected_files_have_full_size():
    flows = FlowState.start(TrafficConfig(symmetric=False), 2, 3, 0)
    q = QueueMatrix.empty(2, 3)
    arrivals = generate_arrivals(flows, q, 100.0)
    assert len(arrivals) == 12
    assert {(a.direction, a.bits) for a in arrivals} == {(DL, 10 ** 7), (UL, 2 * 10 ** 6)}
    assert q.mbs_dl.sum() == 6 * 10 ** 7 and q.ue_ul.sum() == 6 * 2 * 10 ** 6


def test_idle_gap_mean():
    flows = FlowState.start(TrafficConfig(), 1, 1, 42)
    q = QueueMatrix.empty(1, 1)
    gaps = []
    while len(gaps) < 10_000:
        now = float(flows.next_arrival.min())
        generate_arrivals(flows, q, now)
        q.mbs_dl[...] = 0
        q.ue_ul[...] = 0
        before = flows.active.copy()
        flows.complete(q, now)
        gaps.extend((flows.next_arrival[before] - now).tolist())
    assert np.mean(gaps) == pytest.approx(1.0, rel=0.05)


def test_no_request_while_transferring():
    flows = FlowState.start(TrafficConfig(), 1, 1, 0)
    q = QueueMatrix.empty(1, 1)
    generate_arrivals(flows, q, 50.0)
    assert generate_arrivals(flows, q, 500.0) == []
    assert flows.complete(q, 500.0) == 0


def test_disabled_traffic():
    flows = FlowState.start(TrafficConfig(enabled=False), 2, 2, 0)
    assert generate_arrivals(flows, QueueMatrix.empty(2, 2), 1e9) == []


def test_drain_cap():
    q = QueueMatrix.empty(1, 1)
    q.sbs_dl[0, 0] = 5000
    served = apply_service(q, [make_link(0, ADL, 0)], [8e6], 1e-3)
    assert served.tolist() == [5000] and q.sbs_dl[0, 0] == 0


def test_relay_hop_moves_bits():
    q = QueueMatrix.empty(1, 4)
    q.mbs_dl[0, 3] = 10 ** 6
    delivered = np.zeros((1, 4, 2), dtype=np.int64)
    served = apply_service(q, [make_link(0, BDL, 3)], [20e6], 1e-3, delivered)
    assert served[0] == 20_000
    assert q.mbs_dl[0, 3] == 10 ** 6 - 20_000 and q.sbs_dl[0, 3] == 20_000
    assert delivered.sum() == 0


def test_sink_deliveries_counted():
    q = QueueMatrix.empty(1, 2)
    q.sbs_ul[0, 1] = 300
    q.sbs_dl[0, 0] = 400
    delivered = np.zeros((1, 2, 2), dtype=np.int64)
    apply_service(q, [make_link(0, BUL, 1), make_link(0, ADL, 0)], [1e9, 1e9], 1e-3, delivered)
    assert delivered[0, 1, UL] == 300 and delivered[0, 0, DL] == 400


def test_relay_uses_start_of_slot_backlog():
    q = QueueMatrix.empty(1, 1)
    q.ue_ul[0, 0] = 1000
    apply_service(q, [make_link(0, AUL, 0), make_link(0, BUL, 0)], [1e9, 1e9], 1e-3)
    assert q.sbs_ul[0, 0] == 1000 and q.ue_ul[0, 0] == 0


def test_backlog_lookup():
    from fdbackhaul.scenario import MBS, sbs, ue
    q = QueueMatrix.empty(2, 2)
    q.mbs_dl[1, 0] = 7
    q.ue_ul[0, 1] = 3
    assert q.backlog(MBS, 0, DL, cell=1) == 7
    assert q.backlog(ue(0, 1), 1, UL) == 3 and q.backlog(sbs(0), 1, UL) == 0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_conservation_and_non_negativity(seed):
    rng = np.random.default_rng(seed)
    ns, n = 2, 3
    flows = FlowState.start(TrafficConfig(symmetric=bool(rng.integers(2))), ns, n, seed)
    q = QueueMatrix.empty(ns, n)
    delivered = np.zeros((ns, n, 2), dtype=np.int64)
    directions = [BDL, BUL, ADL, AUL]
    dt = 1e-3
    for t in range(300):
        links = [make_link(c, d, int(rng.integers(n))) for c in range(ns) for d in directions
                 if rng.random() < 0.5]
        rates = rng.uniform(0, 70e6, len(links))
        served = apply_service(q, links, rates, dt, delivered)
        assert np.all(served <= np.floor(rates * dt))
        now = (t + 1) * dt * 30
        flows.complete(q, now)
        generate_arrivals(flows, q, now)
        for x in (q.mbs_dl, q.sbs_dl, q.sbs_ul, q.ue_ul):
            assert np.all(x >= 0)
        assert np.array_equal(flows.injected, delivered + q.in_flight())


def test_flow_streams_deterministic():
    a = FlowState.start(TrafficConfig(), 2, 4, 9)
    b = FlowState.start(TrafficConfig(), 2, 4, 9)
    assert np.array_equal(a.next_arrival, b.next_arrival)
    assert not np.array_equal(a.next_arrival, FlowState.start(TrafficConfig(), 2, 4, 10).next_arrival)
