import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uavho import traffic as tr
from uavho.errors import InvalidArgument
from uavho.traffic import BufferState, TrafficParams


def test_service_bits_shannon():
    p = TrafficParams(rrb_bandwidth_hz=180e3, rrbs_per_uav=5, step_duration_s=1.0)
    assert tr.service_bits(1.0, p) == pytest.approx(900e3)
    assert tr.service_bits(3.0, p) == pytest.approx(1.8e6)
    assert tr.service_bits(0.0, p) == 0.0
    with pytest.raises(InvalidArgument):
        tr.service_bits(-0.1, p)


def test_step_queue_conservation():
    p = TrafficParams(data_packet_bits=100.0, control_packet_bits=40.0, q_max=1000.0)
    buf = BufferState(bits_queued=500.0)
    out = tr.step_queue(buf, 3, True, 200.0, p)
    assert out.bits_queued == pytest.approx(500 + 300 + 40 - 200)
    assert out.served_last_step == 200.0
    assert out.dropped_last_step == 0.0
    assert out.arrivals_last_step == 3


def test_step_queue_drops_overflow():
    p = TrafficParams(data_packet_bits=100.0, control_packet_bits=40.0, q_max=1000.0)
    out = tr.step_queue(BufferState(bits_queued=950.0), 2, False, 0.0, p)
    assert out.bits_queued == 1000.0
    assert out.dropped_last_step == pytest.approx(150.0)
    assert out.dropped_bits_cum == pytest.approx(150.0)


def test_step_queue_caps_service():
    p = TrafficParams(data_packet_bits=100.0, control_packet_bits=40.0, q_max=1000.0)
    out = tr.step_queue(BufferState(bits_queued=10.0), 1, False, 1e9, p)
    assert out.bits_queued == 0.0
    assert out.served_last_step == pytest.approx(110.0)


@given(q=st.floats(0, 1000), arrivals=st.integers(0, 30), ho=st.booleans(),
       served=st.floats(0, 5000))
def test_step_queue_invariants(q, arrivals, ho, served):
    p = TrafficParams(data_packet_bits=100.0, control_packet_bits=40.0, q_max=1000.0)
    buf = BufferState(bits_queued=q)
    out = tr.step_queue(buf, arrivals, ho, served, p)
    assert 0.0 <= out.bits_queued <= p.q_max
    incoming = arrivals * 100.0 + (40.0 if ho else 0.0)
    assert out.bits_queued + out.served_last_step + out.dropped_last_step == pytest.approx(
        q + incoming, abs=1e-6)
    assert out.served_last_step <= q + incoming + 1e-9


def test_arrivals_poisson_moments():
    p = TrafficParams(lam=2.0)
    rng = np.random.default_rng(0)
    draws = np.array([tr.draw_arrivals(p, rng) for _ in range(50_000)])
    assert abs(draws.mean() - 2.0) < 0.03
    assert abs(draws.var() - 2.0) < 0.06


def test_params_validation():
    with pytest.raises(InvalidArgument):
        TrafficParams(lam=0)
    with pytest.raises(InvalidArgument):
        TrafficParams(q_max=1e3, data_packet_bits=5e5)
    with pytest.raises(InvalidArgument):
        TrafficParams(control_packet_bits=-1)


def test_service_and_queue_golden_values():
    assert tr.service_bits(15.0, TrafficParams(rrbs_per_uav=5)) == pytest.approx(3.6e6)
    assert tr.service_bits(1.0, TrafficParams(rrbs_per_uav=1)) == pytest.approx(180000.0)
    p = TrafficParams(data_packet_bits=1e6, control_packet_bits=0.5e6, q_max=2e7)
    out = tr.step_queue(BufferState(bits_queued=10e6), 2, True, 3e6, p)
    assert out.bits_queued == pytest.approx(9.5e6)
