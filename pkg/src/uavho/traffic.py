"""Uplink buffer dynamics: Poisson arrivals, handover control packets, service."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class TrafficParams:
    lam: float = 2.0  # mean data packets per step
    data_packet_bits: float = 5e5
    control_packet_bits: float = 2e5
    q_max: float = 2e7
    rrb_bandwidth_hz: float = 180e3
    rrbs_per_uav: int = 5
    step_duration_s: float = 1.0

    def __post_init__(self):
        for name in ("lam", "data_packet_bits", "q_max", "rrb_bandwidth_hz",
                     "rrbs_per_uav", "step_duration_s"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be > 0")
        if self.control_packet_bits < 0:
            raise InvalidArgument("control_packet_bits must be >= 0")
        if not self.q_max > self.data_packet_bits:
            raise InvalidArgument("q_max must exceed data_packet_bits")


@dataclass(frozen=True)
class BufferState:
    bits_queued: float = 0.0
    dropped_bits_cum: float = 0.0
    arrivals_last_step: int = 0
    served_last_step: float = 0.0
    dropped_last_step: float = 0.0


def draw_arrivals(params: TrafficParams, rng: np.random.Generator) -> int:
    return int(rng.poisson(params.lam))


def service_bits(sinr: float, params: TrafficParams) -> float:
    """Shannon-rate bits delivered in one step over the allocated RRBs."""
    if sinr < 0 or not math.isfinite(sinr):
        raise InvalidArgument("sinr must be finite and >= 0")
    return (params.rrb_bandwidth_hz * params.rrbs_per_uav
            * math.log2(1.0 + sinr) * params.step_duration_s)


def step_queue(buf: BufferState, arrivals: int, handover: bool, served: float,
               params: TrafficParams) -> BufferState:
    """Advance the buffer by one step.

    Arrivals, the handover control packet and service are applied together.
    Service is capped at what is available; bits beyond q_max are dropped.
    """
    incoming = arrivals * params.data_packet_bits
    if handover:
        incoming += params.control_packet_bits
    available = buf.bits_queued + incoming
    served_eff = min(max(served, 0.0), available)
    q = available - served_eff
    dropped = max(q - params.q_max, 0.0)
    q -= dropped
    return replace(buf, bits_queued=q,
                   dropped_bits_cum=buf.dropped_bits_cum + dropped,
                   arrivals_last_step=int(arrivals),
                   served_last_step=served_eff,
                   dropped_last_step=dropped)
