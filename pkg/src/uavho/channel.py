"""Air-to-ground propagation and per-step radio measurements.

All powers are handled in the dB domain; the linear ratios of the received
power / quality definitions map onto plain dB sums and differences. LOS state
and shadowing are frozen per (shadowing cell, BS) through a seeded hash, so a
location always measures the same way for a given scenario seed.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgument, NotFound

SIGMA_NLOS_DB = 6.0
LOS_ALTITUDE_M = 100.0


@dataclass(frozen=True)
class BasestationSite:
    id: int
    position: tuple[float, float, float]
    tx_power: float = 46.0  # dBm
    antenna_gain: float = 0.0  # dBi
    carrier_freq: float = 2.0  # GHz

    def __post_init__(self):
        if not math.isfinite(self.tx_power):
            raise InvalidArgument(f"BS {self.id}: tx_power must be finite")
        if not self.carrier_freq > 0:
            raise InvalidArgument(f"BS {self.id}: carrier_freq must be > 0")
        if len(self.position) != 3:
            raise InvalidArgument(f"BS {self.id}: position must be 3D")


@dataclass(frozen=True)
class ChannelParams:
    d1: Optional[float] = None  # None -> derived from altitude
    p1: Optional[float] = None
    noise_power: float = -104.0  # dBm
    uav_antenna_gain: float = 0.0  # dBi
    uav_tx_power: float = 23.0  # dBm
    shadowing_grid_resolution: float = 100.0  # m
    seed: int = 0

    def __post_init__(self):
        if not math.isfinite(self.noise_power):
            raise InvalidArgument("noise_power must be finite")
        if not self.shadowing_grid_resolution > 0:
            raise InvalidArgument("shadowing_grid_resolution must be > 0")
        for name in ("d1", "p1"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise InvalidArgument(f"{name} must be > 0")

    def resolve_d1(self, h: float) -> float:
        if self.d1 is not None:
            return float(self.d1)
        return max(460.0 * math.log10(h) - 700.0, 18.0)

    def resolve_p1(self, h: float) -> float:
        if self.p1 is not None:
            return float(self.p1)
        p1 = 4300.0 * math.log10(h) - 3800.0
        if p1 <= 0:
            raise InvalidArgument(
                f"altitude {h} m gives non-positive p1; set channel.p1 explicitly")
        return p1


@dataclass(frozen=True)
class LinkMeasurement:
    bs_id: int
    rsrp: float  # dBm
    rsrq: float  # dB
    is_los: bool
    path_loss: float  # dB


def _check_finite(*values):
    for v in values:
        if not math.isfinite(v):
            raise InvalidArgument(f"non-finite argument: {v!r}")


def db_to_mw(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


def mw_to_db(x):
    return 10.0 * np.log10(x)


def los_probability(d_2d: float, h: float, params: ChannelParams) -> float:
    """Probability of a line-of-sight link at horizontal distance ``d_2d``.

    Uses the decaying-exponential form exp(-(d - d1)/p1); the result is
    clamped to [0, 1].
    """
    _check_finite(d_2d, h)
    if d_2d < 0 or h <= 0:
        raise InvalidArgument("need d_2d >= 0 and h > 0")
    if h > LOS_ALTITUDE_M:
        return 1.0
    d1 = params.resolve_d1(h)
    if d_2d <= d1:
        return 1.0
    p1 = params.resolve_p1(h)
    ratio = d1 / d_2d
    p = ratio + math.exp(-(d_2d - d1) / p1) * (1.0 - ratio)
    return min(1.0, max(0.0, p))


def _hash_unit(seed: int, cell, bs_id: int, stream: str) -> float:
    """Uniform in (0, 1) from a keyed hash; stable across processes."""
    key = f"{seed}|{cell}|{bs_id}|{stream}".encode()
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return (int.from_bytes(digest, "little") + 0.5) / 2.0**64


def _hash_normal(seed: int, cell, bs_id: int) -> float:
    u1 = _hash_unit(seed, cell, bs_id, "sf-a")
    u2 = _hash_unit(seed, cell, bs_id, "sf-b")
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def shadow_cell(uav_pos: Sequence[float], resolution: float) -> tuple[int, int]:
    return (int(math.floor(uav_pos[0] / resolution)),
            int(math.floor(uav_pos[1] / resolution)))


def distances(uav_pos, bs_pos) -> tuple[float, float]:
    dx = uav_pos[0] - bs_pos[0]
    dy = uav_pos[1] - bs_pos[1]
    dz = uav_pos[2] - bs_pos[2]
    d2 = math.hypot(dx, dy)
    return d2, math.sqrt(d2 * d2 + dz * dz)


def los_draw(uav_pos, bs: BasestationSite, params: ChannelParams) -> bool:
    d_2d, _ = distances(uav_pos, bs.position)
    p = los_probability(d_2d, uav_pos[2], params)
    if p >= 1.0:
        return True
    if p <= 0.0:
        return False
    cell = shadow_cell(uav_pos, params.shadowing_grid_resolution)
    return _hash_unit(params.seed, cell, bs.id, "los") < p


def path_loss(d_3d: float, h: float, f_c: float, los: bool) -> float:
    _check_finite(d_3d, h, f_c)
    if d_3d <= 0 or h <= 0 or f_c <= 0:
        raise InvalidArgument("path_loss needs d_3d > 0, h > 0, f_c > 0")
    if los:
        return 28.0 + 22.0 * math.log10(d_3d) + 20.0 * math.log10(f_c)
    return (15.0 + (46.0 - 7.0 * math.log10(h)) * math.log10(d_3d)
            + 20.0 * math.log10(f_c))


def shadow_sigma(h: float, los: bool) -> float:
    return 4.64 * math.exp(-0.00066 * h) if los else SIGMA_NLOS_DB


def shadow_fading(uav_cell, bs_id: int, h: float, los: bool, seed: int) -> float:
    """Zero-mean Gaussian shadowing draw in dB, frozen per (cell, BS, seed)."""
    if h <= 0:
        raise InvalidArgument("h must be > 0")
    return shadow_sigma(h, los) * _hash_normal(seed, uav_cell, bs_id)


def link_loss(uav_pos, bs: BasestationSite, params: ChannelParams):
    """(path_loss_db, shadowing_db, is_los) for one UAV/BS pair."""
    los = los_draw(uav_pos, bs, params)
    _, d_3d = distances(uav_pos, bs.position)
    h = uav_pos[2]
    pl = path_loss(d_3d, h, bs.carrier_freq, los)
    cell = shadow_cell(uav_pos, params.shadowing_grid_resolution)
    sf = shadow_fading(cell, bs.id, h, los, params.seed)
    return pl, sf, los


def rsrp(uav_pos, bs: BasestationSite, params: ChannelParams) -> float:
    pl, sf, _ = link_loss(uav_pos, bs, params)
    return rsrp_from_loss(bs, params, pl, sf)


def rsrp_from_loss(bs: BasestationSite, params: ChannelParams,
                   pl: float, sf: float = 0.0) -> float:
    return bs.tx_power + params.uav_antenna_gain + bs.antenna_gain - pl - sf


def interference(uav_pos, serving_bs_id: int, all_bs: Sequence[BasestationSite],
                 params: ChannelParams) -> float:
    """Co-channel interference in mW from every BS except the serving one."""
    if not any(b.id == serving_bs_id for b in all_bs):
        raise NotFound(f"serving BS {serving_bs_id} not in scenario")
    total = 0.0
    for b in all_bs:
        if b.id != serving_bs_id:
            total += float(db_to_mw(rsrp(uav_pos, b, params)))
    return total


def rsrq(rsrp_dbm: float, interference_mw: float, params: ChannelParams) -> float:
    denom = interference_mw + float(db_to_mw(params.noise_power))
    if not denom > 0:
        raise InvalidArgument("interference + noise must be > 0")
    return float(mw_to_db(float(db_to_mw(rsrp_dbm)) / denom))


def uplink_sinr(uav_pos, serving_bs: BasestationSite, params: ChannelParams) -> float:
    """Linear uplink SINR at the serving BS.

    Uplink resource blocks are orthogonal, so only noise limits the link.
    Shadowing of the link is included, same as for the downlink RSRP.
    """
    pl, sf, _ = link_loss(uav_pos, serving_bs, params)
    rx_dbm = (params.uav_tx_power + params.uav_antenna_gain
              + serving_bs.antenna_gain - pl - sf)
    return float(db_to_mw(rx_dbm - params.noise_power))


class RadioMap:
    """Cached per-position measurements for a fixed set of BSs.

    Equivalent to calling the module functions one by one; the cache only
    avoids recomputing hashes for cells that were already visited.
    """

    def __init__(self, bs_sites: Sequence[BasestationSite], params: ChannelParams):
        self.bs_sites = list(bs_sites)
        self.params = params
        self.ids = [b.id for b in self.bs_sites]
        if len(set(self.ids)) != len(self.ids):
            raise InvalidArgument("BS ids must be unique")
        self.index = {bid: i for i, bid in enumerate(self.ids)}
        self._cache: dict = {}

    def site(self, bs_id: int) -> BasestationSite:
        try:
            return self.bs_sites[self.index[bs_id]]
        except KeyError:
            raise NotFound(f"unknown BS id {bs_id}") from None

    def measure(self, uav_pos) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """RSRP (dBm), RSRQ (dB) and uplink SINR (linear) for every BS."""
        key = (float(uav_pos[0]), float(uav_pos[1]), float(uav_pos[2]))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        p = self.params
        n = len(self.bs_sites)
        rsrp_db = np.empty(n)
        sinr = np.empty(n)
        for i, bs in enumerate(self.bs_sites):
            pl, sf, _ = link_loss(key, bs, p)
            rsrp_db[i] = rsrp_from_loss(bs, p, pl, sf)
            rx = p.uav_tx_power + p.uav_antenna_gain + bs.antenna_gain - pl - sf
            sinr[i] = db_to_mw(rx - p.noise_power)
        rsrp_mw = db_to_mw(rsrp_db)
        noise_mw = db_to_mw(p.noise_power)
        rsrq_db = np.empty(n)
        for i in range(n):
            interf = float(np.sum(np.delete(rsrp_mw, i)))
            rsrq_db[i] = mw_to_db(rsrp_mw[i] / (interf + noise_mw))
        out = (rsrp_db, rsrq_db, sinr)
        if len(self._cache) < 200_000:
            self._cache[key] = out
        return out
