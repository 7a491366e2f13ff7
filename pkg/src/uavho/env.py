"""Handover MDP: scenario, state layout, reward, episode loop, CHM baseline."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from . import traffic as tr
from .channel import BasestationSite, ChannelParams, RadioMap
from .errors import ConfigError, InvalidArgument, NotFound, OutOfBounds

FEATURE_NAMES = (
    "position", "altitude", "buffer_queue_size", "serving_bs",
    "rsrp_0", "rsrp_1", "rsrp_2", "rsrp_3",
    "rsrq_0", "rsrq_1", "rsrq_2", "rsrq_3",
)
N_FEATURES = len(FEATURE_NAMES)
POS, ALT, BUF, SERVING = 0, 1, 2, 3
RSRP0, RSRQ0 = 4, 8

RSRP_RANGE = (-140.0, -40.0)
RSRQ_RANGE = (-30.0, 30.0)
ALTITUDE_RANGE = (0.0, 500.0)


@dataclass(frozen=True)
class Grid:
    x_min: float = 0.0
    y_min: float = 0.0
    x_max: float = 2000.0
    y_max: float = 2000.0
    cell_size: float = 100.0

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min and self.cell_size > 0):
            raise InvalidArgument("degenerate grid")

    @property
    def n_cols(self) -> int:
        return int(math.ceil((self.x_max - self.x_min) / self.cell_size - 1e-9))

    @property
    def n_rows(self) -> int:
        return int(math.ceil((self.y_max - self.y_min) / self.cell_size - 1e-9))

    @property
    def n_cells(self) -> int:
        return self.n_cols * self.n_rows

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def cell_index(self, x: float, y: float) -> int:
        """Row-major cell index; the far edges belong to the last row/column."""
        if not self.contains(x, y):
            raise OutOfBounds(f"position ({x}, {y}) outside grid")
        col = min(int((x - self.x_min) // self.cell_size), self.n_cols - 1)
        row = min(int((y - self.y_min) // self.cell_size), self.n_rows - 1)
        return row * self.n_cols + col

    def cell_center(self, index: int) -> tuple[float, float]:
        row, col = divmod(int(index), self.n_cols)
        return (self.x_min + (col + 0.5) * self.cell_size,
                self.y_min + (row + 0.5) * self.cell_size)


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str = "random_walk"  # or "waypoints"
    waypoints: tuple = ()
    speed: float = 100.0  # m per step, waypoint mode
    turn_prob: float = 0.3  # random-walk direction change probability

    def __post_init__(self):
        if self.kind not in ("random_walk", "waypoints"):
            raise InvalidArgument(f"unknown trajectory kind {self.kind!r}")
        if self.kind == "waypoints" and len(self.waypoints) < 1:
            raise InvalidArgument("waypoint trajectory needs at least one waypoint")
        if not 0.0 <= self.turn_prob <= 1.0:
            raise InvalidArgument("turn_prob must be in [0, 1]")


@dataclass(frozen=True)
class ChmParams:
    hysteresis_db: float = 3.0
    time_to_trigger_steps: int = 1


def hex_layout(center=(1000.0, 1000.0), radius=700.0, height=25.0, **site_kw):
    """Seven sites: one in the centre and six on a ring."""
    sites = [BasestationSite(0, (center[0], center[1], height), **site_kw)]
    for k in range(6):
        ang = math.pi / 6 + k * math.pi / 3
        sites.append(BasestationSite(
            k + 1, (center[0] + radius * math.cos(ang),
                    center[1] + radius * math.sin(ang), height), **site_kw))
    return sites


@dataclass
class Scenario:
    bs_sites: list = field(default_factory=hex_layout)
    grid: Grid = field(default_factory=Grid)
    uav_altitude: float = 120.0
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    episode_steps: int = 200
    channel: ChannelParams = field(default_factory=ChannelParams)
    traffic: tr.TrafficParams = field(default_factory=tr.TrafficParams)
    reward_weights: tuple = (1.0, 1.0, 0.5, 0.5)
    rsrp_threshold: float = -95.0
    rsrq_threshold: float = 0.0
    num_candidates: int = 4
    ping_pong_window: int = 3
    chm: ChmParams = field(default_factory=ChmParams)
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        n = len(self.bs_sites)
        if self.num_candidates != 4:
            # the 12-feature state layout hard-wires four candidate slots
            raise ConfigError("scenario.num_candidates: only L = 4 fits the state layout")
        if n < self.num_candidates:
            raise ConfigError(
                f"scenario.bs_sites: {n} sites but num_candidates = {self.num_candidates}")
        ids = [b.id for b in self.bs_sites]
        if len(set(ids)) != len(ids):
            raise ConfigError("scenario.bs_sites: ids must be unique")
        if len(self.reward_weights) != 4 or any(w < 0 for w in self.reward_weights):
            raise ConfigError("scenario.reward_weights: need four non-negative weights")
        if not (math.isfinite(self.rsrp_threshold) and math.isfinite(self.rsrq_threshold)):
            raise ConfigError("scenario thresholds must be finite")
        if self.episode_steps < 1:
            raise ConfigError("scenario.episode_steps: must be >= 1")
        if not self.uav_altitude > 0:
            raise ConfigError("scenario.uav_altitude: must be > 0")
        if self.ping_pong_window < 1:
            raise ConfigError("scenario.ping_pong_window: must be >= 1")

    @cached_property
    def radio(self) -> RadioMap:
        return RadioMap(self.bs_sites, self.channel)


@dataclass(frozen=True)
class StateVector:
    values: np.ndarray
    candidate_bs_ids: tuple

    @property
    def serving_slot(self) -> int:
        return int(self.values[SERVING])

    @property
    def serving_bs_id(self) -> int:
        return self.candidate_bs_ids[self.serving_slot]

    @property
    def rsrp(self) -> np.ndarray:
        return self.values[RSRP0:RSRP0 + 4]

    @property
    def rsrq(self) -> np.ndarray:
        return self.values[RSRQ0:RSRQ0 + 4]

    def check(self, scenario: Optional[Scenario] = None) -> None:
        """Raise InvalidArgument unless the layout invariants hold."""
        v = self.values
        if v.shape != (N_FEATURES,) or not np.all(np.isfinite(v)):
            raise InvalidArgument("state must be 12 finite values")
        if len(self.candidate_bs_ids) != 4:
            raise InvalidArgument("state needs four candidate ids")
        s = v[SERVING]
        if s != int(s) or not 0 <= s < 4:
            raise InvalidArgument(f"serving slot {s} out of range")
        if v[POS] != int(v[POS]) or v[POS] < 0:
            raise InvalidArgument("position cell must be a non-negative integer")
        if scenario is not None:
            if v[POS] >= scenario.grid.n_cells:
                raise InvalidArgument("position cell beyond grid")
            if not 0 <= v[BUF] <= scenario.traffic.q_max:
                raise InvalidArgument("buffer outside [0, q_max]")
        r = self.rsrp
        for i in range(3):
            if r[i] < r[i + 1] or (r[i] == r[i + 1]
                                   and self.candidate_bs_ids[i] > self.candidate_bs_ids[i + 1]):
                raise InvalidArgument("candidate slots not sorted by RSRP")


class Normalizer:
    """Fixed per-feature affine map x -> (x - lo) / (hi - lo)."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if self.lo.shape != (N_FEATURES,) or np.any(self.hi <= self.lo):
            raise InvalidArgument("normalizer needs 12 increasing (lo, hi) pairs")
        self.scale = self.hi - self.lo

    @classmethod
    def for_scenario(cls, scenario: Scenario) -> "Normalizer":
        lo = np.zeros(N_FEATURES)
        hi = np.ones(N_FEATURES)
        hi[POS] = max(scenario.grid.n_cells - 1, 1)
        lo[ALT], hi[ALT] = ALTITUDE_RANGE
        hi[BUF] = scenario.traffic.q_max
        hi[SERVING] = scenario.num_candidates - 1
        lo[RSRP0:RSRP0 + 4], hi[RSRP0:RSRP0 + 4] = RSRP_RANGE
        lo[RSRQ0:RSRQ0 + 4], hi[RSRQ0:RSRQ0 + 4] = RSRQ_RANGE
        return cls(lo, hi)

    def normalize(self, x) -> np.ndarray:
        x = x.values if isinstance(x, StateVector) else np.asarray(x, dtype=np.float64)
        return (x - self.lo) / self.scale

    def denormalize(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.scale + self.lo

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        return cls(d["lo"], d["hi"])


def uav_position(scenario: Scenario, x: float, y: float) -> tuple[float, float, float]:
    return (float(x), float(y), float(scenario.uav_altitude))


def build_candidates(uav_pos, serving_bs_id: int, scenario: Scenario) -> list[int]:
    """Serving BS plus the L-1 strongest others, sorted by RSRP (ties: lower id)."""
    radio = scenario.radio
    L = scenario.num_candidates
    if len(radio.ids) < L:
        raise ConfigError(f"need at least {L} BSs, have {len(radio.ids)}")
    if serving_bs_id not in radio.index:
        raise NotFound(f"serving BS {serving_bs_id} not in scenario")
    rsrp_all = radio.measure(uav_pos)[0]
    order = sorted(range(len(radio.ids)), key=lambda i: (-rsrp_all[i], radio.ids[i]))
    serving_i = radio.index[serving_bs_id]
    others = [i for i in order if i != serving_i][:L - 1]
    chosen = sorted(others + [serving_i], key=lambda i: (-rsrp_all[i], radio.ids[i]))
    return [radio.ids[i] for i in chosen]


def assemble_state(uav_pos, buffer_bits: float, serving_bs_id: int,
                   scenario: Scenario) -> StateVector:
    cell = scenario.grid.cell_index(uav_pos[0], uav_pos[1])
    cands = build_candidates(uav_pos, serving_bs_id, scenario)
    rsrp_all, rsrq_all, _ = scenario.radio.measure(uav_pos)
    idx = [scenario.radio.index[b] for b in cands]
    v = np.empty(N_FEATURES)
    v[POS] = cell
    v[ALT] = uav_pos[2]
    v[BUF] = buffer_bits
    v[SERVING] = cands.index(serving_bs_id)
    v[RSRP0:RSRP0 + 4] = rsrp_all[idx]
    v[RSRQ0:RSRQ0 + 4] = rsrq_all[idx]
    return StateVector(v, tuple(cands))


def reward(next_buffer_bits: float, handover: bool, chosen_slot: int,
           state: StateVector, scenario: Scenario) -> float:
    """Buffer relief minus handover cost plus link-quality bonuses.

    The buffer is normalised by q_max before entering 1 / (1 + q).
    """
    w1, w2, w3, w4 = scenario.reward_weights
    q = next_buffer_bits / scenario.traffic.q_max
    r = w1 / (1.0 + q) - w2 * float(handover)
    r += w3 * float(state.rsrp[chosen_slot] >= scenario.rsrp_threshold)
    r += w4 * float(state.rsrq[chosen_slot] >= scenario.rsrq_threshold)
    return r


def detect_ping_pong(serving_history: Sequence[int], window_steps: int) -> bool:
    """True if the latest serving BS differs from the previous one and was
    itself serving within the preceding ``window_steps`` steps."""
    if window_steps < 1:
        raise InvalidArgument("window_steps must be >= 1")
    if len(serving_history) < 2 or serving_history[-1] == serving_history[-2]:
        return False
    lo = max(0, len(serving_history) - 1 - window_steps)
    return serving_history[-1] in serving_history[lo:-1]


@dataclass
class StepOutcome:
    next_state: StateVector
    reward: float
    handover: bool
    ping_pong: bool
    dropped_bits: float
    constraint_flags: tuple  # (rsrp threshold met, rsrq threshold met)
    served_bits: float = 0.0
    terminal: bool = False


@dataclass
class StepRecord:
    t: int
    state: StateVector
    action: int
    reward: float
    handover: bool
    ping_pong: bool
    q_bits: float  # buffer after the step
    dropped_bits: float
    next_state: StateVector
    terminal: bool
    served_bits: float
    constraint_flags: tuple


@dataclass
class EpisodeMetrics:
    handover_count: int
    ping_pong_count: int
    ping_pong_percentage: float
    mean_buffer_bits: float
    dropped_bits_total: float
    mean_reward: float
    episode_return: float = 0.0

    def as_row(self) -> dict:
        return {
            "handovers": self.handover_count,
            "ping_pongs": self.ping_pong_count,
            "ping_pong_pct": self.ping_pong_percentage,
            "mean_buffer_bits": self.mean_buffer_bits,
            "dropped_bits": self.dropped_bits_total,
            "mean_reward": self.mean_reward,
        }


class Trajectory:
    """Per-episode UAV path: persistent grid random walk or waypoint polyline."""

    MOVES = ((1, 0), (0, 1), (-1, 0), (0, -1))

    def __init__(self, scenario: Scenario, rng: np.random.Generator):
        self.scenario = scenario
        self.rng = rng
        spec = scenario.trajectory
        grid = scenario.grid
        if spec.kind == "random_walk":
            self.col = int(rng.integers(grid.n_cols))
            self.row = int(rng.integers(grid.n_rows))
            self.heading = int(rng.integers(4))
        else:
            self.points = [tuple(map(float, p[:2])) for p in spec.waypoints]
            for p in self.points:
                if not grid.contains(*p):
                    raise OutOfBounds(f"waypoint {p} outside grid")
            self.seg = 0
            self.xy = self.points[0]

    def position(self) -> tuple[float, float, float]:
        if self.scenario.trajectory.kind == "random_walk":
            x, y = self.scenario.grid.cell_center(self.row * self.scenario.grid.n_cols + self.col)
        else:
            x, y = self.xy
        return uav_position(self.scenario, x, y)

    def advance(self) -> None:
        spec = self.scenario.trajectory
        if spec.kind == "random_walk":
            grid = self.scenario.grid
            if self.rng.random() < spec.turn_prob:
                self.heading = int(self.rng.integers(4))
            dc, dr = self.MOVES[self.heading]
            if not 0 <= self.col + dc < grid.n_cols or not 0 <= self.row + dr < grid.n_rows:
                self.heading = (self.heading + 2) % 4
                dc, dr = -dc, -dr
            if 0 <= self.col + dc < grid.n_cols:
                self.col += dc
            if 0 <= self.row + dr < grid.n_rows:
                self.row += dr
            return
        remaining = spec.speed
        x, y = self.xy
        while remaining > 0 and self.seg + 1 < len(self.points):
            tx, ty = self.points[self.seg + 1]
            d = math.hypot(tx - x, ty - y)
            if d <= remaining:
                x, y = tx, ty
                remaining -= d
                self.seg += 1
            else:
                x += (tx - x) * remaining / d
                y += (ty - y) * remaining / d
                remaining = 0.0
        self.xy = (x, y)


def episode_rngs(seed: int, uav_id: int = 0):
    """Independent (trajectory, traffic, policy) generators for one episode."""
    ss = np.random.SeedSequence([int(seed), int(uav_id)])
    return [np.random.default_rng(s) for s in ss.spawn(3)]


class HandoverEnv:
    """One UAV flying one episode of ``scenario.episode_steps`` steps."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario

    def reset(self, seed: int, uav_id: int = 0) -> StateVector:
        self.traj_rng, self.traffic_rng, self.policy_rng = episode_rngs(seed, uav_id)
        self.trajectory = Trajectory(self.scenario, self.traj_rng)
        self.t = 0
        self.buffer = tr.BufferState()
        pos = self.trajectory.position()
        rsrp_all = self.scenario.radio.measure(pos)[0]
        ids = self.scenario.radio.ids
        best = min(range(len(ids)), key=lambda i: (-rsrp_all[i], ids[i]))
        self.serving_history = [ids[best]]
        self.state = assemble_state(pos, 0.0, ids[best], self.scenario)
        return self.state

    def step(self, action_slot: int) -> StepOutcome:
        sc = self.scenario
        if not (isinstance(action_slot, (int, np.integer)) and 0 <= action_slot < sc.num_candidates):
            raise InvalidArgument(f"invalid action slot {action_slot!r}")
        if self.t >= sc.episode_steps:
            raise InvalidArgument("episode already finished")
        state = self.state
        chosen = state.candidate_bs_ids[action_slot]
        handover = chosen != state.serving_bs_id
        self.serving_history.append(chosen)
        ping_pong = handover and detect_ping_pong(self.serving_history, sc.ping_pong_window)

        pos = self.trajectory.position()
        sinr = sc.radio.measure(pos)[2][sc.radio.index[chosen]]
        served = tr.service_bits(float(sinr), sc.traffic)
        arrivals = tr.draw_arrivals(sc.traffic, self.traffic_rng)
        self.buffer = tr.step_queue(self.buffer, arrivals, handover, served, sc.traffic)

        r = reward(self.buffer.bits_queued, handover, action_slot, state, sc)
        flags = (bool(state.rsrp[action_slot] >= sc.rsrp_threshold),
                 bool(state.rsrq[action_slot] >= sc.rsrq_threshold))

        self.trajectory.advance()
        self.t += 1
        self.state = assemble_state(self.trajectory.position(), self.buffer.bits_queued,
                                    chosen, sc)
        return StepOutcome(self.state, r, handover, ping_pong,
                           self.buffer.dropped_last_step, flags,
                           self.buffer.served_last_step,
                           terminal=self.t >= sc.episode_steps)


Policy = Callable[[StateVector], int]


class ChmPolicy:
    """A3-style baseline: switch to the strongest candidate once it beats the
    serving RSRP by the hysteresis for ``time_to_trigger_steps`` consecutive
    steps. Stateful; ``reset`` is called at the start of every episode."""

    def __init__(self, hysteresis_db: float = 3.0, time_to_trigger_steps: int = 1):
        if time_to_trigger_steps < 1:
            raise InvalidArgument("time_to_trigger_steps must be >= 1")
        self.hysteresis_db = hysteresis_db
        self.ttt = time_to_trigger_steps
        self.reset()

    def reset(self) -> None:
        self.target_id = None
        self.count = 0

    def __call__(self, state: StateVector) -> int:
        serving = state.serving_slot
        best = int(np.argmax(state.rsrp))
        if best == serving or not (state.rsrp[best] > state.rsrp[serving] + self.hysteresis_db):
            self.reset()
            return serving
        target = state.candidate_bs_ids[best]
        if target != self.target_id:
            self.target_id, self.count = target, 0
        self.count += 1
        if self.count >= self.ttt:
            self.reset()
            return best
        return serving


def chm_policy(state: StateVector, chm_params: ChmParams, memory: Optional[ChmPolicy] = None) -> int:
    """Functional wrapper; pass the same ``memory`` object across steps."""
    if memory is None:
        memory = ChmPolicy(chm_params.hysteresis_db, chm_params.time_to_trigger_steps)
    return memory(state)


def stay_policy(state: StateVector) -> int:
    return state.serving_slot


@dataclass
class EpisodeResult:
    metrics: EpisodeMetrics
    trace: list


def metrics_from_trace(trace: Sequence[StepRecord]) -> EpisodeMetrics:
    ho = sum(1 for r in trace if r.handover)
    pp = sum(1 for r in trace if r.ping_pong)
    n = max(len(trace), 1)
    ret = float(sum(r.reward for r in trace))
    return EpisodeMetrics(
        handover_count=ho,
        ping_pong_count=pp,
        ping_pong_percentage=100.0 * pp / max(ho, 1),
        mean_buffer_bits=float(sum(r.q_bits for r in trace)) / n,
        dropped_bits_total=float(sum(r.dropped_bits for r in trace)),
        mean_reward=ret / n,
        episode_return=ret,
    )


def objective_value(trace: Sequence[StepRecord]) -> float:
    """Sum of buffered bits plus the number of handovers over the episode."""
    return float(sum(r.q_bits for r in trace)) + sum(int(r.handover) for r in trace)


def run_episode(policy: Policy, scenario: Scenario, seed: int, uav_id: int = 0) -> EpisodeResult:
    env = HandoverEnv(scenario)
    state = env.reset(seed, uav_id)
    if hasattr(policy, "reset"):
        policy.reset()
    trace = []
    for t in range(scenario.episode_steps):
        action = int(policy(state))
        out = env.step(action)
        trace.append(StepRecord(t, state, action, out.reward, out.handover, out.ping_pong,
                                env.buffer.bits_queued, out.dropped_bits, out.next_state,
                                out.terminal, out.served_bits, out.constraint_flags))
        state = out.next_state
    return EpisodeResult(metrics_from_trace(trace), trace)


TRACE_COLUMNS = (["t", "cell", "action", "reward", "handover", "q_bits"]
                 + [f"rsrp_{i}" for i in range(4)] + [f"rsrq_{i}" for i in range(4)])


def write_trace_csv(trace: Sequence[StepRecord], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in trace:
        v = r.state.values
        w.writerow([r.t, int(v[POS]), r.action, repr(r.reward), int(r.handover), repr(r.q_bits)]
                   + [repr(float(x)) for x in v[RSRP0:RSRP0 + 4]]
                   + [repr(float(x)) for x in v[RSRQ0:RSRQ0 + 4]])
