"""Plain DQN: replay buffer, epsilon-greedy exploration, target network."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import nn
from .env import (N_FEATURES, HandoverEnv, Normalizer, Scenario, StateVector,
                  StepRecord, metrics_from_trace)
from .errors import InvalidArgument, TrainingDivergence

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    episodes: int = 1500
    batch_size: int = 64
    gamma: float = 0.95
    target_update_every: int = 200
    epsilon_start: float = 1.0
    epsilon_end: float = 0.01
    epsilon_decay: float = 0.997
    alpha0: float = 1e-3
    eta: float = 0.002
    buffer_capacity: int = 50_000
    eval_every: int = 0
    hidden: tuple = (64, 64)
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidArgument("gamma must be in [0, 1)")
        for name in ("epsilon_start", "epsilon_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidArgument(f"{name} must be in [0, 1]")
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise InvalidArgument("epsilon_decay must be in (0, 1]")
        if not self.alpha0 > 0 or self.eta < 0:
            raise InvalidArgument("need alpha0 > 0 and eta >= 0")
        if self.episodes < 0 or self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise InvalidArgument("bad episodes / batch_size / buffer_capacity")
        if self.target_update_every < 1:
            raise InvalidArgument("target_update_every must be >= 1")


@dataclass
class Transition:
    state: np.ndarray  # normalized
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray


def as_batch(transitions: Sequence[Transition]) -> Batch:
    return Batch(np.array([t.state for t in transitions], dtype=np.float64),
                 np.array([t.action for t in transitions], dtype=np.int64),
                 np.array([t.reward for t in transitions], dtype=np.float64),
                 np.array([t.next_state for t in transitions], dtype=np.float64),
                 np.array([t.terminal for t in transitions], dtype=bool))


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, n_features: int = N_FEATURES, seed: int = 0):
        if capacity < 1:
            raise InvalidArgument("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, n_features))
        self.next_states = np.zeros((capacity, n_features))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.terminals = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.head = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        i = self.head
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self.terminals[i] = t.terminal
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def transitions(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        start = self.head if self.size == self.capacity else 0
        order = [(start + k) % self.capacity for k in range(self.size)]
        return [Transition(self.states[i].copy(), int(self.actions[i]), float(self.rewards[i]),
                           self.next_states[i].copy(), bool(self.terminals[i])) for i in order]

    def sample(self, batch_size: int) -> Batch:
        if batch_size > self.size:
            raise InvalidArgument("not enough transitions to sample")
        idx = self.rng.choice(self.size, size=batch_size, replace=False)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.terminals[idx])


def epsilon_greedy(q_values, epsilon: float, rng: np.random.Generator) -> int:
    """Greedy slot with probability 1 - eps, each other slot with eps / (L - 1)."""
    q = np.asarray(q_values)
    n = q.shape[0]
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidArgument("epsilon must be in [0, 1]")
    if n < 2 and epsilon > 0:
        raise InvalidArgument("need at least two actions to explore")
    greedy = int(np.argmax(q))
    if epsilon == 0.0 or rng.random() >= epsilon:
        return greedy
    other = int(rng.integers(n - 1))
    return other if other < greedy else other + 1


def action_probabilities(q_values, epsilon: float) -> np.ndarray:
    q = np.asarray(q_values)
    n = q.shape[0]
    p = np.full(n, epsilon / (n - 1))
    p[int(np.argmax(q))] = 1.0 - epsilon
    return p


def bellman_target(transition: Transition, target_model: nn.Mlp, gamma: float) -> float:
    if transition.terminal:
        return float(transition.reward)
    return float(transition.reward + gamma * np.max(target_model(transition.next_state)))


def train_batch(main: nn.Mlp, target: nn.Mlp, batch, gamma: float, alpha: float) -> float:
    """One SGD step on the mean squared TD error; returns the pre-update loss."""
    if not isinstance(batch, Batch):
        batch = as_batch(batch)
    n = len(batch.actions)
    if n == 0:
        raise InvalidArgument("empty batch")
    q_next = target(batch.next_states).max(axis=1)
    y = batch.rewards + gamma * np.where(batch.terminals, 0.0, q_next)
    q, trace = nn.forward(main, batch.states)
    rows = np.arange(n)
    delta = q[rows, batch.actions] - y
    loss = float(np.mean(delta * delta))
    if not math.isfinite(loss):
        raise TrainingDivergence(f"non-finite loss {loss}")
    grad_out = np.zeros_like(q)
    grad_out[rows, batch.actions] = 2.0 * delta / n
    nn.sgd_update(main, nn.backward(main, trace, grad_out), alpha)
    return loss


def learning_rate(alpha0: float, eta: float, episode_index: int) -> float:
    if episode_index < 0:
        raise InvalidArgument("episode_index must be >= 0")
    return alpha0 / (1.0 + eta * episode_index)


def epsilon_schedule(config: TrainConfig, episode_index: int) -> float:
    return max(config.epsilon_end, config.epsilon_start * config.epsilon_decay ** episode_index)


def derive_seed(seed: int, stream: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(stream), int(index)]).generate_state(1)[0])


TRAIN_STREAM, EVAL_STREAM, BACKGROUND_STREAM, EXPLAIN_STREAM = 1, 2, 3, 4


def make_model(config: TrainConfig, n_actions: int = 4) -> nn.Mlp:
    dims = [N_FEATURES, *config.hidden, n_actions]
    return nn.Mlp(dims, seed=derive_seed(config.seed, 0, 0))


class GreedyPolicy:
    """argmax-Q policy over raw StateVectors (normalisation applied inside)."""

    def __init__(self, model: nn.Mlp, normalizer: Normalizer):
        self.model = model
        self.normalizer = normalizer

    def q_values(self, state: StateVector) -> np.ndarray:
        return self.model(self.normalizer.normalize(state))

    def __call__(self, state: StateVector) -> int:
        return int(np.argmax(self.q_values(state)))


def greedy_policy(model: nn.Mlp, normalizer: Normalizer) -> GreedyPolicy:
    return GreedyPolicy(model, normalizer)


@dataclass
class EpisodeLog:
    episode: int
    episode_return: float
    handovers: int
    ping_pongs: int
    epsilon: float
    alpha: float
    loss: float


@dataclass
class TrainResult:
    model: nn.Mlp
    normalizer: Normalizer
    log: list = field(default_factory=list)
    gradient_steps: int = 0


def train(scenario: Scenario, config: TrainConfig, progress=None) -> TrainResult:
    """Run ``config.episodes`` episodes of epsilon-greedy interaction and
    learning; fully determined by ``config.seed``."""
    normalizer = Normalizer.for_scenario(scenario)
    main = make_model(config, scenario.num_candidates)
    target = main.copy()
    result = TrainResult(main, normalizer)
    if config.episodes == 0:
        return result
    replay = ReplayBuffer(config.buffer_capacity, seed=derive_seed(config.seed, 0, 1))
    act_rng = np.random.default_rng(derive_seed(config.seed, 0, 2))
    env = HandoverEnv(scenario)
    steps = 0
    for ep in range(config.episodes):
        eps = epsilon_schedule(config, ep)
        alpha = learning_rate(config.alpha0, config.eta, ep)
        state = env.reset(derive_seed(config.seed, TRAIN_STREAM, ep))
        s = normalizer.normalize(state)
        ret, ho, pp, losses = 0.0, 0, 0, []
        for _ in range(scenario.episode_steps):
            a = epsilon_greedy(main(s), eps, act_rng)
            out = env.step(a)
            s2 = normalizer.normalize(out.next_state)
            replay.push(Transition(s, a, out.reward, s2, out.terminal))
            s = s2
            ret += out.reward
            ho += out.handover
            pp += out.ping_pong
            if len(replay) >= config.batch_size:
                try:
                    losses.append(train_batch(main, target, replay.sample(config.batch_size),
                                              config.gamma, alpha))
                except TrainingDivergence as exc:
                    raise TrainingDivergence(f"episode {ep}: {exc}") from exc
                steps += 1
                if steps % config.target_update_every == 0:
                    nn.clone_into(main, target)
        entry = EpisodeLog(ep, ret, ho, pp, eps, alpha,
                           float(np.mean(losses)) if losses else float("nan"))
        result.log.append(entry)
        if progress is not None:
            progress(entry)
        elif ep % 100 == 0:
            log.info("episode %d return %.2f handovers %d eps %.3f", ep, ret, ho, eps)
    result.gradient_steps = steps
    return result


LOG_COLUMNS = ("episode", "return", "handovers", "ping_pongs", "epsilon", "alpha", "loss")


def write_training_log(entries: Sequence[EpisodeLog], fh) -> None:
    fh.write(",".join(LOG_COLUMNS) + "\n")
    for e in entries:
        fh.write(f"{e.episode},{e.episode_return!r},{e.handovers},{e.ping_pongs},"
                 f"{e.epsilon!r},{e.alpha!r},{e.loss!r}\n")


def checkpoint_dict(model: nn.Mlp, normalizer: Normalizer, config: TrainConfig) -> dict:
    return {
        "checkpoint_version": CHECKPOINT_VERSION,
        "model": model.to_dict(),
        "normalizer": normalizer.to_dict(),
        "train_config": asdict(config) | {"hidden": list(config.hidden)},
    }


def save_checkpoint(path, model: nn.Mlp, normalizer: Normalizer, config: TrainConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_dict(model, normalizer, config), fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[nn.Mlp, Normalizer, dict]:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if d.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise InvalidArgument(f"{path}: unsupported checkpoint version")
    model = nn.Mlp.from_dict(d["model"])
    if model.n_inputs != N_FEATURES:
        raise InvalidArgument(f"{path}: model expects {model.n_inputs} features, not {N_FEATURES}")
    return model, Normalizer.from_dict(d["normalizer"]), d["train_config"]
