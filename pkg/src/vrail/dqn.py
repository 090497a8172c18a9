"""DQN with experience replay, a target network and epsilon-greedy exploration.

One epoch is one episode.  The replay buffer keeps raw rewards and, by default,
batches are shaped with the current potential when sampled.
:func:`train_epoch` reports the sum of the environment's own rewards so
learning curves stay comparable across shapers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .net import Adam, NetworkParams, NetworkSpec, backward, clip_by_global_norm, forward, init_params
from .shaping import Shaper, shape_indexed
from .taxi import N_ACTIONS, EnvConfig, encode_state, feature_matrix, reset, transition_table


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.99
    lr: float = 1e-3
    batch_size: int = 64
    buffer_capacity: int = 50_000
    target_update_every: int = 10
    epsilon_floor: float = 0.01
    epsilon_decay: float = 0.995
    hidden_layers: tuple[int, ...] = (128, 128)
    grad_clip: float = 10.0
    # "epoch" decays epsilon once per episode, "step" once per environment step.
    epsilon_schedule: str = "epoch"
    # Shape sampled rewards with the current potential.  When False the reward
    # shaped at collection time is used, so the buffer mixes old potentials.
    reshape_at_sample: bool = True

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0 < self.epsilon_floor < 1:
            raise ValueError(f"epsilon_floor must lie in (0, 1), got {self.epsilon_floor}")
        if self.epsilon_schedule not in ("epoch", "step"):
            raise ValueError(f"epsilon_schedule must be 'epoch' or 'step', got {self.epsilon_schedule!r}")
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))


def epsilon(t: int, decay: float = 0.995, floor: float = 0.01) -> float:
    if t < 0:
        raise ValueError("t must be non-negative")
    return max(decay ** t, floor)


@dataclass(frozen=True)
class ReplayTransition:
    state_index: int
    action: int
    reward: float
    next_state_index: int
    terminal: bool
    raw_reward: Optional[float] = None


class ReplayBuffer:
    """Fixed-capacity ring of transitions; once full the oldest entry is overwritten."""

    def __init__(self, capacity: int = 50_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.state = np.zeros(capacity, dtype=np.int64)
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity)
        self.raw_reward = np.zeros(capacity)
        self.next_state = np.zeros(capacity, dtype=np.int64)
        self.terminal = np.zeros(capacity, dtype=bool)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, t: ReplayTransition) -> None:
        i = self._next
        self.state[i] = t.state_index
        self.action[i] = t.action
        self.reward[i] = t.reward
        self.raw_reward[i] = t.reward if t.raw_reward is None else t.raw_reward
        self.next_state[i] = t.next_state_index
        self.terminal[i] = t.terminal
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _slot(self, k: int) -> int:
        """Ring position of the k-th oldest stored transition."""
        start = self._next if self._size == self.capacity else 0
        return (start + k) % self.capacity

    def __getitem__(self, k: int) -> ReplayTransition:
        if not -self._size <= k < self._size:
            raise IndexError(k)
        i = self._slot(k % self._size)
        return ReplayTransition(int(self.state[i]), int(self.action[i]), float(self.reward[i]),
                                int(self.next_state[i]), bool(self.terminal[i]), float(self.raw_reward[i]))

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self._size, size=batch_size)


def select_action(q_row: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy choice from one row of Q-values; ties go to the lowest index."""
    if rng.random() < eps:
        return int(rng.integers(len(q_row)))
    return int(np.argmax(q_row))


class TrainingError(RuntimeError):
    pass


@dataclass
class DQNAgent:
    config: AgentConfig
    env_config: EnvConfig
    online: NetworkParams
    target: NetworkParams
    optimizer: Adam
    buffer: ReplayBuffer
    rng: np.random.Generator
    total_steps: int = 0
    gradient_steps: int = 0
    last_loss: float = float("nan")
    features: np.ndarray = field(init=False, repr=False)
    # max_a Q_target(s, a) for every state; the target net only changes on sync.
    target_values: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.features = feature_matrix(self.env_config)
        self.target_values = greedy_value_table(self.target, self.env_config)

    @classmethod
    def create(cls, config: AgentConfig = AgentConfig(), env_config: EnvConfig = EnvConfig(),
               seed: "int | np.random.Generator" = 0) -> "DQNAgent":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        spec = NetworkSpec(env_config.feature_dim, config.hidden_layers, N_ACTIONS)
        online = init_params(spec, rng)
        return cls(config, env_config, online, online.copy(), Adam(config.lr),
                   ReplayBuffer(config.buffer_capacity), rng)

    def q_row(self, state_index: int) -> np.ndarray:
        return forward(self.online, self.features[state_index])

    def gradient_step(self, shaper: Shaper, phi: Optional[np.ndarray] = None) -> float:
        """One Adam step on the mean squared TD error of a sampled batch; returns the loss."""
        cfg = self.config
        buf = self.buffer
        idx = buf.sample_indices(cfg.batch_size, self.rng)
        s, a, s2, term = buf.state[idx], buf.action[idx], buf.next_state[idx], buf.terminal[idx]
        if cfg.reshape_at_sample:
            r = shape_indexed(buf.raw_reward[idx], s, s2, term, phi, shaper.gamma)
        else:
            r = buf.reward[idx]
        q, acts = forward(self.online, self.features[s], keep_activations=True)
        target = r + cfg.gamma * self.target_values[s2] * (~term)
        rows = np.arange(len(idx))
        td = q[rows, a] - target
        loss = float(np.mean(td * td))
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite TD loss after {self.gradient_steps} gradient steps")
        grad_q = np.zeros_like(q)
        grad_q[rows, a] = 2.0 * td / len(idx)
        grads = backward(self.online, None, grad_q, acts)
        clip_by_global_norm(grads, cfg.grad_clip)
        self.optimizer.step(self.online, grads)
        self.gradient_steps += 1
        self.last_loss = loss
        return loss

    def sync_target(self) -> None:
        self.target.assign(self.online)
        self.target_values = greedy_value_table(self.target, self.env_config)


def greedy_value_table(qnet: NetworkParams, env_config: EnvConfig = EnvConfig()) -> np.ndarray:
    """``max_a Q(s, a)`` for all 500 encoded states."""
    return forward(qnet, feature_matrix(env_config)).max(axis=1)


def train_epoch(agent: DQNAgent, shaper: Shaper, epoch_index: int, *,
                policy: Optional[np.ndarray] = None, visits: Optional[np.ndarray] = None) -> float:
    """Run one training episode and return its unshaped reward.

    ``policy`` (an array of 500 actions) replaces the epsilon-greedy choice when
    given; ``visits`` accumulates per-state visit counts.
    """
    cfg = agent.config
    env_cfg = agent.env_config
    table = transition_table(env_cfg)
    phi = None if shaper.is_identity else shaper.state_potentials(env_cfg)
    s = encode_state(reset(agent.rng))
    total = 0.0
    for _ in range(env_cfg.max_episode_steps):
        if visits is not None:
            visits[s] += 1
        t = epoch_index if cfg.epsilon_schedule == "epoch" else agent.total_steps
        eps = epsilon(t, cfg.epsilon_decay, cfg.epsilon_floor)
        if policy is not None:
            a = int(policy[s])
        else:
            a = select_action(agent.q_row(s), eps, agent.rng)
        s2 = int(table.next_index[s, a])
        r = float(table.reward[s, a])
        term = bool(table.terminal[s, a])
        r_shaped = shape_indexed(r, s, s2, term, phi, shaper.gamma)
        agent.buffer.push(ReplayTransition(s, a, float(r_shaped), s2, term, r))
        agent.total_steps += 1
        if len(agent.buffer) >= cfg.batch_size:
            agent.gradient_step(shaper, phi)
        total += r
        s = s2
        if term:
            break
    if (epoch_index + 1) % cfg.target_update_every == 0:
        agent.sync_target()
    return total
