"""Alternating RL / regression loop.

Each outer cycle trains the DQN for ``rl_epochs_per_cycle`` episodes with the
current shaper, then regresses the network's state values onto the state
features and installs the fitted estimator as the next shaping potential.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dqn import AgentConfig, DQNAgent, TrainingError, greedy_value_table, train_epoch
from .estimator import EstimatorKind, EstimatorParams, fit
from .net import NetworkParams
from .shaping import Shaper
from .taxi import N_STATES, EnvConfig, feature_matrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoopConfig:
    outer_cycles: int = 20
    rl_epochs_per_cycle: int = 100
    dl_epochs: int = 50
    dl_lr: float = 1e-2
    estimator_kind: Optional[str] = None  # None, "linear" or "quadratic"
    warm_start: bool = True
    # Regress on states visited so far instead of all 500.
    visited_only: bool = False
    # Read state values from the target network instead of the online one.
    values_from_target: bool = False

    def __post_init__(self):
        if self.estimator_kind is not None:
            object.__setattr__(self, "estimator_kind", EstimatorKind(self.estimator_kind).value)
        if self.outer_cycles < 1 or self.rl_epochs_per_cycle < 1:
            raise ValueError("outer_cycles and rl_epochs_per_cycle must be >= 1")

    @property
    def total_epochs(self) -> int:
        return self.outer_cycles * self.rl_epochs_per_cycle


@dataclass
class RunRecord:
    seed: int
    model: str
    rewards: list[float] = field(default_factory=list)
    snapshots: list[EstimatorParams] = field(default_factory=list)
    converged: Optional[bool] = None
    convergence_epoch: Optional[int] = None
    error: Optional[str] = None
    final_qnet: Optional[NetworkParams] = field(default=None, repr=False, compare=False)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "model": self.model,
            "rewards": self.rewards,
            "snapshots": [p.to_json() for p in self.snapshots],
            "converged": self.converged,
            "convergence_epoch": self.convergence_epoch,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, data: dict) -> "RunRecord":
        return cls(
            seed=data["seed"],
            model=data["model"],
            rewards=[float(r) for r in data["rewards"]],
            snapshots=[EstimatorParams.from_json(p) for p in data["snapshots"]],
            converged=data.get("converged"),
            convergence_epoch=data.get("convergence_epoch"),
            error=data.get("error"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "RunRecord":
        return cls.from_json(json.loads(Path(path).read_text()))


def build_value_dataset(qnet: NetworkParams, env_config: EnvConfig = EnvConfig(),
                        mask: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """Features and ``max_a Q(s, a)`` targets for every state (or the states selected by ``mask``)."""
    X = feature_matrix(env_config)
    y = greedy_value_table(qnet, env_config)
    if mask is not None:
        return X[mask], y[mask]
    return np.array(X), y


def _model_name(kind: Optional[str]) -> str:
    return {None: "dqn", "linear": "linear", "quadratic": "quadratic"}[kind]


def run(loop_config: LoopConfig = LoopConfig(), agent_config: AgentConfig = AgentConfig(),
        env_config: EnvConfig = EnvConfig(), seed: int = 0) -> RunRecord:
    """One seeded bi-level run; plain DQN when ``estimator_kind`` is None.

    A non-finite loss ends the run early; the partial record carries the error.
    """
    kind = loop_config.estimator_kind
    agent = DQNAgent.create(agent_config, env_config, seed)
    shaper = Shaper(None, agent_config.gamma)
    record = RunRecord(seed=seed, model=_model_name(kind))
    visits = np.zeros(N_STATES, dtype=np.int64) if loop_config.visited_only else None
    params: Optional[EstimatorParams] = None
    try:
        for cycle in range(loop_config.outer_cycles):
            for e in range(loop_config.rl_epochs_per_cycle):
                epoch = cycle * loop_config.rl_epochs_per_cycle + e
                record.rewards.append(train_epoch(agent, shaper, epoch, visits=visits))
            if kind is None:
                continue
            qnet = agent.target if loop_config.values_from_target else agent.online
            mask = visits > 0 if visits is not None else None
            X, y = build_value_dataset(qnet, env_config, mask)
            init = params if loop_config.warm_start else None
            params = fit(X, y, kind, loop_config.dl_epochs, loop_config.dl_lr, init=init).params
            record.snapshots.append(params.copy())
            shaper = Shaper(params, agent_config.gamma)
            log.debug("seed %d cycle %d: mean reward %.2f", seed, cycle,
                      np.mean(record.rewards[-loop_config.rl_epochs_per_cycle:]))
    except (TrainingError, FloatingPointError) as exc:
        record.error = str(exc)
        log.error("seed %d aborted after %d epochs: %s", seed, len(record.rewards), exc)
    record.final_qnet = agent.online
    return record


def transfer_run(frozen_params: EstimatorParams, agent_config: AgentConfig = AgentConfig(),
                 env_config: EnvConfig = EnvConfig(), seed: int = 0, total_epochs: int = 2000) -> RunRecord:
    """Plain DQN shaped by a fixed, pretrained potential."""
    if frozen_params.dim != env_config.feature_dim:
        raise ValueError(f"frozen potential has dimension {frozen_params.dim}, "
                         f"environment features have {env_config.feature_dim}")
    agent = DQNAgent.create(agent_config, env_config, seed)
    shaper = Shaper(frozen_params, agent_config.gamma)
    record = RunRecord(seed=seed, model="dqn+frozen")
    try:
        for epoch in range(total_epochs):
            record.rewards.append(train_epoch(agent, shaper, epoch))
    except (TrainingError, FloatingPointError) as exc:
        record.error = str(exc)
        log.error("transfer seed %d aborted after %d epochs: %s", seed, len(record.rewards), exc)
    record.final_qnet = agent.online
    return record


def config_to_dict(*configs) -> dict:
    return {type(c).__name__: asdict(c) for c in configs}
