"""Bi-level potential-based reward shaping for DQN with interpretable value estimators."""

from .bilevel import LoopConfig, RunRecord, build_value_dataset, run, transfer_run
from .dqn import AgentConfig, DQNAgent, ReplayBuffer, epsilon, greedy_value_table, select_action, train_epoch
from .estimator import EstimatorKind, EstimatorParams, attribution_report, fit, predict
from .shaping import Shaper, shaped_reward
from .taxi import (
    Action,
    EnvConfig,
    TaxiState,
    decode_state,
    encode_state,
    extract_features,
    reset,
    step,
    value_iteration_oracle,
)

__version__ = "0.1.0"
