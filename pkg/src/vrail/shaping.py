"""Potential-based reward shaping with a learned value estimator as the potential."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .estimator import EstimatorParams, predict
from .taxi import EnvConfig, feature_matrix


@dataclass(frozen=True)
class Shaper:
    """``potential=None`` is the identity shaper used by plain DQN."""

    potential: Optional[EstimatorParams] = None
    gamma: float = 0.99

    @property
    def is_identity(self) -> bool:
        return self.potential is None

    def state_potentials(self, cfg: EnvConfig = EnvConfig()) -> np.ndarray:
        """Potential of every encoded state, shape ``(500,)``."""
        if self.potential is None:
            return np.zeros(feature_matrix(cfg).shape[0])
        return np.asarray(predict(self.potential, feature_matrix(cfg)))


def shaped_reward(shaper: Shaper, r: float, x_s: np.ndarray, x_s_next: np.ndarray, terminal: bool) -> float:
    """``r + gamma * phi(s') - phi(s)``, with the potential of a terminal successor fixed at 0."""
    if shaper.potential is None:
        return r
    phi_s = predict(shaper.potential, x_s)
    phi_next = 0.0 if terminal else predict(shaper.potential, x_s_next)
    return r + shaper.gamma * phi_next - phi_s


def shape_indexed(r, s, s_next, terminal, phi: Optional[np.ndarray], gamma: float):
    """Vectorised :func:`shaped_reward` over encoded state indices and a potential table."""
    if phi is None:
        return r
    return r + gamma * phi[s_next] * (1.0 - np.asarray(terminal, dtype=float)) - phi[s]
