"""Deterministic Taxi-v3 compatible gridworld.

The map is the stock 5x5 layout::

    +---------+
    |R: | : :G|
    | : | : : |
    | : : : : |
    | | : | : |
    |Y| : |B: |
    +---------+

States are encoded exactly like Taxi-v3,
``((taxi_row * 5 + taxi_col) * 5 + passenger_loc) * 4 + destination``, with
passenger location 4 meaning "in the taxi".  All environment operations are pure
functions of ``(state, action, config)``; :func:`transition_table` caches the
full 500 x 6 table for the training loops.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import NamedTuple, Optional

import numpy as np

N_ROWS = 5
N_COLS = 5
N_LOCS = 4
N_STATES = 500
N_ACTIONS = 6
N_BASE_FEATURES = 19
N_WALL_FEATURES = 4

LANDMARKS = ((0, 0), (0, 4), (4, 0), (4, 3))
LANDMARK_NAMES = ("R", "G", "Y", "B")
IN_TAXI = 4

STEP_REWARD = -1.0
ILLEGAL_REWARD = -10.0
SUCCESS_REWARD = 20.0

# (row, col) pairs with a wall on their east side.
_EAST_WALLS = frozenset({(0, 1), (1, 1), (3, 0), (4, 0), (3, 2), (4, 2)})


class InvalidStateError(ValueError):
    """Raised for out-of-range state fields or indices."""


class Action(IntEnum):
    SOUTH = 0
    NORTH = 1
    EAST = 2
    WEST = 3
    PICKUP = 4
    DROPOFF = 5


class TaxiState(NamedTuple):
    taxi_row: int
    taxi_col: int
    passenger_loc: int
    destination: int


class StepOutcome(NamedTuple):
    next_state: TaxiState
    reward: float
    terminal: bool


@dataclass(frozen=True)
class EnvConfig:
    sparse_rewards: bool = False
    wall_features: bool = False
    max_episode_steps: int = 200

    @property
    def feature_dim(self) -> int:
        return N_BASE_FEATURES + (N_WALL_FEATURES if self.wall_features else 0)


def feature_names(cfg: EnvConfig = EnvConfig()) -> list[str]:
    """Human-readable labels for each feature index, e.g. ``"P: T"`` for index 14."""
    names = [f"row: {i}" for i in range(N_ROWS)]
    names += [f"col: {i}" for i in range(N_COLS)]
    names += [f"P: {n}" for n in LANDMARK_NAMES] + ["P: T"]
    names += [f"D: {n}" for n in LANDMARK_NAMES]
    if cfg.wall_features:
        names += ["wall: N", "wall: S", "wall: E", "wall: W"]
    return names


def _check_state(s: TaxiState) -> None:
    row, col, pas, dest = s
    if not (0 <= row < N_ROWS and 0 <= col < N_COLS and 0 <= pas <= IN_TAXI and 0 <= dest < N_LOCS):
        raise InvalidStateError(f"state fields out of range: {tuple(s)}")


def encode_state(s: TaxiState) -> int:
    _check_state(s)
    row, col, pas, dest = s
    return ((row * N_COLS + col) * 5 + pas) * N_LOCS + dest


def decode_state(index: int) -> TaxiState:
    if not 0 <= index < N_STATES:
        raise InvalidStateError(f"state index {index} outside 0..{N_STATES - 1}")
    index = int(index)
    dest = index % N_LOCS
    index //= N_LOCS
    pas = index % 5
    index //= 5
    return TaxiState(index // N_COLS, index % N_COLS, pas, dest)


def blocked_moves(row: int, col: int) -> tuple[bool, bool, bool, bool]:
    """Whether moving (N, S, E, W) from ``(row, col)`` is blocked by the border or a wall."""
    north = row == 0
    south = row == N_ROWS - 1
    east = col == N_COLS - 1 or (row, col) in _EAST_WALLS
    west = col == 0 or (row, col - 1) in _EAST_WALLS
    return north, south, east, west


def step(s: TaxiState, a: int, cfg: EnvConfig = EnvConfig()) -> StepOutcome:
    """Apply action ``a`` in state ``s``.

    Dropping the passenger at a landmark other than the destination leaves the
    passenger there for the usual step reward, as Taxi-v3 does.  With
    ``sparse_rewards`` the per-step reward becomes 0; the -10 and +20 stay.
    """
    _check_state(s)
    a = Action(a)
    row, col, pas, dest = s
    step_reward = 0.0 if cfg.sparse_rewards else STEP_REWARD
    reward = step_reward
    terminal = False
    north, south, east, west = blocked_moves(row, col)

    if a == Action.SOUTH and not south:
        row += 1
    elif a == Action.NORTH and not north:
        row -= 1
    elif a == Action.EAST and not east:
        col += 1
    elif a == Action.WEST and not west:
        col -= 1
    elif a == Action.PICKUP:
        if pas < IN_TAXI and (row, col) == LANDMARKS[pas]:
            pas = IN_TAXI
        else:
            reward = ILLEGAL_REWARD
    elif a == Action.DROPOFF:
        if pas == IN_TAXI and (row, col) == LANDMARKS[dest]:
            pas = dest
            reward = SUCCESS_REWARD
            terminal = True
        elif pas == IN_TAXI and (row, col) in LANDMARKS:
            pas = LANDMARKS.index((row, col))
        else:
            reward = ILLEGAL_REWARD
    return StepOutcome(TaxiState(row, col, pas, dest), reward, terminal)


@lru_cache(maxsize=None)
def valid_start_indices() -> np.ndarray:
    """The 300 start states: passenger waiting at a landmark other than the destination."""
    starts = [
        i for i in range(N_STATES)
        if (s := decode_state(i)).passenger_loc != IN_TAXI and s.passenger_loc != s.destination
    ]
    out = np.array(starts, dtype=np.int64)
    out.setflags(write=False)
    return out


def reset(rng_seed: "int | np.random.Generator | None" = None) -> TaxiState:
    """Draw a start state uniformly; an integer seed gives a deterministic draw."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return decode_state(int(rng.choice(valid_start_indices())))


def extract_features(s: TaxiState, cfg: EnvConfig = EnvConfig()) -> np.ndarray:
    _check_state(s)
    row, col, pas, dest = s
    x = np.zeros(cfg.feature_dim)
    x[row] = 1.0
    x[5 + col] = 1.0
    x[10 + pas] = 1.0
    x[15 + dest] = 1.0
    if cfg.wall_features:
        x[N_BASE_FEATURES:] = blocked_moves(row, col)
    return x


@lru_cache(maxsize=None)
def feature_matrix(cfg: EnvConfig = EnvConfig()) -> np.ndarray:
    """Features of every encoded state, shape ``(500, feature_dim)``; read-only."""
    X = np.stack([extract_features(decode_state(i), cfg) for i in range(N_STATES)])
    X.setflags(write=False)
    return X


class TransitionTable(NamedTuple):
    next_index: np.ndarray  # (500, 6) int
    reward: np.ndarray  # (500, 6) float
    terminal: np.ndarray  # (500, 6) bool


@lru_cache(maxsize=None)
def transition_table(cfg: EnvConfig = EnvConfig()) -> TransitionTable:
    nxt = np.zeros((N_STATES, N_ACTIONS), dtype=np.int64)
    rew = np.zeros((N_STATES, N_ACTIONS))
    term = np.zeros((N_STATES, N_ACTIONS), dtype=bool)
    for i in range(N_STATES):
        s = decode_state(i)
        for a in range(N_ACTIONS):
            out = step(s, a, cfg)
            nxt[i, a] = encode_state(out.next_state)
            rew[i, a] = out.reward
            term[i, a] = out.terminal
    for arr in (nxt, rew, term):
        arr.setflags(write=False)
    return TransitionTable(nxt, rew, term)


def dump_transitions(cfg: EnvConfig = EnvConfig()) -> str:
    """The full transition table as CSV text (state_index, action, next_index, reward, terminal)."""
    table = transition_table(cfg)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["state_index", "action", "next_index", "reward", "terminal"])
    for i in range(N_STATES):
        for a in range(N_ACTIONS):
            writer.writerow([i, a, int(table.next_index[i, a]), repr(float(table.reward[i, a])),
                             int(table.terminal[i, a])])
    return buf.getvalue()


class ConvergenceError(RuntimeError):
    pass


def greedy_argmax(q: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ``np.argmax`` already returns the lowest index among ties."""
    return np.argmax(q, axis=-1)


def value_iteration_oracle(
    cfg: EnvConfig = EnvConfig(),
    gamma: float = 0.99,
    potential: Optional[np.ndarray] = None,
    *,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    horizon: Optional[int] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact state values and greedy policy over all 500 states.

    ``potential`` is an optional array of 500 state potentials; rewards are then
    shaped as ``r + gamma * potential[s'] * (1 - terminal) - potential[s]``.
    With ``horizon`` set, exactly that many backups are run (finite-horizon
    values, usable with ``gamma = 1``); otherwise iteration stops once the
    sup-norm change drops below ``tol``.

    Returns ``(values, policy)``; ties in the greedy policy go to the lowest
    action index.
    """
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    table = transition_table(cfg)
    rewards = table.reward
    cont = (~table.terminal).astype(float)
    if potential is not None:
        phi = np.asarray(potential, dtype=float)
        if phi.shape != (N_STATES,):
            raise ValueError(f"potential must have shape ({N_STATES},), got {phi.shape}")
        rewards = rewards + gamma * phi[table.next_index] * cont - phi[:, None]

    v = np.zeros(N_STATES)
    if horizon is not None:
        for _ in range(horizon):
            v = np.max(rewards + gamma * cont * v[table.next_index], axis=1)
    else:
        for _ in range(max_iter):
            v_new = np.max(rewards + gamma * cont * v[table.next_index], axis=1)
            delta = np.max(np.abs(v_new - v))
            v = v_new
            if delta < tol:
                break
        else:
            raise ConvergenceError(
                f"value iteration did not reach tol={tol} within {max_iter} iterations "
                f"(last delta {delta:.3e}, gamma={gamma})"
            )
    q = rewards + gamma * cont * v[table.next_index]
    return v, greedy_argmax(q)


def q_values(values: np.ndarray, cfg: EnvConfig = EnvConfig(), gamma: float = 0.99,
             potential: Optional[np.ndarray] = None) -> np.ndarray:
    """One Bellman backup of ``values`` into a (500, 6) action-value table."""
    table = transition_table(cfg)
    rewards = table.reward
    cont = (~table.terminal).astype(float)
    if potential is not None:
        phi = np.asarray(potential, dtype=float)
        rewards = rewards + gamma * phi[table.next_index] * cont - phi[:, None]
    return rewards + gamma * cont * values[table.next_index]
