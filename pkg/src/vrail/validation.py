"""Self-checks against independent oracles.

Each ``check_*`` function returns a :class:`CheckResult`; ``run_all`` is what
``vrail validate`` prints.  The transition oracle here parses the ASCII map
directly and shares no code with :func:`vrail.taxi.step`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import taxi
from .dqn import AgentConfig, DQNAgent, train_epoch
from .estimator import EstimatorParams, fit, predict
from .net import NetworkSpec, backward, forward, init_params
from .shaping import Shaper

TAXI_MAP = (
    "+---------+",
    "|R: | : :G|",
    "| : | : : |",
    "| : : : : |",
    "| | : | : |",
    "|Y| : |B: |",
    "+---------+",
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    ok, detail = fn()
    return CheckResult(name, bool(ok), detail, time.perf_counter() - t0)


def map_rule_table(sparse: bool = False) -> dict[tuple[int, int], tuple[int, float, bool]]:
    """Transition table for all 3000 (state, action) pairs, derived from ``TAXI_MAP``."""
    grid = [list(line) for line in TAXI_MAP]
    letters = {}
    for r in range(5):
        for c in range(5):
            ch = grid[r + 1][2 * c + 1]
            if ch in "RGYB":
                letters[ch] = (r, c)
    locs = [letters[k] for k in "RGYB"]
    step_r = 0.0 if sparse else -1.0
    table = {}
    for idx in range(500):
        dest = idx % 4
        pas = (idx // 4) % 5
        col = (idx // 20) % 5
        row = idx // 100
        for a in range(6):
            r, c, p, rew, done = row, col, pas, step_r, False
            if a == 0:
                r = min(r + 1, 4)
            elif a == 1:
                r = max(r - 1, 0)
            elif a == 2 and grid[1 + row][2 * col + 2] == ":":
                c = col + 1
            elif a == 3 and grid[1 + row][2 * col] == ":":
                c = col - 1
            elif a == 4:
                if pas < 4 and (row, col) == locs[pas]:
                    p = 4
                else:
                    rew = -10.0
            elif a == 5:
                if pas == 4 and (row, col) == locs[dest]:
                    p, rew, done = dest, 20.0, True
                elif pas == 4 and (row, col) in locs:
                    p = locs.index((row, col))
                else:
                    rew = -10.0
            table[idx, a] = ((((r * 5) + c) * 5 + p) * 4 + dest, rew, done)
    return table


def check_env_exactness() -> CheckResult:
    def body():
        bad = [i for i in range(500) if taxi.encode_state(taxi.decode_state(i)) != i]
        if bad:
            return False, f"encode/decode mismatch at {bad[:5]}"
        mismatches = 0
        for sparse in (False, True):
            cfg = taxi.EnvConfig(sparse_rewards=sparse)
            oracle = map_rule_table(sparse)
            t = taxi.transition_table(cfg)
            for (i, a), (nxt, rew, done) in oracle.items():
                got = (int(t.next_index[i, a]), float(t.reward[i, a]), bool(t.terminal[i, a]))
                mismatches += got != (nxt, rew, done)
        stable = taxi.dump_transitions() == taxi.dump_transitions()
        return mismatches == 0 and stable, f"{mismatches} mismatches over 2 x 3000 transitions, dump stable={stable}"
    return _timed("environment exactness", body)


def unique_argmax_mask(q: np.ndarray, gap: float = 1e-8) -> np.ndarray:
    top2 = np.sort(q, axis=1)[:, -2:]
    return top2[:, 1] - top2[:, 0] > gap


def check_shaping_invariance(n_potentials: int = 5, seed: int = 0, gamma: float = 0.99) -> CheckResult:
    def body():
        rng = np.random.default_rng(seed)
        v0, pi0 = taxi.value_iteration_oracle(gamma=gamma, tol=1e-10)
        mask = unique_argmax_mask(taxi.q_values(v0, gamma=gamma))
        worst = 0
        for _ in range(n_potentials):
            phi = rng.uniform(-50, 50, size=taxi.N_STATES)
            _, pi = taxi.value_iteration_oracle(gamma=gamma, potential=phi, tol=1e-10)
            worst = max(worst, int(np.sum(pi[mask] != pi0[mask])))
        return worst == 0, f"{n_potentials} potentials, {int(mask.sum())} unique-argmax states, max disagreements {worst}"
    return _timed("shaping invariance", body)


def finite_difference_error(spec: NetworkSpec, rng: np.random.Generator, h: float = 1e-5,
                            batch: int = 3) -> float:
    """Worst relative error between backprop and central differences for a random net and loss."""
    params = init_params(spec, rng)
    x = rng.normal(size=(batch, spec.input_dim))
    target = rng.normal(size=(batch, spec.output_dim))

    def loss(p):
        return 0.5 * float(np.sum((forward(p, x) - target) ** 2))

    grads = backward(params, x, forward(params, x) - target)
    numeric = np.empty_like(params.flat)
    for k in range(params.flat.size):
        old = params.flat[k]
        params.flat[k] = old + h
        up = loss(params)
        params.flat[k] = old - h
        down = loss(params)
        params.flat[k] = old
        numeric[k] = (up - down) / (2 * h)
    scale = np.maximum(np.abs(numeric) + np.abs(grads.flat), 1e-6)
    return float(np.max(np.abs(numeric - grads.flat) / scale))


def check_gradients(n_configs: int = 20, seed: int = 0) -> CheckResult:
    def body():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_configs):
            hidden = tuple(int(h) for h in rng.integers(1, 9, size=rng.integers(0, 4)))
            spec = NetworkSpec(int(rng.integers(1, 7)), hidden, int(rng.integers(1, 7)))
            worst = max(worst, finite_difference_error(spec, rng))
        return worst < 1e-4, f"{n_configs} random nets, worst relative error {worst:.2e}"
    return _timed("gradient correctness", body)


def check_estimator_fit(seed: int = 0) -> CheckResult:
    def body():
        rng = np.random.default_rng(seed)
        X = taxi.feature_matrix()
        w_star = rng.normal(size=X.shape[1])
        y = X @ w_star
        result = fit(X, y, "linear", epochs=5000, lr=1e-2)
        mse = result.losses[-1]
        v, _ = taxi.value_iteration_oracle(gamma=0.99)
        monotone = True
        for kind in ("linear", "quadratic"):
            losses = np.array(fit(X, v, kind, epochs=50, lr=1e-2).losses)
            monotone &= bool(np.all(np.diff(losses) <= 0))
        return mse < 1e-3 and monotone, f"realizable MSE {mse:.2e} after 5000 steps, 50-epoch losses monotone={monotone}"
    return _timed("estimator fit", body)


def record_episode_returns(shaper: Shaper, n_episodes: int = 100, seed: int = 0,
                           policy: np.ndarray | None = None) -> list[tuple[float, float, int, int, bool]]:
    """Train a DQN for ``n_episodes`` episodes and read back, per episode,
    ``(unshaped return, shaped return, first state, last next-state, ended terminal)``."""
    agent = DQNAgent.create(AgentConfig(gamma=shaper.gamma, batch_size=8), seed=seed)
    out = []
    buf = agent.buffer
    for epoch in range(n_episodes):
        start = len(buf)
        train_epoch(agent, shaper, epoch, policy=policy)
        steps = [buf[k] for k in range(start, len(buf))]
        out.append((sum(t.raw_reward for t in steps), sum(t.reward for t in steps),
                    steps[0].state_index, steps[-1].next_state_index, steps[-1].terminal))
    return out


def check_telescoping(n_episodes: int = 100, seed: int = 0) -> CheckResult:
    def body():
        rng = np.random.default_rng(seed)
        potential = EstimatorParams("linear", rng.normal(size=taxi.N_BASE_FEATURES))
        shaper = Shaper(potential, gamma=1.0)
        X = taxi.feature_matrix()
        _, policy = taxi.value_iteration_oracle(gamma=0.99)
        worst = 0.0
        for raw, shaped, s0, sT, terminal in record_episode_returns(shaper, n_episodes, seed, policy):
            end = 0.0 if terminal else predict(potential, X[sT])
            worst = max(worst, abs(shaped - (raw + end - predict(potential, X[s0]))))
        return worst < 1e-9, f"{n_episodes} episodes, worst deviation {worst:.2e}"
    return _timed("telescoping", body)


def run_all() -> list[CheckResult]:
    return [check_env_exactness(), check_shaping_invariance(), check_gradients(),
            check_estimator_fit(), check_telescoping()]
