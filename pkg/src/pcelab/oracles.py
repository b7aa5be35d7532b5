"""Policy learning and policy evaluation oracles acting on opaque environment handles."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import EnvHandle, unwrap
from .mdp import Policy, optimal_policy, policy_value
from .omerm import sample_iterates

__all__ = [
    "EnvHandle",
    "OracleBudgetReport",
    "SampleOracles",
    "WhiteBoxOracles",
    "evaluate_policy",
    "evaluation_episodes",
    "learn_policy",
    "learning_budget",
]


@dataclass(frozen=True)
class OracleBudgetReport:
    episodes_used: int
    epsilon: float
    log_inv_delta: float


def _check(epsilon: float, log_inv_delta: float) -> None:
    if not 0 < epsilon <= 1:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    if not log_inv_delta > 0:
        raise ValueError(f"log(1/delta) must be positive, got {log_inv_delta}")


def evaluation_episodes(epsilon: float, log_inv_delta: float) -> int:
    """Hoeffding sample size for a 1-subgaussian return: ``ceil(2 (log 2 + log(1/delta)) / eps^2)``."""
    return math.ceil(2 * (math.log(2) + log_inv_delta) / epsilon**2)


def learning_budget(S: int, A: int, H: int, epsilon: float, log_inv_delta: float, c_o: float = 1.0) -> int:
    """Learner episodes: ``ceil(c_o S^2 A H^2 log(SAH/eps) (log(1/delta) + 1) / eps^2)``, at least 1."""
    base = c_o * S * S * A * H * H * math.log(S * A * H / epsilon) / epsilon**2
    return max(1, math.ceil(base * (log_inv_delta + 1)))


def evaluate_policy(env: EnvHandle, policy: Policy, epsilon: float, log_inv_delta: float,
                    *, white_box: bool = False) -> tuple[float, OracleBudgetReport]:
    _check(epsilon, log_inv_delta)
    if white_box:
        return policy_value(unwrap(env), policy), OracleBudgetReport(0, epsilon, log_inv_delta)
    start = env.episodes
    n = evaluation_episodes(epsilon, log_inv_delta)
    v = float(env.rollout_returns(policy, n).mean())
    return v, OracleBudgetReport(env.episodes - start, epsilon, log_inv_delta)


def learn_policy(env: EnvHandle, epsilon: float, log_inv_delta: float, *,
                 rng: np.random.Generator | None = None, c_o: float = 1.0,
                 white_box: bool = False) -> tuple[Policy, OracleBudgetReport]:
    """Return an (approximately) epsilon-optimal policy for the hidden MDP.

    Runs one optimistic learner for the full budget, draws ``ceil(log(1/delta))``
    uniformly random iterates and returns the one with the best Monte-Carlo
    value estimate. With ``white_box`` the exact optimal policy is returned at zero
    episode cost.
    """
    _check(epsilon, log_inv_delta)
    if white_box:
        return optimal_policy(unwrap(env))[0], OracleBudgetReport(0, epsilon, log_inv_delta)
    if rng is None:
        raise ValueError("the sampling oracle needs a random stream")
    start = env.episodes
    budget = learning_budget(env.num_states, env.num_actions, env.horizon, epsilon, log_inv_delta, c_o)
    runs = max(1, math.ceil(log_inv_delta))
    candidates = sample_iterates(env, budget, runs, rng)
    if runs == 1:
        best = candidates[0]
    else:
        # distinct candidates only; duplicates would waste evaluation episodes
        unique = list({p.key: p for p in candidates}.values())
        if len(unique) == 1:
            best = unique[0]
        else:
            scores = [evaluate_policy(env, p, epsilon / 4, log_inv_delta + math.log(runs))[0] for p in unique]
            best = unique[int(np.argmax(scores))]
    return best, OracleBudgetReport(env.episodes - start, epsilon, log_inv_delta)


class SampleOracles:
    """Oracles that only interact with the environment through rollouts."""

    white_box = False

    def __init__(self, rng: np.random.Generator, c_o: float = 1.0):
        self.rng = rng
        self.c_o = c_o

    def learn(self, env: EnvHandle, epsilon: float, log_inv_delta: float):
        return learn_policy(env, epsilon, log_inv_delta, rng=self.rng, c_o=self.c_o)

    def evaluate(self, env: EnvHandle, policy: Policy, epsilon: float, log_inv_delta: float):
        return evaluate_policy(env, policy, epsilon, log_inv_delta)


class WhiteBoxOracles:
    """Exact planning and exact evaluation with zero episodes; for tests and desk-scale experiments."""

    white_box = True

    def learn(self, env: EnvHandle, epsilon: float, log_inv_delta: float):
        return learn_policy(env, epsilon, log_inv_delta, white_box=True)

    def evaluate(self, env: EnvHandle, policy: Policy, epsilon: float, log_inv_delta: float):
        return evaluate_policy(env, policy, epsilon, log_inv_delta, white_box=True)
