"""Optimistic model-based empirical risk minimization over a set of sampled tasks.

Each task keeps its own empirical model. Per iteration the optimistic values
``Q = min{1, R_hat + bonus + P_hat V_next}`` are computed for every task and the
shared policy is chosen to maximize their average at the start state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .distributions import MdpDistribution, sample_indices
from .env import EnvHandle
from .mdp import (
    Policy,
    TabularMdp,
    Trajectory,
    deterministic_action_tables,
    all_deterministic_values,
    stack_models,
)
from .rng import derive_stream, spawn_seed

Mode = Literal["exhaustive", "coordinate"]

EXHAUSTIVE_CAP = 10**5
ENUMERATION_CAP = 10**6
MAX_SWEEPS = 50


@dataclass(frozen=True)
class Sizes:
    """Quantities entering the bonus log term: ``log(8 S A N H K)``."""

    S: int
    A: int
    H: int
    N: int = 1
    K: int = 1

    @property
    def log_term(self) -> float:
        return math.log(8 * self.S * self.A * self.N * self.H * self.K)


def bonus(count, S: int, A: int, N: int, H: int, K: int):
    """``sqrt(8 S log(8 S A N H K) / max{1, count})``; accepts scalars or arrays."""
    log_term = math.log(8 * S * A * N * H * K)
    if isinstance(count, (int, np.integer)):
        return math.sqrt(8 * S * log_term / max(1, int(count)))
    c = np.maximum(1, count)
    out = np.sqrt(8 * S * log_term / c)
    return float(out) if np.ndim(out) == 0 else out


class EmpiricalModel:
    """Visit counts and reward sums for one task, with the derived estimates kept current."""

    def __init__(self, S: int, A: int, H: int, initial_state: int = 0):
        self.S, self.A, self.H = S, A, H
        self.initial_state = initial_state
        self.counts = np.zeros((H, S, A), dtype=np.int64)
        self.next_counts = np.zeros((H, S, A, S), dtype=np.int64)
        self.reward_sums = np.zeros((H, S, A))
        self.P_hat = np.zeros((H, S, A, S))
        self.R_hat = np.zeros((H, S, A))
        self.episodes = 0

    @classmethod
    def exact(cls, mdp: TabularMdp, count: int = 10**9) -> "EmpiricalModel":
        """Model whose estimates equal the true MDP (for tests)."""
        m = cls(mdp.num_states, mdp.num_actions, mdp.horizon, mdp.initial_state)
        m.P_hat = np.array(mdp.transitions)
        m.R_hat = np.array(mdp.mean_rewards)
        m.counts[:] = count
        return m

    def update(self, traj: Trajectory) -> list:
        """Record one episode; returns the touched (h, s, a) cells."""
        states = traj.states
        touched = []
        for h, (s, a, y) in enumerate(zip(states, traj.actions, traj.rewards)):
            s_next = states[h + 1] if h + 1 < len(states) else traj.final_state
            cell = (h, s, a)
            n = int(self.counts[cell]) + 1
            self.counts[cell] = n
            self.reward_sums[cell] += y
            row = self.next_counts[cell]
            if s_next >= 0:
                row[s_next] += 1
            self.P_hat[cell] = row / n
            self.R_hat[cell] = self.reward_sums[cell] / n
            touched.append(cell)
        self.episodes += 1
        return touched

    def bonus_table(self, sizes: Sizes) -> np.ndarray:
        return bonus(self.counts, sizes.S, sizes.A, sizes.N, sizes.H, sizes.K)


@dataclass(frozen=True, eq=False)
class OptimisticValueTable:
    Q: np.ndarray  # (H, S, A)
    V: np.ndarray  # (H+1, S)


def optimistic_eval(model: EmpiricalModel, policy: Policy, sizes: Sizes,
                    bonus_table: np.ndarray | None = None) -> OptimisticValueTable:
    b = model.bonus_table(sizes) if bonus_table is None else bonus_table
    H, S, A = model.H, model.S, model.A
    Q = np.zeros((H, S, A))
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        Q[h] = np.minimum(1.0, model.R_hat[h] + b[h] + model.P_hat[h] @ V[h + 1])
        V[h] = (policy.probs[h] * Q[h]).sum(-1)
    return OptimisticValueTable(Q, V)


def optimistic_greedy(P_hat: np.ndarray, R_plus_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Greedy actions (H,S) and values (H+1,S) of the clipped optimistic recursion for one model."""
    H, S, A = R_plus_b.shape
    V = np.zeros((H + 1, S))
    act = np.zeros((H, S), dtype=np.int64)
    for h in range(H - 1, -1, -1):
        Q = np.minimum(1.0, R_plus_b[h] + P_hat[h] @ V[h + 1])
        act[h] = Q.argmax(-1)
        V[h] = Q.max(-1)
    return act, V


def _stack(models: Sequence[EmpiricalModel], sizes: Sizes):
    P = np.stack([m.P_hat for m in models])
    Rb = np.stack([m.R_hat + m.bonus_table(sizes) for m in models])
    starts = np.array([m.initial_state for m in models])
    return P, Rb, starts


def _levels(P: np.ndarray, Rb: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Clipped optimistic values of one deterministic policy on every model, shape (H+1, M, S)."""
    M, H, S, A = Rb.shape
    V = np.zeros((H + 1, M, S))
    for h in range(H - 1, -1, -1):
        Q = np.minimum(1.0, Rb[:, h] + np.einsum("msat,mt->msa", P[:, h], V[h + 1]))
        V[h] = np.take_along_axis(Q, np.broadcast_to(table[h][None, :, None], (M, S, 1)), -1)[..., 0]
    return V


def _coordinate_ascent(P: np.ndarray, Rb: np.ndarray, starts: np.ndarray, table: np.ndarray,
                       trace: list | None = None) -> np.ndarray:
    """Cyclic ascent on the average clipped optimistic start value over deterministic tables.

    At each (h, s), every action is scored by the exact objective with the rest of
    the table held fixed; a change is made only on strict improvement, so the
    objective never decreases.
    """
    M, H, S, A = Rb.shape
    table = table.copy()
    rows = np.arange(M)
    levels = _levels(P, Rb, table)
    best = float(levels[0][rows, starts].mean())
    if trace is not None:
        trace.append(best)
    for _ in range(MAX_SWEEPS):
        changed = False
        for h in range(H - 1, -1, -1):
            for s in range(S):
                Qh = np.minimum(1.0, Rb[:, h] + np.einsum("msat,mt->msa", P[:, h], levels[h + 1]))
                # candidate values at level h: (A, M, S)
                Vc = np.broadcast_to(levels[h], (A, M, S)).copy()
                Vc[:, :, s] = Qh[:, s, :].T
                for g in range(h - 1, -1, -1):
                    Q = np.minimum(1.0, Rb[None, :, g] + np.einsum("msat,cmt->cmsa", P[:, g], Vc))
                    Vc = np.take_along_axis(Q, np.broadcast_to(table[g][None, None, :, None], (A, M, S, 1)),
                                            -1)[..., 0]
                scores = Vc[:, rows, starts].mean(-1)
                a_new = int(scores.argmax())
                if scores[a_new] > scores[table[h, s]] + 1e-12:
                    table[h, s] = a_new
                    changed = True
                    levels = _levels(P, Rb, table)
                    new = float(levels[0][rows, starts].mean())
                    assert new >= best - 1e-9, "coordinate ascent decreased the objective"
                    best = new
        if trace is not None:
            trace.append(best)
        if not changed:
            break
    return table


def _table_at(index: int, H: int, S: int, A: int) -> np.ndarray:
    """Action table at position ``index`` of the lexicographic enumeration."""
    digits = np.zeros(H * S, dtype=np.int64)
    for i in range(H * S - 1, -1, -1):
        index, digits[i] = divmod(index, A)
    return digits.reshape(H, S)


def _exhaustive(P: np.ndarray, Rb: np.ndarray, starts: np.ndarray) -> np.ndarray:
    M, H, S, A = Rb.shape
    if A ** (S * H) > EXHAUSTIVE_CAP:
        raise ValueError(f"exhaustive search over {A}^{S * H} policies exceeds the cap {EXHAUSTIVE_CAP}")
    values = all_deterministic_values(P, Rb, starts, clip=1.0).mean(-1)
    return _table_at(int(values.argmax()), H, S, A)


def _improve(P, Rb, starts, prev_table, mode: Mode, trace=None) -> np.ndarray:
    if mode == "exhaustive":
        return _exhaustive(P, Rb, starts)
    if mode != "coordinate":
        raise ValueError(f"unknown mode {mode!r}")
    if len(Rb) == 1:
        return optimistic_greedy(P[0], Rb[0])[0]
    return _coordinate_ascent(P, Rb, starts, prev_table, trace)


def improve_policy(models: Sequence[EmpiricalModel], sizes: Sizes, prev: Policy | None = None,
                   mode: Mode = "coordinate", trace: list | None = None) -> Policy:
    """Deterministic policy maximizing the average clipped optimistic start value.

    ``exhaustive`` enumerates all ``A**(S*H)`` deterministic policies and returns
    the lexicographically first maximizer. ``coordinate`` runs cyclic coordinate
    ascent from ``prev`` (one backward greedy pass when there is a single model,
    which is then exact). ``trace`` receives the objective after every sweep.
    """
    if not models:
        raise ValueError("need at least one model")
    m0 = models[0]
    P, Rb, starts = _stack(models, sizes)
    prev_table = (np.zeros((m0.H, m0.S), dtype=np.int64) if prev is None
                  else np.asarray(prev.greedy_actions, dtype=np.int64))
    return Policy.deterministic(_improve(P, Rb, starts, prev_table, mode, trace), m0.A)


def average_optimistic_value(models: Sequence[EmpiricalModel], sizes: Sizes, policy: Policy) -> float:
    return float(np.mean([optimistic_eval(m, policy, sizes).V[0, m.initial_state] for m in models]))


def default_iterations(S: int, A: int, H: int, epsilon: float, c2: float = 1.0) -> int:
    return math.ceil(c2 * S * S * A * H * H * math.log(S * A * H / epsilon) / epsilon**2)


@dataclass
class OmermResult:
    policy: Policy
    iterations: int
    chosen_iteration: int
    log: list = field(default_factory=list)


def omerm_train(handles: Sequence[EnvHandle], epsilon: float, rng: np.random.Generator, *,
                c2: float = 1.0, iterations: int | None = None, mode: Mode = "coordinate",
                record_log: bool = False, on_iteration=None) -> OmermResult:
    """Run the optimistic multi-task loop and return a uniformly random iterate.

    ``iterations`` overrides the default ``ceil(c2 S^2 A H^2 log(SAH/eps)/eps^2)``.
    ``on_iteration(k, policy, models, sizes)`` is called after each policy update.
    """
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    if not handles:
        raise ValueError("need at least one task")
    h0 = handles[0]
    S, A, H, N = h0.num_states, h0.num_actions, h0.horizon, len(handles)
    K = iterations if iterations is not None else default_iterations(S, A, H, epsilon, c2)
    sizes = Sizes(S, A, H, N, K)
    models = [EmpiricalModel(S, A, H, h.initial_state) for h in handles]
    P = np.zeros((N, H, S, A, S))
    Rb = np.tile(bonus(np.zeros((H, S, A)), S, A, N, H, K), (N, 1, 1, 1))
    starts = np.array([h.initial_state for h in handles])
    chosen = int(rng.integers(1, K + 1))
    kept = None
    table = np.zeros((H, S), dtype=np.int64)
    log = []
    b_num = 8 * S * sizes.log_term  # bonus = sqrt(b_num / count) once a cell is visited
    policies: dict = {}
    for k in range(1, K + 1):
        table = _improve(P, Rb, starts, table, mode)
        tkey = table.tobytes()
        policy = policies.get(tkey)
        if policy is None:
            policy = policies[tkey] = Policy.deterministic(table, A)
        if on_iteration is not None:
            on_iteration(k, policy, models, sizes)
        if k == chosen:
            kept = policy
        if record_log:
            avg = float(_levels(P, Rb, table)[0][np.arange(N), starts].mean())
        for i, (handle, model) in enumerate(zip(handles, models)):
            traj = handle.rollout(policy)
            for h, s, a in model.update(traj):
                P[i, h, s, a] = model.P_hat[h, s, a]
                Rb[i, h, s, a] = model.R_hat[h, s, a] + math.sqrt(b_num / model.counts[h, s, a])
            if record_log:
                log.append((k, i, avg, traj.total_return))
    return OmermResult(kept, K, chosen, log)


def log_cover_proxy(S: int, A: int, H: int, epsilon: float) -> float:
    """Stand-in for the log covering number of tabular stochastic policies: ``S H A log(12 H / eps)``."""
    return S * H * A * math.log(12 * H / epsilon)


@dataclass
class HighProbResult:
    policy: Policy
    num_tasks: int
    num_runs: int
    eval_episodes: int
    iterations: int
    candidate_values: list
    task_indices: np.ndarray


def omerm_high_prob(dist: MdpDistribution, epsilon: float, delta: float, rng: np.random.Generator, *,
                    c1: float = 1.0, c2: float = 1.0, log_cover: float | None = None,
                    num_tasks: int | None = None, iterations: int | None = None,
                    eval_episodes: int | None = None, mode: Mode = "coordinate") -> HighProbResult:
    """Repeat :func:`omerm_train` at accuracy eps/2 and keep the candidate with the best Monte-Carlo average.

    The number of repetitions is ``ceil(log(2/delta) / log 6)``.
    """
    if not (0 < epsilon < 1 and 0 < delta < 1):
        raise ValueError("epsilon and delta must lie in (0, 1)")
    S, A, H = dist.num_states, dist.num_actions, dist.horizon
    if log_cover is None:
        log_cover = log_cover_proxy(S, A, H, epsilon)
    N = num_tasks or math.ceil(c1 * (log_cover + math.log(1 / delta)) / epsilon**2)
    N1 = max(1, math.ceil(math.log(2 / delta) / math.log(6)))
    N2 = eval_episodes or math.ceil(c2 * math.log(N * N1 / delta) / epsilon**2)
    idx = sample_indices(dist, N, rng)
    base = spawn_seed(rng)
    handles = [EnvHandle(dist.support[j], derive_stream(base, i)) for i, j in enumerate(idx)]
    candidates, values = [], []
    for _ in range(N1):
        res = omerm_train(handles, epsilon / 2, rng, c2=c2, iterations=iterations, mode=mode)
        candidates.append(res)
        values.append(float(np.mean([h.rollout_returns(res.policy, N2).mean() for h in handles])))
    best = int(np.argmax(values))
    return HighProbResult(candidates[best].policy, N, N1, N2, candidates[best].iterations, values, idx)


def expected_values_all(dist: MdpDistribution) -> tuple[np.ndarray, np.ndarray]:
    """Every deterministic policy's expected start value under ``dist``; returns (tables, values)."""
    S, A, H = dist.num_states, dist.num_actions, dist.horizon
    if A ** (S * H) > ENUMERATION_CAP:
        raise ValueError(f"{A}^{S * H} deterministic policies exceed the enumeration cap")
    tables = deterministic_action_tables(H, S, A)
    P, R, starts = stack_models(dist.support)
    return tables, all_deterministic_values(P, R, starts) @ dist.probs


def best_in_expectation(dist: MdpDistribution) -> tuple[Policy, float]:
    """Deterministic maximizer of the expected start value, found by enumeration."""
    tables, values = expected_values_all(dist)
    i = int(values.argmax())
    return Policy.deterministic(tables[i], dist.num_actions), float(values[i])


def expected_suboptimality(dist: MdpDistribution, policy: Policy) -> float:
    from .mdp import policy_value

    _, best = best_in_expectation(dist)
    mine = float(sum(p * policy_value(m, policy) for p, m in zip(dist.probs, dist.support)))
    return best - mine


class OptimisticLearner:
    """Single-task optimistic value iteration: the one-model case of the multi-task loop.

    Call :meth:`policy` to get the current greedy policy, then :meth:`observe`
    with the episode it produced.
    """

    def __init__(self, S: int, A: int, H: int, budget: int, initial_state: int = 0):
        self.sizes = Sizes(S, A, H, 1, max(1, budget))
        self.model = EmpiricalModel(S, A, H, initial_state)
        self.Rb = np.full((H, S, A), bonus(0, S, A, 1, H, self.sizes.K))
        self._policy = None

    def policy(self) -> Policy:
        if self._policy is None:
            act, _ = optimistic_greedy(self.model.P_hat, self.Rb)
            self._policy = Policy.deterministic(act, self.sizes.A)
        return self._policy

    def observe(self, traj: Trajectory) -> None:
        sz = self.sizes
        for h, s, a in self.model.update(traj):
            self.Rb[h, s, a] = self.model.R_hat[h, s, a] + bonus(self.model.counts[h, s, a],
                                                                 sz.S, sz.A, 1, sz.H, sz.K)
        self._policy = None


def sample_iterates(handle: EnvHandle, episodes: int, count: int, rng: np.random.Generator,
                    budget: int | None = None, callback=None) -> list:
    """Run the learner for ``episodes`` and return ``count`` iterates drawn uniformly with replacement."""
    learner = OptimisticLearner(handle.num_states, handle.num_actions, handle.horizon,
                                budget or episodes, handle.initial_state)
    picks = rng.integers(0, max(1, episodes), size=count)
    wanted = {int(k) for k in picks}
    kept = {}
    if episodes <= 0:
        kept[0] = learner.policy()
    for k in range(episodes):
        pi = learner.policy()
        if k in wanted:
            kept[k] = pi
        traj = handle.rollout(pi)
        if callback is not None:
            callback(k, pi, traj)
        learner.observe(traj)
    return [kept[int(k)] for k in picks]


def run_optimistic_learner(handle: EnvHandle, episodes: int, rng: np.random.Generator,
                           budget: int | None = None, callback=None) -> Policy:
    """Run the learner for ``episodes`` and return a uniformly random iterate."""
    return sample_iterates(handle, episodes, 1, rng, budget, callback)[0]
