"""Policy collection-elimination: pre-train a small covering set of (policy, value) pairs,
then fine-tune on an unknown test MDP by optimistic selection and statistical elimination."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .distributions import MdpDistribution, sample_indices
from .env import EnvHandle
from .mdp import Policy, TabularMdp, optimal_value, policy_value
from .omerm import OptimisticLearner
from .rng import child_stream, derive_stream, spawn_seed

log = logging.getLogger(__name__)


class PretrainError(RuntimeError):
    pass


@dataclass(frozen=True)
class PolicyValuePair:
    policy: Policy
    value: float


@dataclass(frozen=True)
class PhaseRecord:
    num_mdps: int
    cover_size: int
    estimation_error: float
    episodes: int


@dataclass
class PolicyValueSet:
    pairs: tuple
    epsilon: float
    delta: float
    final_num_mdps: int = 0
    phases: list = field(default_factory=list)
    deviations: list = field(default_factory=list)
    episodes_used: int = 0

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]


BOUNDARY_RTOL = 1e-9  # differences this close to epsilon count as equal to it


def _within(diff, epsilon: float):
    return diff < epsilon * (1 - BOUNDARY_RTOL)


def cnd(v_ij: float, v_ii: float, v_jj: float, epsilon: float) -> bool:
    """Pair j covers MDP i: its value on i is within epsilon of both v_ii and v_jj (strict).

    A difference that equals epsilon up to rounding is on the boundary and fails.
    """
    return bool(_within(abs(v_ij - v_ii), epsilon) and _within(abs(v_ij - v_jj), epsilon))


def cover_matrix(values: np.ndarray, epsilon: float) -> np.ndarray:
    """Boolean matrix ``A[i, j] = cnd(v[i, j], v[i, i], v[j, j])`` for a square value grid."""
    v = np.asarray(values, dtype=float)
    diag = np.diag(v)
    return _within(np.abs(v - diag[:, None]), epsilon) & _within(np.abs(v - diag[None, :]), epsilon)


def greedy_cover(A: np.ndarray, delta: float, weights: Sequence[float] | None = None) -> list[int]:
    """Greedy max-cover over the columns of ``A`` until a ``1 - 3 delta`` share of rows is covered.

    ``weights`` gives row multiplicities (all ones by default). Ties go to the
    lowest column index. Returns the chosen columns in pick order.
    """
    A = np.asarray(A, dtype=bool)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("cover matrix must be square")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    target = math.ceil((1 - 3 * delta) * w.sum() - 1e-9)
    uncovered = np.ones(n, dtype=bool)
    chosen: list[int] = []
    covered = 0.0
    Af = A.astype(float)
    for _ in range(n):
        gains = (w * uncovered) @ Af
        gains[chosen] = -1.0
        j = int(gains.argmax())
        chosen.append(j)
        covered += gains[j]
        uncovered &= ~A[:, j]
        if covered >= target:
            break
    return chosen


def pretrain_schedule(K: int) -> tuple[float, float, int]:
    """(epsilon, delta, initial N) with ``eps = delta = 1/sqrt(K)`` and ``N = ceil(log(1/delta)/delta^2)``."""
    if K < 2:
        raise ValueError("need K >= 2")
    delta = 1.0 / math.sqrt(K)
    return delta, delta, math.ceil(math.log(1 / delta) / delta**2)


def estimation_error(cover_size: int, N: int, delta: float) -> float:
    if cover_size >= N:
        return math.inf
    return math.sqrt(cover_size * math.log(2 * N / delta) / (N - cover_size))


def _grouped_phase(dist, idx, oracles, eps, delta, N, rng):
    """Exact shortcut for deterministic oracles: identical draws give identical rows and columns."""
    classes, first = np.unique(idx, return_index=True)
    order = np.argsort(first)
    classes, first = classes[order], first[order]
    mult = np.bincount(idx, minlength=len(dist))[classes]
    handles = [EnvHandle(dist.support[c], derive_stream(spawn_seed(rng), 0)) for c in classes]
    episodes = 0
    policies = []
    for h in handles:
        pi, rep = oracles.learn(h, eps / 2, math.log(N / delta))
        policies.append(pi)
        episodes += rep.episodes_used
    m = len(classes)
    v = np.empty((m, m))
    for i, h in enumerate(handles):
        for j, pi in enumerate(policies):
            v[i, j], rep = oracles.evaluate(h, pi, eps / 2, math.log(N * N / delta))
            episodes += rep.episodes_used
    picks = greedy_cover(cover_matrix(v, eps), delta, weights=mult)
    return [PolicyValuePair(policies[j], float(v[j, j])) for j in picks], episodes


def _full_phase(dist, idx, oracles, eps, delta, N, rng):
    base = spawn_seed(rng)
    handles = [EnvHandle(dist.support[c], derive_stream(base, i)) for i, c in enumerate(idx)]
    episodes = 0
    policies = []
    for h in handles:
        pi, rep = oracles.learn(h, eps / 2, math.log(N / delta))
        policies.append(pi)
        episodes += rep.episodes_used
    v = np.empty((N, N))
    for i, h in enumerate(handles):
        for j, pi in enumerate(policies):
            v[i, j], rep = oracles.evaluate(h, pi, eps / 2, math.log(N * N / delta))
            episodes += rep.episodes_used
    picks = greedy_cover(cover_matrix(v, eps), delta)
    return [PolicyValuePair(policies[j], float(v[j, j])) for j in picks], episodes


def pretrain(dist: MdpDistribution, K: int, oracles, rng: np.random.Generator, *,
             n_cap: int | None = None, max_phases: int = 40) -> PolicyValueSet:
    """Build the policy-value set, doubling the number of sampled MDPs until the estimation error is at most delta.

    With ``n_cap`` the number of sampled MDPs never exceeds the cap; if the
    stopping rule still fails at the cap, the last set is returned and the
    deviation is recorded on the result.
    """
    eps, delta, N = pretrain_schedule(K)
    out = PolicyValueSet((), eps, delta)
    grouped = getattr(oracles, "white_box", False)
    for _ in range(max_phases):
        n_eff = N if n_cap is None else min(N, n_cap)
        if n_eff < N:
            out.deviations.append(f"sampled MDPs capped at {n_eff} (schedule asks for {N})")
        idx = sample_indices(dist, n_eff, rng)
        phase = _grouped_phase if grouped else _full_phase
        pairs, episodes = phase(dist, idx, oracles, eps, delta, n_eff, rng)
        err = estimation_error(len(pairs), n_eff, delta)
        out.phases.append(PhaseRecord(n_eff, len(pairs), err, episodes))
        out.episodes_used += episodes
        out.pairs, out.final_num_mdps = tuple(pairs), n_eff
        if err <= delta:
            return out
        if n_cap is not None and n_eff >= n_cap:
            out.deviations.append(f"stopping rule not met at the cap (error {err:.4g} > delta {delta:.4g})")
            return out
        N *= 2
    raise PretrainError(f"stopping rule not met after {max_phases} phases (last N={N // 2}, "
                        f"cover size {len(out.pairs)})")


def elimination_threshold(n: int, K: int, delta: float, epsilon: float) -> float:
    """``4 eps + sqrt(2 log(4K/delta) / n)`` after ``n`` episodes in the current phase."""
    return 4 * epsilon + math.sqrt(2 * math.log(4 * K / delta) / n)


@dataclass(frozen=True)
class Elimination:
    episode: int
    pair_index: int
    empirical_mean: float
    threshold: float


@dataclass
class RegretTrace:
    """Per-episode record of one fine-tuning run (episodes are numbered from 1)."""

    phase: np.ndarray
    pair_index: np.ndarray
    returns: np.ndarray
    inst_regret: np.ndarray
    eliminations: list
    fallback_episode: int | None = None
    first_actions: np.ndarray | None = None

    @property
    def episodes(self) -> np.ndarray:
        return np.arange(1, len(self.returns) + 1)

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.inst_regret)

    @property
    def total_regret(self) -> float:
        return float(self.inst_regret.sum())

    @property
    def num_phases(self) -> int:
        return int(self.phase[-1]) if len(self.phase) else 0

    def __len__(self):
        return len(self.returns)


class RegretMeter:
    """White-box ``V*(M) - V^pi(M)`` with a per-policy cache; measurement only."""

    def __init__(self, mdp: TabularMdp):
        self.mdp = mdp
        self.best = optimal_value(mdp)
        self._cache: dict = {}

    def __call__(self, policy: Policy) -> float:
        gap = self._cache.get(policy.key)
        if gap is None:
            gap = self._cache[policy.key] = self.best - policy_value(self.mdp, policy)
        return gap


def finetune(pvset: PolicyValueSet | Sequence[PolicyValuePair], env: EnvHandle, K: int,
             delta: float | None = None, epsilon: float | None = None, *,
             meter: Callable[[Policy], float] | None = None,
             rng: np.random.Generator | None = None) -> RegretTrace:
    """Play the most optimistic surviving pair; drop it when its running mean drifts past the threshold.

    ``meter`` maps a policy to its instantaneous regret on the test MDP and is
    used for bookkeeping only. If every pair is eliminated, the remaining episodes
    are played by a single-task optimistic learner started from scratch.
    """
    pairs = list(pvset)
    if not pairs:
        raise ValueError("empty policy-value set")
    delta = 1 / math.sqrt(K) if delta is None else delta
    epsilon = 1 / math.sqrt(K) if epsilon is None else epsilon
    log_term = 2 * math.log(4 * K / delta)
    active = sorted(range(len(pairs)), key=lambda j: (-pairs[j].value, j))
    phases, used, returns, regrets, acts = [], [], [], [], []
    events = []
    phase, k0_sum, n = 1, 0.0, 0
    fallback_at = None
    k = 0
    while k < K and active:
        j = active[0]
        pi, v = pairs[j].policy, pairs[j].value
        gap = meter(pi) if meter else math.nan
        while k < K:
            k += 1
            traj = env.rollout(pi)
            G = traj.total_return
            acts.append(traj.actions[0])
            n += 1
            k0_sum += G
            phases.append(phase)
            used.append(j)
            returns.append(G)
            regrets.append(gap)
            mean = k0_sum / n
            thr = 4 * epsilon + math.sqrt(log_term / n)
            if abs(mean - v) >= thr:
                events.append(Elimination(k, j, mean, thr))
                active.pop(0)
                phase += 1
                k0_sum, n = 0.0, 0
                break
    if k < K:
        fallback_at = k + 1
        log.info("all %d pairs eliminated after %d episodes; switching to a from-scratch learner",
                 len(pairs), k)
        learner = OptimisticLearner(env.num_states, env.num_actions, env.horizon, K - k, env.initial_state)
        while k < K:
            k += 1
            pi = learner.policy()
            traj = env.rollout(pi)
            learner.observe(traj)
            acts.append(traj.actions[0])
            phases.append(phase)
            used.append(-1)
            returns.append(traj.total_return)
            regrets.append(meter(pi) if meter else math.nan)
    return RegretTrace(np.array(phases, dtype=np.int64), np.array(used, dtype=np.int64),
                       np.array(returns), np.array(regrets), events, fallback_at,
                       np.array(acts, dtype=np.int64))


def covering_pairs(pvset: Sequence[PolicyValuePair], mdp: TabularMdp, epsilon: float) -> list[int]:
    """Indices of pairs that cover ``mdp``: policy 2eps-optimal and value within 2eps of the policy's value."""
    best = optimal_value(mdp)
    out = []
    for j, pair in enumerate(pvset):
        vp = policy_value(mdp, pair.policy)
        if abs(vp - best) < 2 * epsilon and abs(vp - pair.value) < 2 * epsilon:
            out.append(j)
    return out


@dataclass
class PceExperimentResult:
    K: int
    traces: dict  # (seed, test_draw) -> RegretTrace
    test_indices: dict  # (seed, test_draw) -> support index of the test MDP
    pvsets: dict  # seed -> PolicyValueSet
    pretrain_episodes: dict  # seed -> int

    def cumulative(self) -> np.ndarray:
        """Cumulative regret curves, one row per (seed, draw) in sorted key order."""
        keys = sorted(self.traces)
        if not keys:
            return np.zeros((0, self.K))
        return np.stack([self.traces[key].cum_regret for key in keys])

    def mean_curve(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.cumulative()
        if len(c) == 0:
            return np.zeros(self.K), np.zeros(self.K)
        se = c.std(0, ddof=1) / math.sqrt(len(c)) if len(c) > 1 else np.zeros(self.K)
        return c.mean(0), se

    def mean_total_regret(self) -> float:
        c = self.cumulative()
        return float(c[:, -1].mean()) if len(c) else 0.0


def run_pce_experiment(dist: MdpDistribution, K: int, num_test_draws: int, seeds: Sequence[int],
                       oracles_factory: Callable[[int], object], *,
                       n_cap: int | None = None, pvsets: dict | None = None) -> PceExperimentResult:
    """Pre-train once per seed, then fine-tune on ``num_test_draws`` fresh test MDPs per seed.

    ``oracles_factory(seed)`` builds the oracle pair for one seed. Every random
    stream is derived from ``(seed, purpose, draw)`` so results do not depend on
    execution order.
    """
    traces, test_idx, sets, episodes = {}, {}, {}, {}
    meters: dict[int, RegretMeter] = {}
    for seed in seeds:
        if pvsets is not None and seed in pvsets:
            pv = pvsets[seed]
        else:
            pv = pretrain(dist, K, oracles_factory(seed), child_stream(seed, 0), n_cap=n_cap)
        sets[seed] = pv
        episodes[seed] = pv.episodes_used
        for d in range(num_test_draws):
            i = int(sample_indices(dist, 1, child_stream(seed, 1, d))[0])
            mdp = dist.support[i]
            meter = meters.setdefault(i, RegretMeter(mdp))
            env = EnvHandle(mdp, child_stream(seed, 2, d))
            traces[(seed, d)] = finetune(pv, env, K, meter=meter)
            test_idx[(seed, d)] = i
    return PceExperimentResult(K, traces, test_idx, sets, episodes)
