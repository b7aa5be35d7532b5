"""Gaussian multi-armed bandits: the asymptotically optimal UCB rule, exact regret
instrumentation, and a distribution-informed elimination baseline.

The informed-vs-UCB ratio experiment is illustrative only: no finite simulation
can realize the infimum over all algorithms that the asymptotic statement is about.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .distributions import MdpDistribution, sample_indices
from .env import EnvHandle
from .mdp import NoiseModel, Policy, TabularMdp, bandit_mdp
from .pce import PolicyValuePair, finetune, pretrain
from .oracles import WhiteBoxOracles
from .rng import child_stream

RATIO_NOTE = ("illustrative only: the informed baseline is a stand-in for the optimal "
              "distribution-aware algorithm, and finite T cannot establish an asymptotic ratio")


@dataclass(frozen=True, eq=False)
class BanditInstance:
    means: np.ndarray

    def __post_init__(self):
        m = np.array(self.means, dtype=float)
        if m.ndim != 1 or len(m) == 0:
            raise ValueError("means must be a nonempty vector")
        if (m < 0).any() or (m > 1).any():
            raise ValueError("arm means must lie in [0, 1]")
        m.setflags(write=False)
        object.__setattr__(self, "means", m)

    @property
    def num_arms(self) -> int:
        return len(self.means)

    @property
    def best_mean(self) -> float:
        return float(self.means.max())

    @property
    def gaps(self) -> np.ndarray:
        return self.best_mean - self.means

    def to_mdp(self) -> TabularMdp:
        return bandit_mdp(self.means, NoiseModel.gaussian(1.0))

    @classmethod
    def from_mdp(cls, mdp: TabularMdp) -> "BanditInstance":
        if mdp.num_states != 1 or mdp.horizon != 1:
            raise ValueError("not a one-state one-step MDP")
        return cls(mdp.mean_rewards[0, 0])


@dataclass(frozen=True, eq=False)
class PullRecord:
    arms: np.ndarray
    rewards: np.ndarray
    counts: np.ndarray
    sums: np.ndarray
    instance_index: int = -1

    @classmethod
    def from_log(cls, arms, rewards, num_arms: int, instance_index: int = -1) -> "PullRecord":
        arms = np.asarray(arms, dtype=np.int64)
        rewards = np.asarray(rewards, dtype=float)
        counts = np.bincount(arms, minlength=num_arms)
        sums = np.bincount(arms, weights=rewards, minlength=num_arms)
        return cls(arms, rewards, counts, sums, instance_index)

    @property
    def steps(self) -> int:
        return len(self.arms)

    def check(self) -> None:
        if len(self.arms) != len(self.rewards):
            raise ValueError("arm and reward logs differ in length")
        if int(self.counts.sum()) != len(self.arms):
            raise ValueError("pull counts do not add up to the number of steps")
        if not np.array_equal(np.bincount(self.arms, minlength=len(self.counts)), self.counts):
            raise ValueError("pull counts do not match the arm log")


def ucb_index(mean: float, count: int, t: int) -> float:
    """``mean + sqrt(2 log f(t) / count)`` with ``f(t) = 1 + t log^2 t``."""
    f = 1 + t * math.log(t) ** 2
    return mean + math.sqrt(2 * math.log(f) / count)


def ucb_run(bandit: BanditInstance, T: int, rng: np.random.Generator) -> PullRecord:
    K = bandit.num_arms
    if T < K:
        raise ValueError(f"T={T} is smaller than the number of arms {K}")
    noise = rng.standard_normal(T)
    means = bandit.means.tolist()
    arms = np.empty(T, dtype=np.int64)
    rewards = np.empty(T)
    counts = [0] * K
    sums = [0.0] * K
    log, sqrt = math.log, math.sqrt
    for t in range(1, T + 1):
        if t <= K:
            a = t - 1
        else:
            two_log_f = 2 * log(1 + t * log(t) ** 2)
            a, best = 0, -math.inf
            for k in range(K):
                idx = sums[k] / counts[k] + sqrt(two_log_f / counts[k])
                if idx > best:
                    a, best = k, idx
        y = means[a] + noise[t - 1]
        counts[a] += 1
        sums[a] += y
        arms[t - 1] = a
        rewards[t - 1] = y
    return PullRecord(arms, rewards, np.array(counts), np.array(sums))


def pseudo_regret(record: PullRecord, bandit: BanditInstance) -> float:
    """Gap-weighted pull counts; cross-checked against the per-step sum of gaps."""
    record.check()
    gaps = bandit.gaps
    by_arm = math.fsum(float(g) * int(c) for g, c in zip(gaps, record.counts))
    by_step = math.fsum(gaps[record.arms].tolist())
    if abs(by_arm - by_step) > 1e-12 * max(1.0, abs(by_arm)):
        raise ValueError(f"decomposition mismatch: {by_arm} vs {by_step}")
    return by_arm


def as_bandits(dist: MdpDistribution) -> list[BanditInstance]:
    return [BanditInstance.from_mdp(m) for m in dist.support]


def exact_cover_set(dist: MdpDistribution) -> list[PolicyValuePair]:
    """One pair per support member: play its best arm, with its optimal mean as the value."""
    out = []
    for b in as_bandits(dist):
        a = int(b.means.argmax())
        out.append(PolicyValuePair(Policy.deterministic([[a]], b.num_arms), b.best_mean))
    return out


def informed_elimination_run(dist: MdpDistribution, true_dist_known: bool, T: int,
                             rng: np.random.Generator, test_index: int | None = None) -> PullRecord:
    """Elimination fine-tuning over pairs built from the support of ``dist``.

    With ``true_dist_known`` the pairs are the exact cover set of the true
    distribution; otherwise they come from white-box pre-training with budget T.
    The test instance is drawn from ``dist`` unless ``test_index`` is given.
    """
    if test_index is None:
        test_index = int(sample_indices(dist, 1, rng)[0])
    pairs = exact_cover_set(dist) if true_dist_known else list(pretrain(dist, T, WhiteBoxOracles(), rng))
    env = EnvHandle(dist.support[test_index], rng)
    trace = finetune(pairs, env, T, rng=rng)
    return PullRecord.from_log(trace.first_actions, trace.returns, dist.num_actions, test_index)


@dataclass
class RatioResult:
    runs: list  # (T, seed, algorithm, pseudo_regret)
    table: list  # (T, mean_informed, mean_ucb, ratio)
    note: str = RATIO_NOTE


def asymptotic_ratio_experiment(dist: MdpDistribution, T_grid: Sequence[int], seeds: Sequence[int]) -> RatioResult:
    """Mean pseudo-regret of the informed baseline and of UCB per horizon, and their ratio."""
    if list(T_grid) != sorted(T_grid):
        raise ValueError("T_grid must be ascending")
    bandits = as_bandits(dist)
    runs, table = [], []
    for T in T_grid:
        inf_r, ucb_r = [], []
        for seed in seeds:
            i = int(sample_indices(dist, 1, child_stream(seed, T, 0))[0])
            rec = informed_elimination_run(dist, True, T, child_stream(seed, T, 1), test_index=i)
            inf_r.append(pseudo_regret(rec, bandits[i]))
            rec = ucb_run(bandits[i], T, child_stream(seed, T, 2))
            ucb_r.append(pseudo_regret(rec, bandits[i]))
            runs.append((T, seed, "informed", inf_r[-1]))
            runs.append((T, seed, "ucb", ucb_r[-1]))
        mi, mu = float(np.mean(inf_r)), float(np.mean(ucb_r))
        table.append((T, mi, mu, mi / mu if mu > 0 else 0.0))
    return RatioResult(runs, table)
