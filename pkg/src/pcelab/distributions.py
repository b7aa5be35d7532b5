"""Task distributions over a finite MDP support, the complexity measure, and instance generators."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mdp import (
    TOL,
    InvalidMdpError,
    NoiseModel,
    TabularMdp,
    bandit_mdp,
    path_reward_bound,
    validate_mdp,
)

# Slack for comparing accumulated probability mass against 1 - delta.
MASS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class MdpDistribution:
    support: tuple
    probs: np.ndarray

    def __post_init__(self):
        support = tuple(self.support)
        probs = np.array(self.probs, dtype=float)
        if not support:
            raise ValueError("empty support")
        if probs.shape != (len(support),):
            raise ValueError(f"{len(support)} MDPs but {probs.shape} probabilities")
        if (probs < 0).any() or abs(probs.sum() - 1.0) > TOL:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        shape = support[0].shape
        for i, m in enumerate(support):
            if m.shape != shape:
                raise ValueError(f"member {i} has (S,A,H)={m.shape}, expected {shape}")
            report = validate_mdp(m)
            if not report.ok:
                raise InvalidMdpError(f"member {i}: " + "; ".join(v.message for v in report.violations))
        probs = probs / probs.sum()
        probs.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    def __len__(self):
        return len(self.support)

    @property
    def num_states(self) -> int:
        return self.support[0].num_states

    @property
    def num_actions(self) -> int:
        return self.support[0].num_actions

    @property
    def horizon(self) -> int:
        return self.support[0].horizon

    @classmethod
    def uniform(cls, support: Sequence[TabularMdp]) -> "MdpDistribution":
        return cls(tuple(support), np.full(len(support), 1.0 / len(support)))

    def with_probs(self, probs) -> "MdpDistribution":
        return MdpDistribution(self.support, probs)


def sample_mdp(dist: MdpDistribution, rng: np.random.Generator) -> int:
    return int(sample_indices(dist, 1, rng)[0])


def sample_indices(dist: MdpDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(dist.probs)
    idx = np.searchsorted(cum, rng.random(n), side="right")
    idx = np.minimum(idx, len(dist) - 1)
    # float round-off in cum can leave the last bucket reachable with zero mass
    bad = dist.probs[idx] == 0
    if bad.any():
        idx[bad] = np.flatnonzero(dist.probs)[-1]
    return idx


def complexity_measure(dist: MdpDistribution | np.ndarray, delta: float) -> int:
    """Smallest number of support members whose total probability reaches ``1 - delta``."""
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    probs = dist.probs if isinstance(dist, MdpDistribution) else np.asarray(dist, dtype=float)
    cum = np.cumsum(np.sort(probs)[::-1])
    k = int(np.searchsorted(cum, 1.0 - delta - MASS_TOL, side="left")) + 1
    return min(k, len(probs))


def gen_proposition1_instance(M: int, probs=None, noise: NoiseModel | None = None) -> MdpDistribution:
    """M one-step MDPs; in member i action i pays 1 and every other action pays 0."""
    if M < 2:
        raise ValueError("need M >= 2")
    noise = noise or NoiseModel.bernoulli()
    support = [bandit_mdp(np.eye(M)[i], noise) for i in range(M)]
    if probs is None:
        return MdpDistribution.uniform(support)
    return MdpDistribution(tuple(support), probs)


def gen_theorem3_instance(M: int, delta_gap: float) -> MdpDistribution:
    """Uniform mixture of M Gaussian bandits; arm j of member i has mean 1/2 + gap * [i == j]."""
    if M < 2:
        raise ValueError("need M >= 2")
    if not 0 < delta_gap <= 0.5:
        raise ValueError("delta_gap must lie in (0, 1/2]")
    support = [bandit_mdp(0.5 + delta_gap * np.eye(M)[i], NoiseModel.gaussian(1.0)) for i in range(M)]
    return MdpDistribution.uniform(support)


def gen_exponential_tail(base_family: Sequence[TabularMdp], lam: float) -> MdpDistribution:
    """Weights ``exp(-lam * i)`` over the family, normalized."""
    if not lam > 0:
        raise ValueError("decay rate must be positive")
    if not base_family:
        raise ValueError("empty family")
    w = np.exp(-lam * np.arange(len(base_family)))
    return MdpDistribution(tuple(base_family), w / w.sum())


def random_tabular_mdp(S: int, A: int, H: int, rng: np.random.Generator,
                       noise: NoiseModel | None = None) -> TabularMdp:
    P = rng.dirichlet(np.ones(S), size=(H, S, A))
    r = rng.random((H, S, A))
    r[0, 1:, :] = 0.0  # states other than s_1 are unreachable at the first step
    mdp = TabularMdp(P, r, noise or NoiseModel.bernoulli(), 0)
    bound = path_reward_bound(mdp)[0, 0]
    return TabularMdp(P, r / bound, mdp.noise, 0)


def gen_random_tabular(S: int, A: int, H: int, num_mdps: int, rng: np.random.Generator,
                       noise: NoiseModel | None = None) -> MdpDistribution:
    if min(S, A, H, num_mdps) < 1:
        raise ValueError("sizes must be >= 1")
    support = [random_tabular_mdp(S, A, H, rng, noise) for _ in range(num_mdps)]
    return MdpDistribution.uniform(support)


def tail_truncation_size(lam: float, tail_mass: float = 1e-12) -> int:
    """Members of an infinite ``exp(-lam i)`` family kept when the dropped tail mass is at most ``tail_mass``."""
    return max(1, math.ceil(math.log(1.0 / tail_mass) / lam))
