"""Opaque environment handle: algorithms may roll out policies but never read the model."""

from __future__ import annotations

import numpy as np

from .mdp import EpisodeSampler, Policy, TabularMdp, Trajectory


class EnvHandle:
    """Metered access to a hidden MDP.

    The only observable operations are :meth:`rollout`, :meth:`rollout_returns`
    and the episode counter. Sizes (S, A, H) and the start state are public.
    """

    __slots__ = ("__mdp", "__sampler", "__episodes")

    def __init__(self, mdp: TabularMdp, rng: np.random.Generator):
        self.__mdp = mdp
        self.__sampler = EpisodeSampler(mdp, rng)
        self.__episodes = 0

    @property
    def num_states(self) -> int:
        return self.__mdp.num_states

    @property
    def num_actions(self) -> int:
        return self.__mdp.num_actions

    @property
    def horizon(self) -> int:
        return self.__mdp.horizon

    @property
    def initial_state(self) -> int:
        return self.__mdp.initial_state

    @property
    def episodes(self) -> int:
        return self.__episodes

    def rollout(self, policy: Policy) -> Trajectory:
        traj = self.__sampler.run(policy)
        self.__episodes += 1
        return traj

    def rollout_returns(self, policy: Policy, n: int) -> np.ndarray:
        out = self.__sampler.returns(policy, n)
        self.__episodes += n
        return out

    def __repr__(self):
        S, A, H = self.num_states, self.num_actions, self.horizon
        return f"EnvHandle(S={S}, A={A}, H={H}, episodes={self.__episodes})"


def unwrap(handle: EnvHandle) -> TabularMdp:
    """White-box access for cheat oracles and regret measurement only."""
    return handle._EnvHandle__mdp
