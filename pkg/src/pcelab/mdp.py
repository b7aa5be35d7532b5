"""Tabular episodic MDPs, tabular policies, exact dynamic programming and simulation.

Arrays are indexed from zero: step ``h`` runs over ``0..H-1`` and the value table
carries one extra terminal row ``V[H] = 0``.
"""

from __future__ import annotations

import bisect
import itertools
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterator, Literal, Sequence

import numpy as np

TOL = 1e-9
EXACT_TOL = 1e-12  # rows this close to one are kept bit-for-bit, so reconstruction is idempotent

NoiseKind = Literal["deterministic", "gaussian", "bernoulli"]


class InvalidMdpError(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    kind: NoiseKind = "deterministic"
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("deterministic", "gaussian", "bernoulli"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise ValueError("gaussian noise needs sigma > 0")

    @classmethod
    def deterministic(cls) -> "NoiseModel":
        return cls("deterministic")

    @classmethod
    def gaussian(cls, sigma: float = 1.0) -> "NoiseModel":
        return cls("gaussian", float(sigma))

    @classmethod
    def bernoulli(cls) -> "NoiseModel":
        return cls("bernoulli")


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def _renormalize_rows(p: np.ndarray) -> np.ndarray:
    """Rescale rows whose sum is within TOL of one; leave others for validation."""
    sums = p.sum(axis=-1, keepdims=True)
    err = np.abs(sums - 1.0)
    fix = (err <= TOL) & (err > EXACT_TOL)
    return np.where(fix, p / np.where(fix, sums, 1.0), p)


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Episodic tabular MDP with step-dependent transitions ``P[h,s,a,s']`` and mean rewards ``r[h,s,a]``.

    Construction checks shapes only. Probability rows within 1e-9 of summing to
    one are renormalized; anything else is left for :func:`validate_mdp` to report.
    """

    transitions: np.ndarray
    mean_rewards: np.ndarray
    noise: NoiseModel = field(default_factory=NoiseModel)
    initial_state: int = 0

    def __post_init__(self):
        p = np.array(self.transitions, dtype=float)
        r = np.array(self.mean_rewards, dtype=float)
        if p.ndim != 4 or p.shape[2] == 0 or p.shape[1] != p.shape[3]:
            raise DimensionMismatch(f"transitions must have shape (H,S,A,S), got {p.shape}")
        if r.shape != p.shape[:3]:
            raise DimensionMismatch(f"mean_rewards shape {r.shape} does not match {p.shape[:3]}")
        if not 0 <= int(self.initial_state) < p.shape[1]:
            raise DimensionMismatch(f"initial state {self.initial_state} out of range")
        object.__setattr__(self, "transitions", _frozen(_renormalize_rows(p)))
        object.__setattr__(self, "mean_rewards", _frozen(r))
        object.__setattr__(self, "initial_state", int(self.initial_state))

    @property
    def horizon(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.num_states, self.num_actions, self.horizon

    @cached_property
    def _cum_transitions(self) -> list:
        return np.cumsum(self.transitions, axis=-1).tolist()

    @cached_property
    def _cum_transitions_array(self) -> np.ndarray:
        return np.cumsum(self.transitions, axis=-1)

    @cached_property
    def _mean_list(self) -> list:
        return self.mean_rewards.tolist()

    def with_noise(self, noise: NoiseModel) -> "TabularMdp":
        return TabularMdp(self.transitions, self.mean_rewards, noise, self.initial_state)


@dataclass(frozen=True, eq=False)
class Policy:
    """Stochastic tabular policy ``probs[h, s, a]``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 3:
            raise DimensionMismatch(f"policy must have shape (H,S,A), got {p.shape}")
        if (p < -TOL).any() or np.abs(p.sum(-1) - 1.0).max(initial=0.0) > TOL:
            raise ValueError("policy rows must be probability vectors")
        p = _renormalize_rows(np.clip(p, 0.0, None))
        object.__setattr__(self, "probs", _frozen(p))

    @classmethod
    def deterministic(cls, actions, num_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        if actions.ndim != 2 or (actions < 0).any() or (actions >= num_actions).any():
            raise ValueError("actions must be an (H,S) table of valid action indices")
        return cls._trusted(np.eye(num_actions)[actions])

    @classmethod
    def _trusted(cls, probs: np.ndarray) -> "Policy":
        # skips validation; callers guarantee rows are point masses or distributions
        obj = object.__new__(cls)
        probs.setflags(write=False)
        object.__setattr__(obj, "probs", probs)
        return obj

    @classmethod
    def uniform(cls, horizon: int, num_states: int, num_actions: int) -> "Policy":
        return cls(np.full((horizon, num_states, num_actions), 1.0 / num_actions))

    @property
    def horizon(self) -> int:
        return self.probs.shape[0]

    @property
    def num_states(self) -> int:
        return self.probs.shape[1]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[2]

    @cached_property
    def key(self) -> bytes:
        return self.probs.tobytes()

    @cached_property
    def is_deterministic(self) -> bool:
        return bool(np.all(self.probs.max(-1) == 1.0))

    @cached_property
    def greedy_actions(self) -> np.ndarray:
        return self.probs.argmax(-1)

    @cached_property
    def _det_list(self) -> list:
        # action index where the row is a point mass, else -1
        det = np.where(self.probs.max(-1) == 1.0, self.probs.argmax(-1), -1)
        return det.tolist()

    @cached_property
    def _cum_list(self) -> list:
        return np.cumsum(self.probs, axis=-1).tolist()

    def __eq__(self, other):
        return isinstance(other, Policy) and self.probs.shape == other.probs.shape and self.key == other.key

    def __hash__(self):
        return hash(self.key)


@dataclass(frozen=True)
class Trajectory:
    states: tuple
    actions: tuple
    rewards: tuple
    total_return: float
    final_state: int = -1

    def __len__(self):
        return len(self.states)


@dataclass(frozen=True, eq=False)
class ValueTable:
    """``V`` has shape (H+1, S) with a zero terminal row; ``Q`` has shape (H, S, A)."""

    V: np.ndarray
    Q: np.ndarray

    def value(self, state: int, step: int = 0) -> float:
        return float(self.V[step, state])


@dataclass(frozen=True)
class Violation:
    kind: str
    location: tuple
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def path_reward_bound(mdp: TabularMdp) -> np.ndarray:
    """Max total mean reward over positive-probability trajectories, per (h, s); shape (H+1, S)."""
    H, S = mdp.horizon, mdp.num_states
    U = np.zeros((H + 1, S))
    support = mdp.transitions > 0
    for h in range(H - 1, -1, -1):
        nxt = np.where(support[h], U[h + 1][None, None, :], -np.inf).max(-1)
        U[h] = (mdp.mean_rewards[h] + nxt).max(-1)
    return U


def validate_mdp(mdp: TabularMdp) -> ValidationReport:
    out: list[Violation] = []
    p, r = mdp.transitions, mdp.mean_rewards
    for h, s, a in zip(*np.nonzero(np.abs(p.sum(-1) - 1.0) > TOL)):
        out.append(Violation("transition_sum", (int(h), int(s), int(a)),
                             f"row sums to {p[h, s, a].sum():.12g}"))
    for h, s, a in zip(*np.nonzero((p < 0).any(-1))):
        out.append(Violation("transition_negative", (int(h), int(s), int(a)), "negative probability"))
    for h, s, a in zip(*np.nonzero(r < 0)):
        out.append(Violation("negative_reward", (int(h), int(s), int(a)), f"mean reward {r[h, s, a]:.12g} < 0"))
    if mdp.noise.kind == "bernoulli":
        for h, s, a in zip(*np.nonzero(r > 1)):
            out.append(Violation("bernoulli_range", (int(h), int(s), int(a)),
                                 f"bernoulli mean {r[h, s, a]:.12g} > 1"))
    bound = path_reward_bound(mdp)[0, mdp.initial_state]
    if bound > 1 + TOL:
        out.append(Violation("assumption1", (0, mdp.initial_state),
                             f"max path reward {bound:.12g} exceeds 1"))
    return ValidationReport(tuple(out))


def require_valid(mdp: TabularMdp) -> None:
    report = validate_mdp(mdp)
    if not report.ok:
        raise InvalidMdpError("; ".join(v.message for v in report.violations))


def _check_dims(mdp: TabularMdp, policy: Policy) -> None:
    if policy.probs.shape != (mdp.horizon, mdp.num_states, mdp.num_actions):
        raise DimensionMismatch(
            f"policy shape {policy.probs.shape} vs mdp (H,S,A)={(mdp.horizon, mdp.num_states, mdp.num_actions)}")


def exact_value(mdp: TabularMdp, policy: Policy) -> ValueTable:
    _check_dims(mdp, policy)
    H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    for h in range(H - 1, -1, -1):
        Q[h] = mdp.mean_rewards[h] + mdp.transitions[h] @ V[h + 1]
        V[h] = (policy.probs[h] * Q[h]).sum(-1)
    return ValueTable(V, Q)


def policy_value(mdp: TabularMdp, policy: Policy) -> float:
    """``V^pi_1(s_1)``."""
    return exact_value(mdp, policy).value(mdp.initial_state)


def optimal_policy(mdp: TabularMdp) -> tuple[Policy, ValueTable]:
    H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    actions = np.zeros((H, S), dtype=int)
    for h in range(H - 1, -1, -1):
        Q[h] = mdp.mean_rewards[h] + mdp.transitions[h] @ V[h + 1]
        actions[h] = Q[h].argmax(-1)  # first maximum: lowest action index
        V[h] = Q[h].max(-1)
    return Policy.deterministic(actions, A), ValueTable(V, Q)


def optimal_value(mdp: TabularMdp) -> float:
    return optimal_policy(mdp)[1].value(mdp.initial_state)


def iter_deterministic_policies(horizon: int, num_states: int, num_actions: int) -> Iterator[Policy]:
    """All ``A**(S*H)`` deterministic policies in lexicographic order of the (h, s) action table."""
    eye = np.eye(num_actions)
    for combo in itertools.product(range(num_actions), repeat=horizon * num_states):
        yield Policy(eye[np.array(combo).reshape(horizon, num_states)])


def deterministic_action_tables(horizon: int, num_states: int, num_actions: int) -> np.ndarray:
    """Array of shape (A**(S*H), H, S) listing every deterministic policy, lexicographic order."""
    n = horizon * num_states
    grid = np.indices((num_actions,) * n).reshape(n, -1).T if n else np.zeros((1, 0), dtype=int)
    return grid.reshape(-1, horizon, num_states)


def stack_models(mdps: Sequence[TabularMdp]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Transitions (M,H,S,A,S), rewards (M,H,S,A) and start states (M,) of several MDPs."""
    return (np.stack([m.transitions for m in mdps]), np.stack([m.mean_rewards for m in mdps]),
            np.array([m.initial_state for m in mdps]))


def deterministic_values(transitions: np.ndarray, rewards: np.ndarray, starts: np.ndarray,
                         tables: np.ndarray, clip: float | None = None,
                         chunk: int = 4096) -> np.ndarray:
    """Start-state values of many deterministic policies on many models at once.

    ``transitions`` is (M,H,S,A,S), ``rewards`` (M,H,S,A), ``tables`` (B,H,S) of
    action indices. With ``clip`` set, every Q entry is capped at that value (the
    optimistic recursion). Returns an array of shape (B, M).
    """
    M, H, S = rewards.shape[:3]
    out = np.empty((len(tables), M))
    for lo in range(0, len(tables), chunk):
        tab = tables[lo:lo + chunk]
        V = np.zeros((len(tab), M, S))
        for h in range(H - 1, -1, -1):
            Q = rewards[None, :, h] + np.einsum("msat,bmt->bmsa", transitions[:, h], V)
            if clip is not None:
                np.minimum(Q, clip, out=Q)
            idx = np.broadcast_to(tab[:, None, h, :, None], (len(tab), M, S, 1))
            V = np.take_along_axis(Q, idx, axis=-1)[..., 0]
        out[lo:lo + chunk] = V[:, np.arange(M), starts]
    return out


@lru_cache(maxsize=64)
def _step_tables(S: int, A: int) -> tuple[np.ndarray, np.ndarray]:
    """State and action index grids of every one-step action table, each (A**S, S)."""
    combos = deterministic_action_tables(1, S, A)[:, 0, :]
    return np.broadcast_to(np.arange(S), combos.shape), combos


def all_deterministic_values(transitions: np.ndarray, rewards: np.ndarray, starts: np.ndarray,
                             clip: float | None = None) -> np.ndarray:
    """Start-state values of every deterministic policy, in the order of ``deterministic_action_tables``.

    Builds values backwards one step at a time over all action tables for the
    remaining steps, so each suffix is evaluated once. Shape (A**(S*H), M).
    """
    M, H, S, A = rewards.shape
    if A ** (S * H) * M * S * A > 1 << 24:
        tables = deterministic_action_tables(H, S, A)
        return deterministic_values(transitions, rewards, starts, tables, clip)
    sidx, combos = _step_tables(S, A)
    V = None
    for h in range(H - 1, -1, -1):
        if V is None:
            Q = rewards[:, h, None].copy()
        else:
            Q = rewards[:, h, None] + np.einsum("msat,mbt->mbsa", transitions[:, h], V)
        if clip is not None:
            np.minimum(Q, clip, out=Q)
        V = Q[:, :, sidx, combos].transpose(0, 2, 1, 3).reshape(M, -1, S)
    if V is None:
        return np.zeros((1, M))
    return V[np.arange(M), :, starts].T


def policy_distance(p1: Policy, p2: Policy) -> float:
    if p1.probs.shape != p2.probs.shape:
        raise DimensionMismatch(f"{p1.probs.shape} vs {p2.probs.shape}")
    return float(np.abs(p1.probs - p2.probs).sum(-1).max(initial=0.0))


class EpisodeSampler:
    """Simulates episodes of one MDP from a caller-owned random stream.

    Uniform and normal variates are drawn from ``rng`` in blocks of ``block`` to
    keep the per-step cost low; the realized sequence is a deterministic function
    of the stream.
    """

    def __init__(self, mdp: TabularMdp, rng: np.random.Generator, block: int = 4096):
        self.mdp = mdp
        self.rng = rng
        self.block = block
        self._u: list = []
        self._ui = 0
        self._z: list = []
        self._zi = 0
        self._cum = mdp._cum_transitions
        self._means = mdp._mean_list
        self._kind = mdp.noise.kind
        self._sigma = mdp.noise.sigma

    def _uniform(self) -> float:
        if self._ui >= len(self._u):
            self._u = self.rng.random(self.block).tolist()
            self._ui = 0
        u = self._u[self._ui]
        self._ui += 1
        return u

    def _normal(self) -> float:
        if self._zi >= len(self._z):
            self._z = self.rng.standard_normal(self.block).tolist()
            self._zi = 0
        z = self._z[self._zi]
        self._zi += 1
        return z

    def run(self, policy: Policy) -> Trajectory:
        mdp = self.mdp
        _check_dims(mdp, policy)
        det, pcum = policy._det_list, policy._cum_list
        cum, means, kind = self._cum, self._means, self._kind
        s = mdp.initial_state
        states, actions, rewards = [], [], []
        total = 0.0
        last_a = mdp.num_actions - 1
        last_s = mdp.num_states - 1
        for h in range(mdp.horizon):
            a = det[h][s]
            if a < 0:
                a = min(bisect.bisect_right(pcum[h][s], self._uniform()), last_a)
            m = means[h][s][a]
            if kind == "deterministic":
                y = m
            elif kind == "gaussian":
                y = m + self._sigma * self._normal()
            else:
                y = 1.0 if self._uniform() < m else 0.0
            states.append(s)
            actions.append(a)
            rewards.append(y)
            total += y
            row = cum[h][s][a]
            s = min(bisect.bisect_right(row, self._uniform()), last_s)
        return Trajectory(tuple(states), tuple(actions), tuple(rewards), total, s)

    def returns(self, policy: Policy, n: int) -> np.ndarray:
        """Total returns of ``n`` independent episodes, simulated in one vectorized pass."""
        mdp = self.mdp
        _check_dims(mdp, policy)
        rng = self.rng
        states = np.full(n, mdp.initial_state)
        total = np.zeros(n)
        pcum = np.cumsum(policy.probs, axis=-1)
        tcum = mdp._cum_transitions_array
        A, S = mdp.num_actions, mdp.num_states
        for h in range(mdp.horizon):
            if policy.is_deterministic:
                acts = policy.greedy_actions[h][states]
            else:
                u = rng.random(n)
                acts = np.minimum((pcum[h][states] <= u[:, None]).sum(-1), A - 1)
            m = mdp.mean_rewards[h][states, acts]
            if self._kind == "deterministic":
                y = m
            elif self._kind == "gaussian":
                y = m + self._sigma * rng.standard_normal(n)
            else:
                y = (rng.random(n) < m).astype(float)
            total += y
            u = rng.random(n)
            states = np.minimum((tcum[h][states, acts] <= u[:, None]).sum(-1), S - 1)
        return total


def simulate_episode(mdp: TabularMdp, policy: Policy, rng: np.random.Generator) -> Trajectory:
    return EpisodeSampler(mdp, rng, block=1).run(policy)


def simulate_returns(mdp: TabularMdp, policy: Policy, n: int, rng: np.random.Generator) -> np.ndarray:
    return EpisodeSampler(mdp, rng).returns(policy, n)


def bandit_mdp(means: Sequence[float], noise: NoiseModel | None = None) -> TabularMdp:
    """One-state, one-step MDP whose actions are the arms of a bandit."""
    means = np.asarray(means, dtype=float)
    return TabularMdp(np.ones((1, 1, len(means), 1)), means.reshape(1, 1, -1),
                      noise or NoiseModel.gaussian(1.0), 0)
