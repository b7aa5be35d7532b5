import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import chain_mdp, policies_for, small_mdps
from reference import all_deterministic_tables, trajectory_value
from pcelab.distributions import gen_proposition1_instance
from pcelab.mdp import (DimensionMismatch, EpisodeSampler, InvalidMdpError, NoiseModel, Policy, TabularMdp,
                        all_deterministic_values, bandit_mdp, deterministic_action_tables, deterministic_values,
                        exact_value, iter_deterministic_policies, optimal_policy, optimal_value,
                        path_reward_bound, policy_distance, policy_value, require_valid, simulate_episode,
                        simulate_returns, stack_models, validate_mdp)
from pcelab.rng import child_stream


def one_step(r, noise=None):
    return TabularMdp(np.ones((1, 1, 1, 1)), np.array([[[r]]]), noise or NoiseModel.deterministic(), 0)


# validate_mdp

def test_valid_degenerate_chain():
    assert validate_mdp(one_step(0.7)).ok


def test_assumption1_violation_reported():
    report = validate_mdp(one_step(1.5))
    assert not report.ok
    assert [v.kind for v in report.violations] == ["assumption1"]


def test_proposition1_members_valid():
    for m in gen_proposition1_instance(4).support:
        assert validate_mdp(m).ok


def test_negative_reward_and_bernoulli_range_located():
    r = np.array([[[0.5, -0.2]]])
    mdp = TabularMdp(np.ones((1, 1, 2, 1)), r, NoiseModel.deterministic(), 0)
    kinds = {(v.kind, v.location) for v in validate_mdp(mdp).violations}
    assert ("negative_reward", (0, 0, 1)) in kinds
    mdp = TabularMdp(np.ones((1, 1, 1, 1)), np.array([[[1.2]]]), NoiseModel.bernoulli(), 0)
    assert "bernoulli_range" in {v.kind for v in validate_mdp(mdp).violations}
    with pytest.raises(InvalidMdpError):
        require_valid(mdp)


def test_transition_rows_renormalized_or_rejected():
    P = np.array([[[[0.5, 0.5 + 5e-10]], [[1.0, 0.0]]]])
    mdp = TabularMdp(P, np.zeros((1, 2, 1)), NoiseModel.deterministic(), 0)
    assert abs(mdp.transitions.sum(-1) - 1).max() < 1e-15
    bad = TabularMdp(np.array([[[[0.5, 0.6]], [[1.0, 0.0]]]]), np.zeros((1, 2, 1)), NoiseModel.deterministic(), 0)
    assert [(v.kind, v.location) for v in validate_mdp(bad).violations] == [("transition_sum", (0, 0, 0))]
    with pytest.raises(InvalidMdpError):
        require_valid(bad)


@given(small_mdps())
def test_generated_mdps_valid_and_bound_tight(mdp):
    assert validate_mdp(mdp).ok
    assert path_reward_bound(mdp)[0, mdp.initial_state] == pytest.approx(1.0, abs=1e-12)


# exact_value

def test_one_step_value():
    mdp = one_step(0.7)
    assert exact_value(mdp, Policy.uniform(1, 1, 1)).value(0) == pytest.approx(0.7)


def test_chain_values(chain):
    go = Policy.deterministic([[1, 0], [0, 0]], 2)
    stay = Policy.deterministic([[0, 0], [0, 0]], 2)
    assert policy_value(chain, go) == pytest.approx(0.7, abs=1e-15)
    assert policy_value(chain, stay) == pytest.approx(0.4, abs=1e-15)


def test_chain_values_match_brute_force(chain):
    for probs in ([[[0, 1], [1, 0]], [[1, 0], [1, 0]]], [[[1, 0], [1, 0]], [[1, 0], [1, 0]]]):
        pi = Policy(np.array(probs, dtype=float))
        assert policy_value(chain, pi) == pytest.approx(
            trajectory_value(chain.transitions, chain.mean_rewards, 0, pi.probs), abs=1e-15)


def test_dimension_mismatch(chain):
    with pytest.raises(DimensionMismatch):
        exact_value(chain, Policy.uniform(2, 2, 3))


@given(st.data())
def test_exact_value_matches_trajectory_enumeration(data):
    mdp = data.draw(small_mdps())
    pi = data.draw(policies_for(mdp.horizon, mdp.num_states, mdp.num_actions))
    ref = trajectory_value(mdp.transitions, mdp.mean_rewards, mdp.initial_state, pi.probs)
    assert policy_value(mdp, pi) == pytest.approx(ref, abs=1e-10)


@given(st.data())
def test_value_table_consistency_and_range(data):
    mdp = data.draw(small_mdps())
    pi = data.draw(policies_for(mdp.horizon, mdp.num_states, mdp.num_actions))
    vt = exact_value(mdp, pi)
    assert np.allclose(vt.V[:-1], (pi.probs * vt.Q).sum(-1), atol=1e-12)
    assert (vt.V[-1] == 0).all()
    reachable_max = path_reward_bound(mdp)
    # entries can exceed 1 only at unreachable states; bound them by the path bound there
    assert (vt.V <= np.maximum(reachable_max, 1.0) + 1e-9).all() and (vt.V >= 0).all()
    assert vt.value(mdp.initial_state) <= 1 + 1e-9


# optimal_policy

def test_proposition1_optimal():
    for i, m in enumerate(gen_proposition1_instance(3).support):
        pi, vt = optimal_policy(m)
        assert pi.greedy_actions[0][0] == i
        assert vt.value(0) == 1.0


def test_chain_optimal_matches_enumeration(chain):
    pi, vt = optimal_policy(chain)
    assert pi.greedy_actions[0][0] == 1
    assert vt.value(0) == pytest.approx(0.7)
    best = max(trajectory_value(chain.transitions, chain.mean_rewards, 0, np.eye(2)[t])
               for t in all_deterministic_tables(2, 2, 2))
    assert vt.value(0) == pytest.approx(best, abs=1e-15)


def test_ties_break_to_lowest_action():
    mdp = TabularMdp(np.ones((2, 1, 3, 1)), np.full((2, 1, 3), 0.2), NoiseModel.deterministic(), 0)
    pi, _ = optimal_policy(mdp)
    assert (pi.greedy_actions == 0).all()


@given(small_mdps(max_s=2, max_a=2, max_h=3))
def test_optimal_dominates_every_deterministic_policy(mdp):
    best = optimal_value(mdp)
    for pi in iter_deterministic_policies(mdp.horizon, mdp.num_states, mdp.num_actions):
        assert policy_value(mdp, pi) <= best + 1e-12


# batched deterministic values

@given(st.lists(small_mdps(max_s=2, max_a=3, max_h=2), min_size=1, max_size=1), st.booleans())
def test_batched_values_match_single(mdps, clip):
    m = mdps[0]
    P, R, starts = stack_models([m, m.with_noise(NoiseModel.gaussian())])
    tables = deterministic_action_tables(m.horizon, m.num_states, m.num_actions)
    c = 1.0 if clip else None
    got = deterministic_values(P, R, starts, tables, clip=c)
    assert np.array_equal(got, all_deterministic_values(P, R, starts, clip=c))
    for b, pi in enumerate(iter_deterministic_policies(m.horizon, m.num_states, m.num_actions)):
        assert np.array_equal(tables[b], pi.greedy_actions)
        assert got[b, 0] == pytest.approx(policy_value(m, pi), abs=1e-12)


# simulation

def test_deterministic_episode_equals_value(chain):
    pi = Policy.deterministic([[1, 0], [0, 0]], 2)
    traj = simulate_episode(chain, pi, child_stream(0, 0))
    assert traj.total_return == pytest.approx(0.7, abs=1e-15)
    assert len(traj) == 2 and traj.total_return == sum(traj.rewards)
    assert traj.states == (0, 1) and traj.final_state == 0


def test_bernoulli_mean():
    mdp = one_step(0.7, NoiseModel.bernoulli())
    g = simulate_returns(mdp, Policy.uniform(1, 1, 1), 100_000, child_stream(1, 0))
    assert abs(g.mean() - 0.7) <= 0.01
    assert set(np.unique(g)) <= {0.0, 1.0}


def test_gaussian_variance():
    mdp = bandit_mdp(np.array([0.5]), NoiseModel.gaussian(1.0))
    g = simulate_returns(mdp, Policy.uniform(1, 1, 1), 100_000, child_stream(2, 0))
    assert abs(g.var(ddof=1) - 1.0) <= 0.05


def test_sequential_and_vectorized_agree_in_distribution():
    mdp = chain_mdp(NoiseModel.bernoulli())
    pi = Policy(np.full((2, 2, 2), 0.5))
    sampler = EpisodeSampler(mdp, child_stream(3, 0))
    seq = np.array([sampler.run(pi).total_return for _ in range(40_000)])
    vec = simulate_returns(mdp, pi, 40_000, child_stream(3, 1))
    v = policy_value(mdp, pi)
    for g in (seq, vec):
        assert abs(g.mean() - v) < 4 * 0.5 / math.sqrt(len(g))


def test_simulation_reproducible():
    mdp = chain_mdp(NoiseModel.bernoulli())
    pi = Policy(np.full((2, 2, 2), 0.5))
    a = [simulate_episode(mdp, pi, child_stream(4, 0)) for _ in range(3)]
    assert a[0] == a[1] == a[2]


def test_returns_concentrate_around_value():
    # deviation above sqrt(2 ln(2/0.01)/n) in at most 1% of trials (allowing 3-sigma binomial slack)
    mdp = chain_mdp(NoiseModel.bernoulli())
    pi = Policy(np.full((2, 2, 2), 0.5))
    v, n, trials = policy_value(mdp, pi), 200, 2000
    g = simulate_returns(mdp, pi, n * trials, child_stream(5, 0)).reshape(trials, n).mean(1)
    rate = (np.abs(g - v) > math.sqrt(2 * math.log(2 / 0.01) / n)).mean()
    assert rate <= 0.01 + 3 * math.sqrt(0.01 * 0.99 / trials)


# policy_distance

def test_distance_examples():
    a = Policy.deterministic([[0, 1]], 2)
    b = Policy.deterministic([[0, 0]], 2)
    assert policy_distance(a, a) == 0
    assert policy_distance(a, b) == 2
    assert policy_distance(Policy.uniform(1, 1, 2), Policy.deterministic([[0]], 2)) == pytest.approx(1.0)
    with pytest.raises(DimensionMismatch):
        policy_distance(a, Policy.uniform(1, 2, 3))


@given(st.data())
def test_distance_is_pseudometric(data):
    H, S, A = data.draw(st.integers(1, 3)), data.draw(st.integers(1, 3)), data.draw(st.integers(1, 3))
    p, q, r = (data.draw(policies_for(H, S, A)) for _ in range(3))
    assert policy_distance(p, p) == 0
    assert policy_distance(p, q) == policy_distance(q, p)
    assert 0 <= policy_distance(p, q) <= 2 + 1e-12
    assert policy_distance(p, r) <= policy_distance(p, q) + policy_distance(q, r) + 1e-12


def test_policy_validation():
    with pytest.raises(ValueError):
        Policy(np.array([[[0.5, 0.6]]]))
    with pytest.raises(ValueError):
        Policy.deterministic([[2]], 2)
    p = Policy.deterministic([[1, 0]], 2)
    assert p.is_deterministic and p == Policy(np.array([[[0.0, 1.0], [1.0, 0.0]]]))
    assert hash(p) == hash(Policy(np.array([[[0.0, 1.0], [1.0, 0.0]]])))
