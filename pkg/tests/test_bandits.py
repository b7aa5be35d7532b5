import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pcelab.bandits import (RATIO_NOTE, BanditInstance, PullRecord, as_bandits, asymptotic_ratio_experiment,
                            exact_cover_set, informed_elimination_run, pseudo_regret, ucb_index, ucb_run)
from pcelab.distributions import MdpDistribution, gen_proposition1_instance, gen_theorem3_instance
from pcelab.harness.report import loglog_slope
from pcelab.mdp import EpisodeSampler, NoiseModel, Policy, bandit_mdp, policy_value
from pcelab.rng import child_stream


def reference_support():
    """Five instances; instance i has best arm i. Instance 0 carries 80% of the mass and the top mean."""
    means = []
    for i in range(5):
        m = np.full(5, 0.5)
        m[i] = 0.95 if i == 0 else 0.9
        means.append(m)
    return MdpDistribution(tuple(bandit_mdp(m, NoiseModel.gaussian(1.0)) for m in means), [0.8] + [0.05] * 4)


def test_instance_invariants():
    b = BanditInstance(np.array([0.2, 0.9, 0.9]))
    assert b.best_mean == 0.9 and (b.gaps >= 0).all() and (b.gaps == 0).any()
    for bad in ([], [1.2], [-0.1, 0.5]):
        with pytest.raises(ValueError):
            BanditInstance(np.array(bad))


def test_index_example():
    f = 1 + 3 * math.log(3) ** 2
    assert f == pytest.approx(4.6208, abs=1e-4)
    assert ucb_index(0.4, 1, 3) == pytest.approx(0.4 + math.sqrt(2 * math.log(f)))
    assert ucb_index(0.4, 1, 3) == pytest.approx(2.1497, abs=1e-4)


def test_decomposition_example():
    b = BanditInstance(np.array([0.8, 0.5]))
    rec = PullRecord.from_log([0] * 7 + [1] * 3, np.zeros(10), 2)
    assert pseudo_regret(rec, b) == pytest.approx(0.9)
    assert pseudo_regret(PullRecord.from_log([0] * 5, np.zeros(5), 2), b) == 0


@given(st.integers(1, 6), st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_decomposition_identity(K, T, seed):
    rng = child_stream(seed, 0)
    b = BanditInstance(rng.random(K))
    arms = rng.integers(0, K, T)
    rec = PullRecord.from_log(arms, rng.standard_normal(T), K)
    by_step = math.fsum(b.best_mean - b.means[a] for a in arms)
    assert abs(pseudo_regret(rec, b) - by_step) <= 1e-12


def test_inconsistent_record_rejected():
    b = BanditInstance(np.array([0.5, 0.4]))
    rec = PullRecord(np.array([0, 1]), np.zeros(2), np.array([2, 1]), np.zeros(2))
    with pytest.raises(ValueError):
        pseudo_regret(rec, b)


def test_ucb_start_and_errors():
    b = BanditInstance(np.array([0.1, 0.5, 0.3, 0.9]))
    rec = ucb_run(b, 50, child_stream(0, 0))
    assert rec.arms[:4].tolist() == [0, 1, 2, 3]
    assert rec.steps == 50 and rec.counts.sum() == 50
    with pytest.raises(ValueError):
        ucb_run(b, 3, child_stream(0, 0))


def test_ucb_single_arm():
    rec = ucb_run(BanditInstance(np.array([0.4])), 1000, child_stream(1, 0))
    assert (rec.arms == 0).all() and pseudo_regret(rec, BanditInstance(np.array([0.4]))) == 0


def test_ucb_two_arm_bound():
    b = BanditInstance(np.array([0.7, 0.5]))
    T = 100_000
    bound = 9 * math.sqrt(2 * T * math.log(T))
    regrets = [pseudo_regret(ucb_run(b, T, child_stream(s, 0)), b) for s in range(20)]
    assert max(regrets) <= bound


def test_ucb_prefers_best_arm():
    b = BanditInstance(np.array([0.2, 0.8]))
    rec = ucb_run(b, 5000, child_stream(2, 0))
    assert rec.counts[1] > 0.8 * 5000


def test_bandit_and_mdp_simulate_identically():
    b = BanditInstance(np.array([0.3, 0.6, 0.45]))
    T = 500
    rec = ucb_run(b, T, child_stream(3, 0))
    mdp = b.to_mdp()
    sampler = EpisodeSampler(mdp, child_stream(3, 0), block=T)
    ys = [sampler.run(Policy.deterministic([[int(a)]], 3)).total_return for a in rec.arms]
    assert np.allclose(ys, rec.rewards, rtol=0, atol=1e-15)
    for a in range(3):
        assert policy_value(mdp, Policy.deterministic([[a]], 3)) == b.means[a]
    assert np.array_equal(BanditInstance.from_mdp(mdp).means, b.means)


# informed baseline

def test_exact_cover_set():
    pairs = exact_cover_set(gen_theorem3_instance(3, 0.3))
    assert [int(p.policy.greedy_actions[0, 0]) for p in pairs] == [0, 1, 2]
    assert [p.value for p in pairs] == pytest.approx([0.8, 0.8, 0.8])


def test_informed_single_instance():
    d = MdpDistribution((bandit_mdp(np.array([0.3, 0.9, 0.1]), NoiseModel.gaussian(1.0)),), [1.0])
    for T in (10, 200, 2000):
        for known in (True, False):
            rec = informed_elimination_run(d, known, T, child_stream(4, T))
            assert (rec.arms == 1).all()
            assert pseudo_regret(rec, as_bandits(d)[0]) == 0


def test_informed_proposition1_rate():
    """Regret should grow like sqrt(C(D) T): log-log slope about 0.5."""
    d = gen_proposition1_instance(4, noise=NoiseModel.gaussian(1.0))
    bandits = as_bandits(d)
    Ts = [250, 1000, 4000, 16000]
    means = []
    for T in Ts:
        r = []
        for s in range(40):
            rec = informed_elimination_run(d, True, T, child_stream(s, T, 1))
            r.append(pseudo_regret(rec, bandits[rec.instance_index]))
        means.append(float(np.mean(r)))
    slope = loglog_slope(Ts, means)
    print(f"informed regret on the 4-arm support: {means}, slope {slope:.3f}")
    assert abs(slope - 0.5) <= 0.1


def test_informed_theorem3_regret_positive():
    d = gen_theorem3_instance(4, 0.3)
    bandits = as_bandits(d)
    cs = []
    for T in (500, 2000):
        r = []
        for s in range(20):
            rec = informed_elimination_run(d, True, T, child_stream(s, T, 1))
            r.append(pseudo_regret(rec, bandits[rec.instance_index]))
        cs.append(np.mean(r) / math.sqrt(4 * T))
    assert min(cs) > 0


# ratio experiment

def test_ratio_single_instance_is_zero():
    d = MdpDistribution((bandit_mdp(np.array([0.2, 0.7]), NoiseModel.gaussian(1.0)),), [1.0])
    res = asymptotic_ratio_experiment(d, [20, 100], [0, 1, 2])
    assert [row[1] for row in res.table] == [0.0, 0.0]
    assert [row[3] for row in res.table] == [0.0, 0.0]
    assert res.note == RATIO_NOTE
    assert len(res.runs) == 2 * 2 * 3


def test_ratio_rejects_unsorted_grid():
    with pytest.raises(ValueError):
        asymptotic_ratio_experiment(reference_support(), [100, 50], [0])


def test_ratio_small_horizon_and_trend():
    seeds = list(range(200))
    grid = [50, 100, 200, 400, 800, 1600, 3200]
    res = asymptotic_ratio_experiment(reference_support(), grid, seeds)
    ratios = np.array([row[3] for row in res.table])
    print("ratio by T:", dict(zip(grid, ratios.round(3))))
    assert ratios[0] < 0.5
    ma = np.convolve(ratios, np.ones(3) / 3, mode="valid")
    print("3-point moving average:", ma.round(3))
    assert (np.diff(ma) >= 0).all()
