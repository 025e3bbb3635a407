import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from d2dpower.mdp import (MdpSpec, RviNotConverged, StateSpaceTooLarge, arrival_pmf, build_quantized_mdp,
                          channel_levels, clipped_mass, compare_priority, evaluate_policy,
                          export_policy_table, export_value_table, flow_params_for, policy_iteration,
                          rank_average, relative_value_iteration, spearman, stationary_distribution)
from d2dpower.priority import build_per_flow


@pytest.fixture(scope="module")
def default_solved():
    mdp = build_quantized_mdp(MdpSpec())
    return mdp, relative_value_iteration(mdp)


@pytest.mark.parametrize("m", [1, 2, 5, 8])
def test_channel_levels_are_conditional_means(m):
    reps, probs = channel_levels(m)
    assert probs.sum() == pytest.approx(1.0)
    edges = [-math.log1p(-i / m) for i in range(m)] + [math.inf]
    for i in range(m):
        num, _ = integrate.quad(lambda x: x * math.exp(-x), edges[i], edges[i + 1])
        assert reps[i] == pytest.approx(num * m, rel=1e-10)
    # the mean of Exp(1) is preserved
    assert reps @ probs == pytest.approx(1.0, rel=1e-12)


@given(st.floats(0.01, 5.0), st.integers(1, 30))
def test_arrival_pmf_sums_to_one(mean, top):
    pmf = arrival_pmf(mean, top)
    assert pmf.shape == (top + 1,)
    assert np.all(pmf >= 0)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(pmf[:-1], stats.poisson.pmf(np.arange(top), mean), rtol=1e-10)


def test_arrival_pmf_zero_mean():
    np.testing.assert_array_equal(arrival_pmf(0.0, 4), [1, 0, 0, 0, 0])


def test_kernel_rows_are_distributions(default_solved):
    mdp, _ = default_solved
    assert mdp.exo_prob.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(mdp.trans.sum(axis=-1), 1.0, atol=1e-10)
    assert np.all(mdp.trans >= 0)


def test_kernel_matches_hand_enumeration():
    spec = MdpSpec(queue_packets=2, channel_levels=2, power_levels=2, arrival_max_packets=1,
                   noise=0.5, arrival_rate=(700.0,))
    mdp = build_quantized_mdp(spec)
    reps, _ = channel_levels(2)
    p1 = 1.0 - math.exp(-0.7)  # one arrival (tail folded)
    for e in range(2):
        for a, power in enumerate((0.0, 1.0)):
            rate = math.log2(1.0 + power * reps[e] / 0.5)
            for q in range(3):
                expected = np.zeros(3)
                served = min(2, max(0, int(math.floor(max(q - rate, 0.0) + 0.5))))
                expected[served] += 1 - p1
                expected[min(served + 1, 2)] += p1
                np.testing.assert_allclose(mdp.trans[e, a, q], expected, atol=1e-14)
                assert mdp.cost[a, q] == pytest.approx(q / 0.7 + 10.0 * power)


def test_single_queue_level_has_zero_cost():
    mdp = build_quantized_mdp(MdpSpec(queue_packets=0))
    res = relative_value_iteration(mdp)
    assert res.theta == 0.0
    assert np.all(mdp.actions[res.policy[:, 0], 0] == 0.0)


def test_rvi_agrees_with_policy_iteration(default_solved):
    mdp, rvi = default_solved
    pi = policy_iteration(mdp)
    assert rvi.theta == pytest.approx(pi.theta, rel=1e-8)
    np.testing.assert_allclose(rvi.V, pi.V, rtol=1e-6, atol=1e-6 * np.abs(pi.V).max())
    theta, _ = evaluate_policy(mdp, rvi.policy)
    assert theta == pytest.approx(pi.theta, rel=1e-8)


def test_value_and_policy_are_monotone(default_solved):
    mdp, res = default_solved
    assert np.all(np.diff(res.V) > 0)
    powers = mdp.actions[res.policy, 0]  # (E, S)
    assert np.all(np.diff(powers, axis=1) >= 0)
    # better channels never get a higher switch-on queue
    on = [np.flatnonzero(row > 0)[0] if (row > 0).any() else powers.shape[1] for row in powers]
    assert np.all(np.diff(on) <= 0)
    assert np.all(powers[:, 0] == 0)


def test_rvi_budget_and_size_guards():
    mdp = build_quantized_mdp(MdpSpec())
    with pytest.raises(RviNotConverged):
        relative_value_iteration(mdp, max_sweeps=2)
    with pytest.raises(StateSpaceTooLarge):
        build_quantized_mdp(MdpSpec(cell_budget=1e3))
    with pytest.raises(ValueError):
        MdpSpec(gain=((1.0, 0.1),), arrival_rate=(1.0,))


def test_clipped_mass_small(default_solved):
    mdp, res = default_solved
    pi = stationary_distribution(mdp, res.policy)
    assert pi.sum() == pytest.approx(1.0)
    assert clipped_mass(mdp, res) < 1e-3


@given(st.lists(st.integers(-5, 5), min_size=2, max_size=30))
def test_rank_average_matches_scipy(xs):
    np.testing.assert_allclose(rank_average(xs), stats.rankdata(xs))


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=40),
       st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=40))
def test_spearman_matches_scipy(xs, ys):
    n = min(len(xs), len(ys))
    x, y = np.array(xs[:n]), np.array(ys[:n])
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return
    assert spearman(x, y) == pytest.approx(stats.spearmanr(x, y).statistic, abs=1e-12)


def test_priority_comparison_on_default_instance(default_solved):
    mdp, res = default_solved
    pf = build_per_flow(flow_params_for(mdp.spec), q_max_table=1e4)
    cmp = compare_priority(mdp, res, pf)
    assert cmp.spearman == pytest.approx(spearman(res.V, pf.value(mdp.queue_grid)))
    assert cmp.spearman > 0.99
    assert cmp.threshold_rvi.shape == (mdp.spec.channel_levels,)
    assert spearman(pf.value(mdp.queue_grid), pf.value(mdp.queue_grid)) == 1.0


def test_two_flow_instance():
    spec = MdpSpec(gain=((1.0, 0.2), (0.3, 1.0)), arrival_rate=(300.0, 400.0), beta=(1.0, 2.0),
                   gamma=(5.0, 5.0), queue_packets=4, channel_levels=2, power_levels=3,
                   arrival_max_packets=4)
    mdp = build_quantized_mdp(spec)
    assert mdp.num_states == 25
    np.testing.assert_allclose(mdp.trans.sum(axis=-1), 1.0, atol=1e-10)
    rvi, pi = relative_value_iteration(mdp), policy_iteration(mdp)
    assert rvi.theta == pytest.approx(pi.theta, rel=1e-8)
    with pytest.raises(ValueError):
        flow_params_for(spec)


def test_exports(default_solved, tmp_path):
    mdp, res = default_solved
    pf = build_per_flow(flow_params_for(mdp.spec), q_max_table=1e4)
    export_value_table(mdp, res, tmp_path / "v.csv", pf)
    export_policy_table(mdp, res, tmp_path / "p.csv")
    v = np.genfromtxt(tmp_path / "v.csv", delimiter=",", names=True)
    np.testing.assert_array_equal(v["V"], res.V)
    p = np.genfromtxt(tmp_path / "p.csv", delimiter=",", names=True)
    assert p.size == mdp.exo_prob.size * mdp.num_states


def test_no_arrivals_no_power_is_absorbing():
    mdp = build_quantized_mdp(MdpSpec(arrival_rate=(1e-300,), queue_packets=5))
    zero = int(np.flatnonzero(mdp.actions[:, 0] == 0)[0])
    np.testing.assert_allclose(mdp.trans[:, zero, 0, 0], 1.0, atol=1e-15)


def test_deterministic_channel_single_action_is_a_shift():
    spec = MdpSpec(channel_levels=1, power_levels=1, queue_packets=6, arrival_max_packets=2)
    mdp = build_quantized_mdp(spec)
    pmf = arrival_pmf(1.0, 2)
    assert mdp.exo_prob.tolist() == [1.0]
    for q in range(7):
        expected = np.zeros(7)
        for a, p in enumerate(pmf):
            expected[min(q + a, 6)] += p
        np.testing.assert_allclose(mdp.trans[0, 0, q], expected, atol=1e-15)
