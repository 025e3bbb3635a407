import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from d2dpower.controller import (LN2, ControllerConfig, LinkContext, Policy, capacities,
                                 cellular_round_robin, csi_weights, per_stage_objective,
                                 queue_weights, solve_power_baseline, solve_power_proposed)


def ctx_for(k, gammas=1.0, noise=1.0, gap=1.0, coupled=True):
    mask = ~np.eye(k, dtype=bool) if coupled else np.zeros((k, k), dtype=bool)
    return LinkContext(np.full(k, gammas), mask, noise, gap, bandwidth=1.0, slot_duration=1.0)


def test_capacities_by_hand():
    H = np.array([[4.0, 1.0], [2.0, 3.0]])
    C = capacities(H, [1, 1], [1.0, 2.0], noise=1.0, sinr_gap=2.0)
    assert C[0] == pytest.approx(math.log2(1 + 4.0 / (2.0 * 3.0)))
    assert C[1] == pytest.approx(math.log2(1 + 6.0 / (2.0 * 3.0)))
    # an inactive interferer does not count
    C = capacities(H, [1, 0], [1.0, 2.0], noise=1.0)
    assert C[0] == pytest.approx(math.log2(5.0)) and C[1] == 0.0


def test_objective_by_hand():
    H = np.array([[2.0]])
    assert per_stage_objective(H, [1], [0.5], [1.0], [0.0], 1.0) == pytest.approx(1.0)
    assert per_stage_objective(H, [1], [0.5], [2.0], [4.0], 1.0) == pytest.approx(0.0)


def test_single_link_water_filling():
    ctx = ctx_for(1)
    d = solve_power_proposed(np.array([[2.0]]), [1], [LN2], ctx, ControllerConfig(p_max=1.0))
    assert d.P[0] == pytest.approx(0.5, abs=1e-15)
    assert d.converged and d.iters_used == 2


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(0.01, 100.0), st.floats(1.0, 4.0))
def test_single_link_closed_form(h, w, gamma, gap):
    ctx = LinkContext(np.array([gamma]), np.zeros((1, 1), bool), 0.1, gap)
    d = solve_power_proposed(np.array([[h]]), [1], [w], ctx, ControllerConfig(p_max=1e9))
    expected = max(w / (gamma * LN2) - gap * 0.1 / h, 0.0)
    assert d.P[0] == pytest.approx(expected, rel=1e-12, abs=1e-15)


def test_inactive_and_empty():
    ctx = ctx_for(3)
    H = np.full((3, 3), 0.1) + np.eye(3)
    d = solve_power_proposed(H, [1, 0, 1], [5.0, 5.0, 5.0], ctx, ControllerConfig(p_max=1.0))
    assert d.P[1] == 0.0 and d.P[0] > 0 and d.P[2] > 0
    d = solve_power_proposed(H, [0, 0, 0], [5.0, 5.0, 5.0], ctx, ControllerConfig(p_max=1.0))
    assert np.all(d.P == 0) and d.converged and d.iters_used == 0


def test_cap_is_enforced_and_counted():
    ctx = ctx_for(1)
    cfg = ControllerConfig(p_max=1.0)
    d = solve_power_proposed(np.array([[1.0]]), [1], [1e6], ctx, cfg)
    assert d.P[0] == cfg.p_cap == 10.0
    assert d.cap_hits == 1


def test_trace_records_each_iteration():
    ctx = ctx_for(2)
    H = np.array([[1.0, 0.05], [0.02, 1.5]])
    d = solve_power_proposed(H, [1, 1], [3.0, 2.0], ctx, ControllerConfig(p_max=1.0))
    assert len(d.interference) == len(d.taxation) == d.iters_used
    assert d.interference[0][0] == ctx.noise  # P(0) = 0


@pytest.mark.parametrize("gap", [1.0, 2.5])
def test_fixed_point_is_stationary(gap, rng):
    # interior components of the converged power zero the objective's gradient,
    # which checks the interference-pricing term including its index order
    k = 3
    ctx = LinkContext(np.array([1.0, 2.0, 0.5]), ~np.eye(k, dtype=bool), 0.05, gap)
    cfg = ControllerConfig(p_max=1.0, eps_converge=1e-13, max_iters=5000)
    checked = 0
    for _ in range(30):
        H = rng.exponential(size=(k, k)) * (0.03 + 0.97 * np.eye(k))
        w = rng.uniform(0.5, 3.0, k)
        d = solve_power_proposed(H, [1, 1, 1], w, ctx, cfg)
        if not d.converged:
            continue
        for i in range(k):
            if 1e-6 < d.P[i] < cfg.p_cap:
                h = 1e-7
                up, dn = d.P.copy(), d.P.copy()
                up[i] += h
                dn[i] -= h
                grad = (per_stage_objective(H, [1, 1, 1], up, w, ctx.gammas, ctx.noise, gap)
                        - per_stage_objective(H, [1, 1, 1], dn, w, ctx.gammas, ctx.noise, gap)) / (2 * h)
                assert abs(grad) < 1e-5 * ctx.gammas[i]
                checked += 1
    assert checked > 20


def test_baselines():
    ctx = LinkContext(np.array([2.0, 2.0]), ~np.eye(2, dtype=bool), 0.01, 1.0,
                      bandwidth=10.0, slot_duration=0.1)
    H = np.array([[3.0, 0.1], [0.1, 2.0]])
    fixed = solve_power_baseline(H, np.array([1, 0]), None, ctx, ControllerConfig(Policy.FIXED_MAX_POWER, p_max=0.2))
    np.testing.assert_array_equal(fixed.P, [0.2, 0.0])

    cfg = ControllerConfig(Policy.CSI_ONLY, p_max=0.2)
    np.testing.assert_allclose(csi_weights(2, ctx, cfg), LN2 * 2.0 * 0.2)
    csi = solve_power_baseline(H, np.array([1, 1]), None, ctx, cfg)
    assert np.all(csi.P <= 0.2) and np.all(csi.P > 0)

    cfg = ControllerConfig(Policy.QUEUE_WEIGHTED, p_max=0.2)
    Q = np.array([3.0, 0.0])
    np.testing.assert_allclose(queue_weights(Q, ctx, cfg), [3.0 * LN2 * 2.0, 0.0])
    qw = solve_power_baseline(H, np.array([1, 1]), Q, ctx, cfg)
    assert qw.P[1] == 0.0 and qw.P[0] > 0

    with pytest.raises(ValueError):
        solve_power_baseline(H, np.array([1, 1]), Q, ctx, ControllerConfig(Policy.PROPOSED))


def test_cellular_round_robin():
    up = np.array([1.0, 4.0, 9.0])
    down = np.array([3.0, 1.0, 9.0])
    r = cellular_round_robin(4, up, down, p_max=1.0, noise=1.0)
    assert r[0] == 0.0 and r[2] == 0.0
    assert r[1] == pytest.approx(0.5 * math.log2(2.0))
    assert np.count_nonzero(cellular_round_robin(5, up, down, 1.0, 1.0)) == 1


def test_config_defaults():
    cfg = ControllerConfig(p_max=2.0)
    assert cfg.p_cap == 20.0 and cfg.eps_converge == pytest.approx(2e-6)
    with pytest.raises(ValueError):
        ControllerConfig(max_iters=0)


def test_objective_nondecreasing_near_convergence(rng):
    # weakly coupled pairs: the last iterates climb monotonically to the optimum
    k = 2
    ctx = ctx_for(k, gammas=2.0, noise=0.05)
    cfg = ControllerConfig(p_max=1.0, eps_converge=1e-15, max_iters=200)
    for _ in range(50):
        H = rng.exponential(size=(k, k)) * np.array([[1.0, 1e-3], [1e-3, 1.0]])
        w = rng.uniform(0.5, 3.0, k)
        d = solve_power_proposed(H, [1, 1], w, ctx, cfg)
        vals = [per_stage_objective(H, [1, 1], P, w, ctx.gammas, ctx.noise) for P in d.iterates[-10:]]
        assert np.all(np.diff(vals) >= -1e-12 * max(1.0, abs(vals[-1])))
        np.testing.assert_array_equal(d.iterates[-1], d.P)
