import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special

from d2dpower.priority import (LN2, CouplingModel, FlowParams, InfeasibleLoadError, approx_value,
                               build_coupling, build_per_flow, build_priorities,
                               expected_power_cost, expected_rate, export_priority_table,
                               flows_derivative, optimal_power, priority_gradient)
from d2dpower.topology import LogDistanceDb, path_gain

NOISE = 10 ** (-17.4 - 3) * 1e7  # -174 dBm/Hz over 10 MHz, watts


def default_flow(gamma=3000.0, lam=0.5, n=1, dist=25.0):
    return FlowParams(beta=1.0, gamma=gamma, lam=lam, gain=path_gain(dist, LogDistanceDb()),
                      noise=NOISE, sinr_gap=1.0, reuse_count=n)


@pytest.fixture(scope="module")
def pf():
    return build_per_flow(default_flow(n=2), q_max_table=5e7)


def scipy_ode_residual(fp, c_inf, q, y):
    # independent restatement of the per-flow optimality equation with scipy's E1
    z = fp.a / y
    e1 = special.exp1(z)
    power = (y * np.exp(-z) / LN2 - fp.gamma * fp.noise * fp.sinr_gap / fp.gain * e1) / fp.reuse_count
    rate = e1 / (fp.reuse_count * LN2)
    terms = np.stack([fp.beta * q / fp.lam, power, -np.full_like(q, c_inf), y * fp.lam, -y * rate])
    return terms.sum(axis=0) / np.abs(terms).max(axis=0)


def test_constants_at_minimum(pf):
    fp = pf.params
    # the zero of Q(y) sits where the mean service rate equals the arrival rate
    assert special.exp1(pf.a / pf.d) == pytest.approx(fp.lam * fp.reuse_count * LN2, rel=1e-12)
    assert pf.y0 == pf.d
    assert abs(pf.q_of_y(pf.y0)) < 1e-9 * fp.lam ** 2 * pf.y0
    assert pf.dq_dy(pf.y0) == pytest.approx(0.0, abs=1e-12 * fp.lam ** 2)
    assert pf.value(0.0) == 0.0
    assert pf.derivative(0.0) == pf.y0


def test_ode_residual_on_table(pf):
    r = scipy_ode_residual(pf.params, pf.c_inf, pf.grid_q, pf.grid_y)
    assert np.max(np.abs(r)) < 1e-9


def test_table_monotone(pf):
    assert np.all(np.diff(pf.grid_q) > 0)
    assert np.all(np.diff(pf.grid_j) > 0)
    assert pf.grid_q[-1] == pytest.approx(pf.q_max_table, rel=1e-8)


@pytest.mark.parametrize("q", [5.0, 300.0, 4e4, 2e6, 4e7])
def test_derivative_matches_central_difference(pf, q):
    h = 1e-5 * q
    fd = (pf.value(q + h) - pf.value(q - h)) / (2 * h)
    assert fd == pytest.approx(pf.derivative(q), rel=1e-6)


def test_j_parametric_derivative_is_y(pf):
    # dJ/dy = y dQ/dy on the parametric curve
    y = pf.grid_y[100:4000:300]
    h = 1e-6 * y
    dj = (pf.j_of_y(y + h) - pf.j_of_y(y - h)) / (2 * h)
    np.testing.assert_allclose(dj, y * pf.dq_dy(y), rtol=1e-6)


@given(st.floats(1e-3, 4.9e7))
def test_inversion_round_trip(q):
    pf_ = build_per_flow(default_flow(), q_max_table=5e7)
    y = pf_.y_of_q(np.array([q]))
    assert pf_.q_of_y(y)[0] == pytest.approx(q, rel=1e-9, abs=1e-9)


@given(st.lists(st.floats(0.0, 1e9), min_size=2, max_size=8))
def test_derivative_nondecreasing(qs):
    pf_ = build_per_flow(default_flow(), q_max_table=5e7)
    q = np.sort(np.array(qs))
    d = pf_.derivative(q)
    assert np.all(np.diff(d) >= -1e-9 * d[1:])


def test_tail_beyond_table(pf):
    q = np.array([pf.q_max_table * 1.5, pf.q_max_table * 3])
    coeff = pf.asymptotic_coeff
    np.testing.assert_allclose(pf.value(q), coeff * q ** 2 / np.log2(q))
    np.testing.assert_allclose(pf.derivative(q), 2 * coeff * q / np.log2(q))
    # the tail continues upward from the table
    assert pf.value(q[0]) > pf.value(pf.q_max_table)


def test_expectation_identities_monte_carlo(rng):
    fp = default_flow(n=3)
    pf_ = build_per_flow(fp, 5e7)
    y = pf_.derivative(2e4)
    n = 400_000
    sigma = rng.random(n) < 1.0 / fp.reuse_count
    H = fp.gain * rng.standard_exponential(n)
    P = optimal_power(fp, y, sigma, H)
    cost = fp.gamma * P
    rate = sigma * np.log2(1.0 + P * H / (fp.sinr_gap * fp.noise))
    for sample, closed in ((cost, expected_power_cost(fp, y)), (rate, expected_rate(fp, y))):
        se = sample.std() / math.sqrt(n)
        assert abs(sample.mean() - closed) < 4 * se


def test_optimal_power_examples():
    fp = FlowParams(beta=1.0, gamma=1.0, lam=0.1, gain=1.0, noise=1.0)
    assert optimal_power(fp, LN2, 1, 2.0) == pytest.approx(0.5)
    assert optimal_power(fp, LN2, 0, 2.0) == 0.0
    assert optimal_power(fp, LN2, 1, 0.5) == 0.0


def test_validation_and_infeasible_load():
    with pytest.raises(ValueError):
        FlowParams(beta=1.0, gamma=0.0, lam=1.0, gain=1.0, noise=1.0)
    with pytest.raises(ValueError):
        FlowParams(beta=1.0, gamma=1.0, lam=1.0, gain=1.0, noise=1.0, sinr_gap=0.5)
    with pytest.raises(InfeasibleLoadError):
        build_per_flow(FlowParams(beta=1.0, gamma=1.0, lam=1e4, gain=1.0, noise=1.0), 10.0)


def test_coupling_coefficients(line_topology):
    beta = np.array([1.0, 2.0, 1.0])
    gamma = np.array([10.0, 20.0, 30.0])
    lam = np.array([0.5, 0.4, 0.3])
    n = line_topology.reuse_count
    cm = build_coupling(line_topology.gain, line_topology.coupled_mask, n, beta, gamma, lam, NOISE)
    expected = beta[0] * beta[2] * n[0] / (2 * LN2 * lam[0] * lam[2] * gamma[2] * NOISE)
    assert cm.D[0, 2] == pytest.approx(expected)
    assert cm.D[0, 1] == 0.0 and cm.D[1, 1] == 0.0
    assert cm.weights[2, 0] == pytest.approx(cm.D[2, 0] * line_topology.gain[2, 0])


def test_approx_value_reduces_to_sum_below_clamp(line_topology):
    flows, cm = build_priorities(line_topology, 1.0, 3000.0, 0.5, NOISE, 1.0, 5e7)
    q = np.array([1.5, 1e5, 2.0])  # flows 0 and 2 are at or below the clamp
    base = sum(pf.value(x) for pf, x in zip(flows, q))
    assert approx_value(flows, cm, q) == pytest.approx(base, rel=1e-14)
    np.testing.assert_allclose(flows_derivative(flows, q), [pf.derivative(x) for pf, x in zip(flows, q)])


def test_coupling_term_by_hand(line_topology):
    flows, cm = build_priorities(line_topology, 1.0, 3000.0, 0.5, NOISE, 1.0, 5e7)
    q = np.array([3e3, 1e4, 7e3])
    base = sum(pf.value(x) for pf, x in zip(flows, q))
    l2 = np.log2(q)
    extra = sum(cm.D[k, j] * line_topology.gain[k, j] * q[k] ** 2 * q[j] / (l2[k] ** 2 * l2[j])
                for k, j in [(0, 2), (2, 0)])
    assert approx_value(flows, cm, q) == pytest.approx(base + extra, rel=1e-12)


def test_gradient_matches_finite_differences(default_topology, rng):
    flows, cm = build_priorities(default_topology, 1.0, 3000.0, 0.5, NOISE, 1.0, 5e7)
    for _ in range(10):
        q = rng.uniform(20.0, 5e4, default_topology.num_pairs)
        g = priority_gradient(flows, cm, q, floor=False)
        for k in range(q.size):
            h = 1e-5 * q[k]
            up, dn = q.copy(), q.copy()
            up[k] += h
            dn[k] -= h
            fd = (approx_value(flows, cm, up) - approx_value(flows, cm, dn)) / (2 * h)
            assert fd == pytest.approx(g[k], rel=1e-5)


def test_gradient_floor():
    cm = CouplingModel(np.array([[0.0, -1e9], [0.0, 0.0]]), np.array([[0.0, 1.0], [0.0, 0.0]]))
    flows = [build_per_flow(default_flow(), 5e7) for _ in range(2)]
    q = np.array([1e4, 1e4])
    assert priority_gradient(flows, cm, q, floor=False)[0] < 0
    assert priority_gradient(flows, cm, q)[0] == 0.0


def test_export_table(pf, tmp_path):
    path = tmp_path / "table.csv"
    export_priority_table(pf, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == pf.grid_y.size
    assert float(rows[10]["Q"]) == pf.grid_q[10]
    assert float(rows[10]["Jprime"]) == pf.grid_y[10]


def test_tail_ratio_approaches_one(pf):
    fp = pf.params
    def r(q):
        return pf.value(q) * 2 * fp.lam * math.log2(q) / (fp.beta * fp.reuse_count * q ** 2)
    assert abs(r(1e9) - 1) < abs(r(1e5) - 1)
