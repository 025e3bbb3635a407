"""Brute-force average-cost MDP on a quantized desk-scale instance.

The state is the queue vector on a packet grid. Each slot the exogenous
pair (sigma, H) is drawn from its quantized distribution, a power vector is
chosen from a finite grid, the queues are served and then receive arrivals.
Values are post-expectation over (sigma, H), so

    V(Q) + theta = E_{sigma,H} min_P [ c(Q, P) W tau + sum_Q' p(Q' | Q, sigma, H, P) V(Q') ].

Costs use the same units as the priority module: rates in bits/s/Hz and
time in units of 1/W, so one slot lasts W tau and theta / (W tau) is the
average cost per unit time.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .priority import LN2, FlowParams, PerFlowPriority

DEFAULT_CELL_BUDGET = 5e7


class StateSpaceTooLarge(ValueError):
    pass


class RviNotConverged(ArithmeticError):
    def __init__(self, sweeps: int, span: float):
        super().__init__(f"relative value iteration stopped after {sweeps} sweeps, span {span:g}")
        self.sweeps = sweeps
        self.span = span


@dataclass(frozen=True)
class MdpSpec:
    """Grids and physical parameters of a quantized instance (K = 1 or 2)."""
    gain: tuple = ((1.0,),)  # long-term gains L[k][j], tx j -> rx k
    noise: float = 0.01
    sinr_gap: float = 1.0
    bandwidth: float = 1000.0
    slot_duration: float = 1e-3
    packet_bits: float = 1.0
    queue_packets: int = 50  # grid is 0, 1, ..., queue_packets packets
    arrival_rate: tuple = (1000.0,)  # bits/s per flow
    arrival_max_packets: int = 20  # Poisson tail folded into this count
    channel_levels: int = 8
    p_max: float = 1.0
    power_levels: int = 41
    beta: tuple = (1.0,)
    gamma: tuple = (10.0,)
    sigma_dist: tuple | None = None  # ((sigma tuple, prob), ...); K=1 default always active
    snap: str = "nearest"  # or "linear": split mass between the two neighbors
    cell_budget: float = DEFAULT_CELL_BUDGET

    def __post_init__(self):
        k = self.num_flows
        errors = []
        if k not in (1, 2):
            errors.append("only K = 1 or 2 is supported")
        if any(len(row) != k for row in self.gain):
            errors.append("gain must be K x K")
        for name in ("arrival_rate", "beta", "gamma"):
            if len(getattr(self, name)) != k:
                errors.append(f"{name} needs {k} entries")
        if self.queue_packets < 0 or self.channel_levels < 1 or self.power_levels < 1:
            errors.append("grids must be nonempty")
        if self.snap not in ("nearest", "linear"):
            errors.append("snap must be 'nearest' or 'linear'")
        if self.noise <= 0 or self.p_max < 0 or self.bandwidth <= 0 or self.slot_duration <= 0:
            errors.append("noise, bandwidth and slot_duration must be > 0, p_max >= 0")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def num_flows(self) -> int:
        return len(self.gain)

    @property
    def slot_scale(self) -> float:
        return self.bandwidth * self.slot_duration


@dataclass(eq=False)
class QuantizedMdp:
    spec: MdpSpec
    queue_grid: np.ndarray  # bits, per-flow levels
    states: np.ndarray  # (S, K) queue level indices
    exo_prob: np.ndarray  # (E,)
    exo_sigma: np.ndarray  # (E, K)
    exo_H: np.ndarray  # (E, K, K)
    actions: np.ndarray  # (A, K) powers, watts
    cost: np.ndarray  # (A, S) cost per slot
    trans: np.ndarray  # (E, A, S, S)
    clipped: np.ndarray  # (E, A, S) probability mass clipped at the top of the grid

    @property
    def num_states(self) -> int:
        return self.states.shape[0]


def channel_levels(m: int):
    """Equiprobable Exp(1) bins with conditional-mean representatives."""
    with np.errstate(divide="ignore"):
        edges = -np.log1p(-np.arange(m + 1) / m)  # quantiles; last is +inf
    a, b = edges[:-1], edges[1:]
    ea, eb = np.exp(-a), np.exp(-b)
    with np.errstate(invalid="ignore"):
        b_term = np.where(np.isinf(b), 0.0, (b + 1.0) * eb)
    reps = ((a + 1.0) * ea - b_term) / (ea - eb)
    return reps, np.full(m, 1.0 / m)


def arrival_pmf(mean_packets: float, max_packets: int) -> np.ndarray:
    """Poisson pmf on 0..max_packets with the upper tail folded into the last cell."""
    n = np.arange(max_packets + 1)
    logp = n * math.log(mean_packets) - mean_packets - np.array([math.lgamma(i + 1) for i in n]) \
        if mean_packets > 0 else np.where(n == 0, 0.0, -np.inf)
    pmf = np.exp(logp)
    pmf[-1] += max(0.0, 1.0 - pmf.sum())
    return pmf / pmf.sum()


def _sigma_dist(spec: MdpSpec):
    if spec.sigma_dist is not None:
        return [(tuple(int(v) for v in s), float(p)) for s, p in spec.sigma_dist]
    if spec.num_flows == 1:
        return [((1,), 1.0)]
    return [((1, 1), 1.0)]


def _snap_matrix(after: np.ndarray, n_levels: int, step: float, mode: str) -> np.ndarray:
    # after: continuous post-service queue per level (bits) -> (n_levels, n_levels) mass
    pos = after / step
    out = np.zeros((after.size, n_levels))
    rows = np.arange(after.size)
    if mode == "nearest":
        out[rows, np.clip(np.floor(pos + 0.5).astype(int), 0, n_levels - 1)] = 1.0
    else:
        lo = np.clip(np.floor(pos).astype(int), 0, n_levels - 1)
        frac = np.clip(pos - lo, 0.0, 1.0)
        hi = np.clip(lo + 1, 0, n_levels - 1)
        np.add.at(out, (rows, lo), 1.0 - frac)
        np.add.at(out, (rows, hi), frac)
    return out


def _arrival_matrix(pmf: np.ndarray, n_levels: int):
    # (n_levels, n_levels): level r -> r + A, mass beyond the top clipped onto it
    mat = np.zeros((n_levels, n_levels))
    clipped = np.zeros(n_levels)
    for r in range(n_levels):
        for a, p in enumerate(pmf):
            t = r + a
            if t >= n_levels:
                clipped[r] += p
                t = n_levels - 1
            mat[r, t] += p
    return mat, clipped


def build_quantized_mdp(spec: MdpSpec) -> QuantizedMdp:
    k = spec.num_flows
    n = spec.queue_packets + 1
    step = spec.packet_bits
    grid = step * np.arange(n)
    states = np.array(list(itertools.product(range(n), repeat=k)), dtype=int).reshape(-1, k)
    n_states = states.shape[0]

    reps, probs = channel_levels(spec.channel_levels)
    gain = np.asarray(spec.gain, dtype=float)
    exo_prob, exo_sigma, exo_H = [], [], []
    for sigma, ps in _sigma_dist(spec):
        for idx in itertools.product(range(spec.channel_levels), repeat=k * k):
            h = gain * reps[list(idx)].reshape(k, k)
            exo_prob.append(ps * float(np.prod(probs[list(idx)])))
            exo_sigma.append(sigma)
            exo_H.append(h)
    exo_prob = np.array(exo_prob)
    exo_sigma = np.array(exo_sigma, dtype=int)
    exo_H = np.array(exo_H)

    powers = np.linspace(0.0, spec.p_max, spec.power_levels)
    actions = np.array(list(itertools.product(powers, repeat=k))).reshape(-1, k)
    cells = exo_prob.size * actions.shape[0] * float(n_states) ** 2
    if cells > spec.cell_budget:
        raise StateSpaceTooLarge(
            f"{cells:.3g} transition entries exceed the budget of {spec.cell_budget:.3g}")

    beta = np.asarray(spec.beta, dtype=float)
    gamma = np.asarray(spec.gamma, dtype=float)
    lam = np.asarray(spec.arrival_rate, dtype=float)
    lam_norm = lam / spec.bandwidth
    qbits = grid[states]  # (S, K)
    cost = ((qbits * beta / lam_norm).sum(axis=1)[None, :]
            + (actions * gamma).sum(axis=1)[:, None]) * spec.slot_scale

    arr_mats = []
    arr_clip = []
    for i in range(k):
        mean_packets = lam[i] * spec.slot_duration / step
        mat, clip = _arrival_matrix(arrival_pmf(mean_packets, spec.arrival_max_packets), n)
        arr_mats.append(mat)
        arr_clip.append(clip)

    E, A = exo_prob.size, actions.shape[0]
    trans = np.empty((E, A, n_states, n_states))
    clipped = np.empty((E, A, n_states))
    for e in range(E):
        sig, H = exo_sigma[e], exo_H[e]
        for a in range(A):
            tx = sig * actions[a]
            signal = np.diag(H) * tx
            interf = spec.noise + H @ tx - signal
            rate = sig * np.log2(1.0 + signal / (spec.sinr_gap * interf))
            per_flow, per_clip = [], []
            for i in range(k):
                after = np.maximum(grid - rate[i] * spec.slot_scale, 0.0)
                snap = _snap_matrix(after, n, step, spec.snap)
                per_flow.append(snap @ arr_mats[i])
                per_clip.append(snap @ arr_clip[i])
            if k == 1:
                trans[e, a] = per_flow[0]
                clipped[e, a] = per_clip[0]
            else:
                trans[e, a] = np.kron(per_flow[0], per_flow[1])
                # P(either flow clipped) = 1 - prod(1 - p_i)
                clipped[e, a] = 1.0 - np.kron(1.0 - per_clip[0], 1.0 - per_clip[1])
    return QuantizedMdp(spec, grid, states, exo_prob, exo_sigma, exo_H, actions, cost, trans, clipped)


@dataclass
class RviResult:
    theta: float  # average cost per slot
    V: np.ndarray  # (S,) relative values, V[ref] = 0
    policy: np.ndarray  # (E, S) optimal action index
    sweeps: int = 0
    span: float = 0.0
    ref: int = 0


def _q_values(mdp: QuantizedMdp, V: np.ndarray) -> np.ndarray:
    return mdp.cost[None, :, :] + mdp.trans @ V


def relative_value_iteration(mdp: QuantizedMdp, tol: float = 1e-9, max_sweeps: int = 100_000,
                             ref: int = 0) -> RviResult:
    """Jacobi-style RVI; stops when span(T V - V) <= tol."""
    V = np.zeros(mdp.num_states)
    span = math.inf
    for sweep in range(1, max_sweeps + 1):
        best = _q_values(mdp, V).min(axis=1)  # (E, S)
        TV = mdp.exo_prob @ best
        diff = TV - V
        span = float(diff.max() - diff.min())
        theta = float(TV[ref])
        V = TV - TV[ref]
        if span <= tol:
            policy = _q_values(mdp, V).argmin(axis=1)
            return RviResult(theta, V, policy, sweep, span, ref)
    raise RviNotConverged(max_sweeps, span)


def evaluate_policy(mdp: QuantizedMdp, policy: np.ndarray, ref: int = 0):
    """(theta, h) solving h + theta = c_pi + P_pi h with h[ref] = 0."""
    S = mdp.num_states
    cols = np.arange(S)
    P = np.zeros((S, S))
    c = np.zeros(S)
    for e, pe in enumerate(mdp.exo_prob):
        P += pe * mdp.trans[e, policy[e], cols, :]
        c += pe * mdp.cost[policy[e], cols]
    M = np.eye(S) - P
    M[:, ref] = 1.0
    x = np.linalg.solve(M, c)
    theta = float(x[ref])
    h = x.copy()
    h[ref] = 0.0
    return theta, h


def policy_iteration(mdp: QuantizedMdp, ref: int = 0, max_iters: int = 1000) -> RviResult:
    """Howard's policy iteration: exact evaluation, greedy improvement."""
    E, S = mdp.exo_prob.size, mdp.num_states
    policy = np.zeros((E, S), dtype=int)
    for it in range(1, max_iters + 1):
        theta, h = evaluate_policy(mdp, policy, ref)
        qv = _q_values(mdp, h)
        best = qv.min(axis=1)
        current = np.take_along_axis(qv, policy[:, None, :], axis=1)[:, 0, :]
        # keep the incumbent action unless something is strictly better
        improve = current > best + 1e-12 * np.maximum(1.0, np.abs(best))
        if not improve.any():
            return RviResult(theta, h, policy, it, 0.0, ref)
        policy = np.where(improve, qv.argmin(axis=1), policy)
    raise RviNotConverged(max_iters, math.nan)


def stationary_distribution(mdp: QuantizedMdp, policy: np.ndarray) -> np.ndarray:
    S = mdp.num_states
    cols = np.arange(S)
    P = np.zeros((S, S))
    for e, pe in enumerate(mdp.exo_prob):
        P += pe * mdp.trans[e, policy[e], cols, :]
    M = P.T - np.eye(S)
    M[-1, :] = 1.0
    rhs = np.zeros(S)
    rhs[-1] = 1.0
    pi = np.linalg.solve(M, rhs)
    return np.maximum(pi, 0.0) / np.maximum(pi, 0.0).sum()


def clipped_mass(mdp: QuantizedMdp, result: RviResult) -> float:
    """Per-slot probability of clipping at the top of the grid under the optimal policy."""
    pi = stationary_distribution(mdp, result.policy)
    cols = np.arange(mdp.num_states)
    per_state = sum(pe * mdp.clipped[e, result.policy[e], cols]
                    for e, pe in enumerate(mdp.exo_prob))
    return float(pi @ per_state)


def rank_average(x) -> np.ndarray:
    """Ranks 1..n with ties sharing their average rank."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    rx, ry = rank_average(x), rank_average(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    return float(rx @ ry / denom) if denom > 0 else math.nan


@dataclass
class PriorityComparison:
    spearman: float
    theta_per_time: float  # theta / (W tau)
    c_inf: float
    theta_gap: float  # |theta_per_time - c_inf| / c_inf
    threshold_rvi: np.ndarray  # per channel level, first queue index with P > 0 (-1: none)
    threshold_formula: np.ndarray
    threshold_diff: np.ndarray = field(default=None)

    @property
    def max_threshold_diff(self) -> int:
        valid = self.threshold_diff[self.threshold_diff >= 0]
        return int(valid.max()) if valid.size else 0


def flow_params_for(spec: MdpSpec) -> FlowParams:
    """Per-flow priority parameters matching a K = 1 instance."""
    if spec.num_flows != 1:
        raise ValueError("priority comparison needs K = 1")
    nu = sum(p for s, p in _sigma_dist(spec) if s[0] == 1)
    return FlowParams(beta=spec.beta[0], gamma=spec.gamma[0],
                      lam=spec.arrival_rate[0] / spec.bandwidth, gain=spec.gain[0][0],
                      noise=spec.noise, sinr_gap=spec.sinr_gap, reuse_count=int(round(1.0 / nu)))


def _first_positive(mask: np.ndarray) -> int:
    # first queue index >= 1 where mask is set, -1 when none
    hits = np.flatnonzero(mask[1:])
    return int(hits[0]) + 1 if hits.size else -1


def compare_priority(mdp: QuantizedMdp, result: RviResult, pf: PerFlowPriority) -> PriorityComparison:
    """Rank agreement of V with J, average-cost gap and power thresholds (K = 1)."""
    spec = mdp.spec
    if spec.num_flows != 1:
        raise ValueError("priority comparison needs K = 1")
    q = mdp.queue_grid
    J = pf.value(q)
    rho = spearman(result.V, J)
    theta_t = result.theta / spec.slot_scale
    gap = abs(theta_t - pf.c_inf) / abs(pf.c_inf)

    # thresholds per channel level among exogenous states with sigma = 1
    yq = pf.derivative(q)
    fp = pf.params
    active = np.flatnonzero(mdp.exo_sigma[:, 0] == 1)
    h_levels = mdp.exo_H[active, 0, 0]
    rvi, formula = [], []
    for e, h in zip(active, h_levels):
        powers = mdp.actions[result.policy[e], 0]
        rvi.append(_first_positive(powers > 0))
        level = yq / (fp.gamma * LN2) - fp.sinr_gap * fp.noise / h
        formula.append(_first_positive(level > 0))
    rvi, formula = np.array(rvi), np.array(formula)
    diff = np.where((rvi >= 0) & (formula >= 0), np.abs(rvi - formula), -1)
    # a threshold that exists on one side only counts as the distance to the grid end
    one_sided = (rvi >= 0) ^ (formula >= 0)
    end = q.size
    diff = np.where(one_sided, end - np.maximum(rvi, formula), diff)
    return PriorityComparison(rho, theta_t, pf.c_inf, gap, rvi, formula, diff)


def export_value_table(mdp: QuantizedMdp, result: RviResult, path, pf: PerFlowPriority | None = None):
    """CSV of queue state, V and (for K = 1) J; one row per queue state."""
    k = mdp.spec.num_flows
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = [f"Q{i}" for i in range(k)] + ["V"] + (["J"] if pf is not None else [])
        w.writerow(header)
        for s, idx in enumerate(mdp.states):
            row = [repr(float(mdp.queue_grid[i])) for i in idx] + [repr(float(result.V[s]))]
            if pf is not None:
                row.append(repr(float(pf.value(mdp.queue_grid[idx[0]]))))
            w.writerow(row)


def export_policy_table(mdp: QuantizedMdp, result: RviResult, path):
    """CSV: exogenous index, sigma, direct gains, queue state, chosen powers."""
    k = mdp.spec.num_flows
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["e", "prob"] + [f"sigma{i}" for i in range(k)] + [f"H{i}{i}" for i in range(k)]
                   + [f"Q{i}" for i in range(k)] + [f"P{i}" for i in range(k)])
        for e in range(mdp.exo_prob.size):
            head = ([e, repr(float(mdp.exo_prob[e]))] + [int(v) for v in mdp.exo_sigma[e]]
                    + [repr(float(mdp.exo_H[e, i, i])) for i in range(k)])
            for s, idx in enumerate(mdp.states):
                P = mdp.actions[result.policy[e, s]]
                w.writerow(head + [repr(float(mdp.queue_grid[i])) for i in idx]
                           + [repr(float(p)) for p in P])
