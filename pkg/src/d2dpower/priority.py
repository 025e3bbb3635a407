"""Closed-form approximate priority function and its gradient.

Units: rates (``lam``, link capacities) are in bits/s/Hz, queues in bits,
and time is measured in units of 1/W seconds, so a slot lasts W*tau time
units and serves C*W*tau bits. With these units the per-flow optimality
equation has the parametric solution implemented here, with
``J'(Q(y)) = y``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .specfun import RootBracket, exp_integral_e1, find_root

LN2 = math.log(2.0)
TABLE_POINTS = 4096
DEFAULT_Q_CLAMP = 2.0


class InfeasibleLoadError(ValueError):
    """The flow lies outside the region where the per-flow solution exists."""


class TableBuildError(ValueError):
    """The tabulated Q(y) is not strictly increasing."""


@dataclass(frozen=True)
class FlowParams:
    beta: float
    gamma: float
    lam: float  # bits/s/Hz
    gain: float  # long-term direct gain L_kk
    noise: float  # N0, watts
    sinr_gap: float = 1.0
    reuse_count: int = 1

    def __post_init__(self):
        for name in ("beta", "gamma", "lam", "gain", "noise"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.sinr_gap < 1:
            raise ValueError("sinr_gap must be >= 1")
        if self.reuse_count < 1:
            raise ValueError("reuse_count must be >= 1")

    @property
    def a(self) -> float:
        return self.noise * self.sinr_gap * self.gamma * LN2 / self.gain

    @property
    def rate_scale(self) -> float:
        """1 / ((|N_k| + 1) ln 2): mean rate per unit E1 under the optimal power."""
        return 1.0 / (self.reuse_count * LN2)


def _e1(z):
    # vectorized E1 that returns 0 where the argument is +inf
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    ok = np.isfinite(z)
    if np.any(ok):
        out[ok] = exp_integral_e1(z[ok])
    return out


def _q_param(y, a, lam, beta, s, c_inf):
    z = a / y
    e1 = _e1(z)
    ez = np.exp(-z)
    return (lam / beta) * (s * (a * e1 + y * e1 - y * ez) - lam * y + c_inf)


def _dq_dy(y, a, lam, beta, s):
    return (lam / beta) * (s * _e1(a / y) - lam)


def _j_param(y, a, lam, beta, s):
    z = a / y
    e1 = _e1(z)
    ez = np.exp(-z)
    return (lam / beta) * (0.25 * s * (e1 * (2.0 * y * y - a * a) - y * (y - a) * ez)
                           - 0.5 * lam * y * y)


def _newton_invert(q, lo, hi, y, a, lam, beta, s, c_inf):
    # safeguarded Newton on Q(y) = q inside [lo, hi]; all arguments broadcast
    lo, hi, y = (np.array(v, dtype=float, copy=True) for v in np.broadcast_arrays(lo, hi, y))
    for _ in range(100):
        f = _q_param(y, a, lam, beta, s, c_inf) - q
        # Q(y) is a difference of terms of size ~ lam^2 y / beta
        if np.all(np.abs(f) <= 1e-13 * (q + lam * lam * y / beta)):
            break
        lo = np.where(f < 0, y, lo)
        hi = np.where(f > 0, y, hi)
        fp = _dq_dy(y, a, lam, beta, s)
        with np.errstate(divide="ignore", invalid="ignore"):
            y_new = y - f / fp
        bad = ~((y_new > lo) & (y_new < hi)) | ~(fp > 0)
        y_new = np.where(bad, 0.5 * (lo + hi), y_new)
        y_new = np.where(f == 0, y, y_new)
        done = np.abs(y_new - y) <= 4e-16 * y
        y = y_new
        if np.all(done):
            break
    return y


def expected_power_cost(fp: FlowParams, y):
    """E[gamma * P*] over sigma ~ Bernoulli(nu) and H ~ Exp(mean L_kk), given J' = y."""
    y = np.asarray(y, dtype=float)
    z = fp.a / y
    return (y * np.exp(-z) / LN2 - fp.gamma * fp.noise * fp.sinr_gap / fp.gain * _e1(z)) / fp.reuse_count


def expected_rate(fp: FlowParams, y):
    """E[sigma * log2(1 + P* H / (Gamma N0))] given J' = y."""
    return fp.rate_scale * _e1(fp.a / np.asarray(y, dtype=float))


def optimal_power(fp: FlowParams, y, sigma, h):
    """Single-flow optimal power (J' sigma / (gamma ln2) - Gamma N0 / H)^+."""
    y, sigma, h = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (y, sigma, h)))
    with np.errstate(divide="ignore"):
        p = y * sigma / (fp.gamma * LN2) - fp.sinr_gap * fp.noise / h
    return np.maximum(p, 0.0)


def ode_residual(fp: FlowParams, c_inf: float, q, jprime):
    """Residual of the per-flow optimality equation and its largest term."""
    q = np.asarray(q, dtype=float)
    jp = np.asarray(jprime, dtype=float)
    terms = np.stack([
        fp.beta * q / fp.lam,
        expected_power_cost(fp, jp),
        -np.full_like(q, c_inf),
        jp * fp.lam,
        -jp * expected_rate(fp, jp),
    ])
    return terms.sum(axis=0), np.abs(terms).max(axis=0)


@dataclass(frozen=True, eq=False)
class PerFlowPriority:
    params: FlowParams
    a: float
    d: float
    c_inf: float
    y0: float
    b: float
    q_max_table: float
    asymptotic_coeff: float
    grid_y: np.ndarray
    grid_q: np.ndarray
    grid_j: np.ndarray
    grid_dydu: np.ndarray  # dy / d sqrt(Q) at the grid points

    @property
    def _consts(self):
        fp = self.params
        return self.a, fp.lam, fp.beta, fp.rate_scale

    def q_of_y(self, y):
        a, lam, beta, s = self._consts
        return _q_param(np.asarray(y, dtype=float), a, lam, beta, s, self.c_inf)

    def dq_dy(self, y):
        a, lam, beta, s = self._consts
        return _dq_dy(np.asarray(y, dtype=float), a, lam, beta, s)

    def j_of_y(self, y):
        a, lam, beta, s = self._consts
        return _j_param(np.asarray(y, dtype=float), a, lam, beta, s) + self.b

    def y_of_q(self, q):
        """Invert Q(y) on the table range; q beyond the table is clipped."""
        q = np.asarray(q, dtype=float)
        flat = np.clip(q.ravel(), 0.0, self.q_max_table)
        y = np.full(flat.shape, self.y0)
        inside = flat > 0
        if np.any(inside):
            lo, hi, guess = self._bracket(flat[inside])
            a, lam, beta, s = self._consts
            y[inside] = _newton_invert(flat[inside], lo, hi, guess, a, lam, beta, s, self.c_inf)
        return y.reshape(q.shape)

    def _bracket(self, q):
        gq, gy, gs = self.grid_q, self.grid_y, self.grid_dydu
        i = np.clip(np.searchsorted(gq, q, side="right") - 1, 0, gq.size - 2)
        lo, hi = gy[i], gy[i + 1]
        # y is smooth in u = sqrt(Q) through the double root: cubic Hermite in u
        u0, u1 = np.sqrt(gq[i]), np.sqrt(gq[i + 1])
        h = u1 - u0
        t = np.clip((np.sqrt(q) - u0) / h, 0.0, 1.0)
        t2, t3 = t * t, t * t * t
        guess = ((2 * t3 - 3 * t2 + 1) * lo + (t3 - 2 * t2 + t) * h * gs[i]
                 + (-2 * t3 + 3 * t2) * hi + (t3 - t2) * h * gs[i + 1])
        return lo, hi, np.clip(guess, lo, hi)

    def value(self, q):
        """J_k(Q); the tail beyond the table is coeff * Q^2 / log2 Q."""
        q = np.asarray(q, dtype=float)
        out = np.zeros_like(q)
        tail = q > self.q_max_table
        body = ~tail & (q > 0)
        if np.any(body):
            out[body] = self.j_of_y(self.y_of_q(q[body]))
        if np.any(tail):
            qt = q[tail]
            out[tail] = self.asymptotic_coeff * qt * qt / np.log2(qt)
        return float(out) if out.ndim == 0 else out

    def derivative(self, q):
        """J_k'(Q) = y(Q); the tail uses 2 * coeff * Q / log2 Q."""
        q = np.asarray(q, dtype=float)
        out = self.y_of_q(q)
        tail = q > self.q_max_table
        if np.any(tail):
            qt = q[tail]
            out[tail] = 2.0 * self.asymptotic_coeff * qt / np.log2(qt)
        return float(out) if out.ndim == 0 else out


def _solve_d(fp: FlowParams) -> float:
    # E1(a / d) = lam / s; solved for z = a / d in log space, then Newton-polished
    target = fp.lam / fp.rate_scale
    lo_u, hi_u = math.log(1e-300), math.log(700.0)
    g = lambda u: math.log(exp_integral_e1(math.exp(u))) - math.log(target)
    if g(lo_u) < 0 or g(hi_u) > 0:
        raise InfeasibleLoadError(
            f"E1(a/d) = {target:g} has no root: arrival rate {fp.lam:g} out of range")
    u = find_root(g, RootBracket(lo_u, hi_u, tol_abs=1e-15, tol_rel=1e-15))
    z = math.exp(u)
    for _ in range(3):
        z -= (exp_integral_e1(z) - target) / (-math.exp(-z) / z)
    return fp.a / z


def build_per_flow(fp: FlowParams, q_max_table: float,
                   num_points: int = TABLE_POINTS) -> PerFlowPriority:
    """Constants and (y, Q, J) table for one flow.

    Q(y) attains its minimum, exactly 0, at y = d (dQ/dy = 0 there), so
    y0 = d is the double root of Q(y) = 0 and the valid branch is y >= d.
    """
    if not q_max_table > 0:
        raise ValueError("q_max_table must be > 0")
    a, lam, beta, s = fp.a, fp.lam, fp.beta, fp.rate_scale
    d = _solve_d(fp)
    z = a / d
    c_inf = s * (d * math.exp(-z) - a * exp_integral_e1(z))
    y0 = d

    q_at = lambda y: float(_q_param(np.asarray(y), a, lam, beta, s, c_inf))
    scale = (lam / beta) * (lam * (a + d) + c_inf)
    if abs(q_at(y0)) > 1e-9 * scale:
        raise TableBuildError(f"Q(y0) = {q_at(y0):g} is not ~0 (y0 = {y0:g})")

    y_hi = 2.0 * y0
    for _ in range(2000):
        if q_at(y_hi) >= q_max_table:
            break
        y_hi *= 2.0
    else:
        raise InfeasibleLoadError("could not bracket the table end point")
    y_hi = find_root(lambda y: q_at(y) - q_max_table,
                     RootBracket(y0 * (1 + 1e-12), y_hi, tol_abs=1e-9 * q_max_table, tol_rel=1e-15))

    offsets = np.geomspace(1e-4, y_hi / y0 - 1.0, num_points - 1)
    grid_y = np.concatenate([[y0], y0 * (1.0 + offsets)])
    grid_q = _q_param(grid_y, a, lam, beta, s, c_inf)
    grid_q[0] = 0.0
    steps = np.diff(grid_q)
    if np.any(steps <= 0):
        bad = int(np.argmax(steps <= 0))
        raise TableBuildError(f"Q(y) not strictly increasing near y = {grid_y[bad + 1]:g}")

    dq = _dq_dy(grid_y, a, lam, beta, s)
    grid_dydu = np.empty_like(grid_y)
    grid_dydu[1:] = 2.0 * np.sqrt(grid_q[1:]) / dq[1:]
    # limit at the double root: Q ~ Q''(y0) (y - y0)^2 / 2
    grid_dydu[0] = math.sqrt(2.0 / ((lam / beta) * s * math.exp(-z) / y0))

    j_raw = _j_param(grid_y, a, lam, beta, s)
    b = -float(j_raw[0])
    grid_j = j_raw + b
    for arr in (grid_y, grid_q, grid_j, grid_dydu):
        arr.setflags(write=False)
    return PerFlowPriority(fp, a, d, c_inf, y0, b, float(q_max_table),
                           beta * fp.reuse_count / (2.0 * lam), grid_y, grid_q, grid_j, grid_dydu)


def flows_derivative(flows, q) -> np.ndarray:
    """J_k'(Q_k) for every flow, one vectorized inversion across flows."""
    q = np.asarray(q, dtype=float)
    out = np.array([pf.y0 for pf in flows], dtype=float)
    qmax = np.array([pf.q_max_table for pf in flows])
    body = np.flatnonzero((q > 0) & (q <= qmax))
    tail = np.flatnonzero(q > qmax)
    if body.size:
        sel = [flows[i] for i in body]
        brackets = [pf._bracket(np.array([q[i]])) for pf, i in zip(sel, body)]
        lo, hi, guess = (np.concatenate(parts) for parts in zip(*brackets))
        a = np.array([pf.a for pf in sel])
        lam = np.array([pf.params.lam for pf in sel])
        beta = np.array([pf.params.beta for pf in sel])
        s = np.array([pf.params.rate_scale for pf in sel])
        c_inf = np.array([pf.c_inf for pf in sel])
        out[body] = _newton_invert(q[body], lo, hi, guess, a, lam, beta, s, c_inf)
    for i in tail:
        out[i] = flows[i].derivative(q[i])
    return out


def per_flow_value(pf: PerFlowPriority, q):
    return pf.value(q)


def per_flow_derivative(pf: PerFlowPriority, q):
    return pf.derivative(q)


@dataclass(frozen=True, eq=False)
class CouplingModel:
    D: np.ndarray  # zero on the diagonal and for neighbor pairs
    L_cross: np.ndarray  # topology gains with the same exclusions
    q_clamp: float = DEFAULT_Q_CLAMP

    @property
    def weights(self) -> np.ndarray:
        return self.D * self.L_cross


def build_coupling(gain: np.ndarray, coupled_mask: np.ndarray, reuse_count, beta, gamma,
                   lam, noise: float, q_clamp: float = DEFAULT_Q_CLAMP) -> CouplingModel:
    """First-order coupling coefficients D[k, j] restricted to coupled pairs."""
    if not q_clamp > 1:
        raise ValueError("q_clamp must be > 1")
    k = gain.shape[0]
    beta, gamma, lam = (np.broadcast_to(np.asarray(v, dtype=float), (k,)) for v in (beta, gamma, lam))
    n = np.asarray(reuse_count, dtype=float)
    D = (beta[:, None] * beta[None, :] * n[:, None]
         / (2.0 * LN2 * lam[:, None] * lam[None, :] * gamma[None, :] * noise))
    mask = np.asarray(coupled_mask, dtype=bool)
    return CouplingModel(np.where(mask, D, 0.0), np.where(mask, gain, 0.0), float(q_clamp))


def _coupling_parts(cm: CouplingModel, q: np.ndarray):
    qt = np.maximum(q, cm.q_clamp)
    l2 = np.log2(qt)
    live = q > cm.q_clamp
    w = np.where(live[:, None] & live[None, :], cm.weights, 0.0)
    return qt, l2, w


def approx_value(flows, cm: CouplingModel, q) -> float:
    """Sum of per-flow values plus the first-order coupling correction.

    Terms whose queues are not above ``q_clamp`` contribute nothing.
    """
    q = np.asarray(q, dtype=float)
    base = sum(float(pf.value(qk)) for pf, qk in zip(flows, q))
    qt, l2, w = _coupling_parts(cm, q)
    g = qt * qt / (l2 * l2)
    h = qt / l2
    return base + float(g @ w @ h)


def priority_gradient(flows, cm: CouplingModel, q, floor: bool = True) -> np.ndarray:
    """d V~ / d Q_k for every flow, floored at 0 unless ``floor`` is False."""
    q = np.asarray(q, dtype=float)
    base = flows_derivative(flows, q)
    qt, l2, w = _coupling_parts(cm, q)
    h = qt / l2
    # factor[k, j] = Q_j (ln Q_k - 1) / (ln2 log2(Q_k)^2 log2(Q_j))
    factor = (np.log(qt) - 1.0)[:, None] * h[None, :] / (LN2 * (l2 * l2)[:, None])
    inner = 2.0 * w * h[:, None] + w.T * h[None, :]
    grad = base + (factor * inner).sum(axis=1)
    return np.maximum(grad, 0.0) if floor else grad


def build_priorities(topology, beta, gamma, lam, noise: float, sinr_gap: float,
                     q_max_table, q_clamp: float = DEFAULT_Q_CLAMP):
    """Per-flow priorities and coupling model for every pair of a topology.

    ``lam`` is in bits/s/Hz; ``q_max_table`` may be scalar or per flow.
    """
    k = topology.num_pairs
    beta, gamma, lam, qmax = (np.broadcast_to(np.asarray(v, dtype=float), (k,))
                              for v in (beta, gamma, lam, q_max_table))
    n = topology.reuse_count
    flows = [build_per_flow(FlowParams(beta[i], gamma[i], lam[i], topology.gain[i, i],
                                       noise, sinr_gap, int(n[i])), qmax[i])
             for i in range(k)]
    cm = build_coupling(topology.gain, topology.coupled_mask, n, beta, gamma, lam, noise, q_clamp)
    return flows, cm


def export_priority_table(pf: PerFlowPriority, path) -> None:
    """Write the (y, Q, J, Jprime) table as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "Q", "J", "Jprime"])
        for y, q, j in zip(pf.grid_y, pf.grid_q, pf.grid_j):
            w.writerow([repr(float(y)), repr(float(q)), repr(float(j)), repr(float(y))])
