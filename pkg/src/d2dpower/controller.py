"""Per-slot power control: the delay-aware iterative controller and baselines."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

LN2 = math.log(2.0)


class Policy(str, enum.Enum):
    PROPOSED = "proposed"
    CELLULAR_TDMA = "cellular_tdma"
    FIXED_MAX_POWER = "fixed_max_power"
    CSI_ONLY = "csi_only"
    QUEUE_WEIGHTED = "queue_weighted"


ALL_POLICIES = tuple(Policy)


@dataclass(frozen=True)
class ControllerConfig:
    policy: Policy = Policy.PROPOSED
    p_max: float = 0.19952623149688797  # 23 dBm
    eps_converge: float | None = None  # default 1e-6 * p_max
    max_iters: int = 100
    p_cap: float | None = None  # default 10 * p_max
    w_csi: float | None = None  # default puts the noise-only water level at p_max
    queue_weight_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "policy", Policy(self.policy))
        if self.eps_converge is None:
            object.__setattr__(self, "eps_converge", 1e-6 * self.p_max)
        if self.p_cap is None:
            object.__setattr__(self, "p_cap", 10.0 * self.p_max)
        if not self.p_max > 0:
            raise ValueError("p_max must be > 0")
        if not self.eps_converge > 0:
            raise ValueError("eps_converge must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class PowerDecision:
    P: np.ndarray
    iters_used: int = 0
    converged: bool = True
    final_residual: float = 0.0
    cap_hits: int = 0
    interference: list = field(default_factory=list)
    taxation: list = field(default_factory=list)
    iterates: list = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class LinkContext:
    """Slot-invariant quantities a controller needs besides (H, sigma, Q)."""
    gammas: np.ndarray
    coupled_mask: np.ndarray
    noise: float
    sinr_gap: float = 1.0
    bandwidth: float = 10e6
    slot_duration: float = 1e-3


def capacities(H, sigma, P, noise: float, sinr_gap: float = 1.0) -> np.ndarray:
    """log2(1 + H_kk P_k / (Gamma (N0 + sum_{j != k} H_kj sigma_j P_j))) for every k."""
    H = np.asarray(H, dtype=float)
    tx = np.asarray(sigma, dtype=float) * np.asarray(P, dtype=float)
    signal = np.diag(H) * tx
    interference = noise + H @ tx - signal
    return np.log2(1.0 + signal / (sinr_gap * interference))


def per_stage_objective(H, sigma, P, w, gammas, noise: float, sinr_gap: float = 1.0) -> float:
    """sum_k (w_k sigma_k C_k(H, P) - gamma_k P_k)."""
    sigma = np.asarray(sigma, dtype=float)
    P = np.asarray(P, dtype=float)
    c = capacities(H, sigma, P, noise, sinr_gap)
    return float(np.sum(np.asarray(w) * sigma * c - np.asarray(gammas) * P))


def _iterate(H, sigma, w, ctx: LinkContext, cfg: ControllerConfig, trace: bool = True) -> PowerDecision:
    H = np.asarray(H, dtype=float)
    active = np.asarray(sigma).astype(bool)
    k = active.size
    P_full = np.zeros(k)
    idx = np.flatnonzero(active)
    if idx.size == 0:
        return PowerDecision(P_full, 0, True, 0.0)

    # work on the active subset only; cross[k, j] is the path from active j to receiver k
    sub = np.ix_(idx, idx)
    cross = np.where(np.asarray(ctx.coupled_mask)[sub], H[sub], 0.0)
    cross_t = cross.T.copy()
    hkk = np.diag(H)[idx]
    w_ln = np.maximum(np.asarray(w, dtype=float)[idx], 0.0) / LN2
    gam = np.broadcast_to(np.asarray(ctx.gammas, dtype=float), (k,))[idx]
    gap, noise, cap = ctx.sinr_gap, ctx.noise, cfg.p_cap
    gap_over_h = gap / hkk
    P = np.zeros(idx.size)
    decision = PowerDecision(P_full)
    residual = math.inf
    converged = False
    for n in range(1, cfg.max_iters + 1):
        interf = noise + cross @ P
        signal = hkk * P
        # derivative of w_j C_j w.r.t. P_k, summed over the other active receivers j
        tax = cross_t @ (w_ln * signal / (interf * (gap * interf + signal)))
        level = w_ln / (gam + tax) - gap_over_h * interf
        P_new = np.minimum(np.maximum(level, 0.0), cap)
        if trace:
            decision.interference.append(_scatter(interf, idx, k, noise))
            decision.taxation.append(_scatter(tax, idx, k, 0.0))
            decision.iterates.append(_scatter(P_new, idx, k, 0.0))
        residual = float(np.max(np.abs(P_new - P)))
        P = P_new
        if residual < cfg.eps_converge:
            converged = True
            break
    P_full[idx] = P
    decision.cap_hits = int(np.count_nonzero(level > cap))
    decision.converged = converged
    decision.iters_used = n
    decision.final_residual = residual
    return decision


def _scatter(values, idx, k, fill):
    out = np.full(k, fill)
    out[idx] = values
    return out


def solve_power_proposed(H, sigma, gradient, ctx: LinkContext, cfg: ControllerConfig,
                         trace: bool = True) -> PowerDecision:
    """Fixed-point power iteration with priority-gradient flow weights.

    Starts from P = 0, so the first iterate is single-user water-filling
    against noise. Non-convergence is reported, not raised.
    """
    return _iterate(H, sigma, gradient, ctx, cfg, trace)


def queue_weights(Q, ctx: LinkContext, cfg: ControllerConfig) -> np.ndarray:
    """Queue-length weights scaled so the water level is Q / (W tau) watts."""
    return (cfg.queue_weight_scale * np.asarray(Q, dtype=float) * LN2
            * np.asarray(ctx.gammas) / (ctx.bandwidth * ctx.slot_duration))


def csi_weights(num_pairs: int, ctx: LinkContext, cfg: ControllerConfig) -> np.ndarray:
    """Constant rate weights; by default w = ln2 gamma p_max, a water level of p_max."""
    if cfg.w_csi is not None:
        return np.full(num_pairs, float(cfg.w_csi))
    gam = np.broadcast_to(np.asarray(ctx.gammas, dtype=float), (num_pairs,))
    return LN2 * gam * cfg.p_max


def solve_power_baseline(H, sigma, Q, ctx: LinkContext, cfg: ControllerConfig,
                         trace: bool = False) -> PowerDecision:
    sigma = np.asarray(sigma)
    policy = cfg.policy
    if policy is Policy.FIXED_MAX_POWER:
        return PowerDecision(cfg.p_max * sigma.astype(float))
    if policy is Policy.CSI_ONLY:
        return _iterate(H, sigma, csi_weights(sigma.size, ctx, cfg), ctx, cfg, trace)
    if policy is Policy.QUEUE_WEIGHTED:
        return _iterate(H, sigma, queue_weights(Q, ctx, cfg), ctx, cfg, trace)
    raise ValueError(f"not a D2D baseline policy: {policy!r}")


def scheduled_pair(slot: int, num_pairs: int) -> int:
    return slot % num_pairs


def cellular_round_robin(slot: int, h_up, h_down, p_max: float, noise: float,
                         sinr_gap: float = 1.0) -> np.ndarray:
    """Per-pair spectral efficiency when relaying through the base station.

    One pair per slot in index order; the scheduled pair gets half the
    weaker of its uplink and downlink capacities at full power (two-hop,
    half-duplex), every other pair gets 0.
    """
    h_up = np.asarray(h_up, dtype=float)
    h_down = np.asarray(h_down, dtype=float)
    rates = np.zeros(h_up.size)
    k = scheduled_pair(slot, h_up.size)
    c_up = math.log2(1.0 + p_max * h_up[k] / (sinr_gap * noise))
    c_down = math.log2(1.0 + p_max * h_down[k] / (sinr_gap * noise))
    rates[k] = 0.5 * min(c_up, c_down)
    return rates
