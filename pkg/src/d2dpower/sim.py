"""Slot-level simulation: queue recursion, cost accounting, Monte Carlo.

All policies evaluated on the same topology seed see identical MAC, channel
and arrival streams (common random numbers). Each stream comes from its own
child of the episode seed, so adding or reordering policies never shifts
another policy's randomness.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import TrafficParams, draw_arrival_rates, sample_arrival_sequence, sample_csi_sequence
from .controller import (ALL_POLICIES, ControllerConfig, LinkContext, Policy, capacities,
                         cellular_round_robin, scheduled_pair, solve_power_baseline,
                         solve_power_proposed)
from .mac import sample_mac_sequence
from .priority import DEFAULT_Q_CLAMP, CouplingModel, build_priorities, priority_gradient
from .topology import MIN_DISTANCE, Topology, TopologyParams, generate_topology, path_gain

BLOCK_SLOTS = 1024


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class SimConfig:
    topology: TopologyParams = field(default_factory=TopologyParams)
    mean_arrival_rate: float = 5e6  # bits/s, per-flow rates spread around it
    arrival_spread: float = 0.5
    packet_size_bits: int = 1000
    bandwidth: float = 10e6  # Hz
    slot_duration: float = 1e-3  # s
    noise_density_dbm_hz: float = -174.0
    sinr_gap: float = 1.0
    beta: float | tuple = 1.0
    gamma: float | tuple = 3000.0
    p_max_dbm: float = 23.0
    horizon: int = 1000  # measured slots
    num_topologies: int = 100
    seed: int = 0
    warmup_fraction: float = 0.1  # extra slots simulated before measuring
    q_clamp: float = DEFAULT_Q_CLAMP
    coupling: bool = True  # False drops the cross-flow term of the priority (ablation)
    table_slots: float = 1e4  # priority table reaches this many slots of mean arrivals
    max_iters: int = 100
    eps_rel: float = 1e-6  # convergence threshold as a fraction of p_max
    cap_factor: float = 10.0
    w_csi: float | None = None
    queue_weight_scale: float = 1.0

    def validate(self) -> list:
        errors = []
        if self.horizon < 1:
            errors.append("horizon must be >= 1")
        if self.bandwidth <= 0:
            errors.append("bandwidth must be > 0")
        if self.slot_duration <= 0:
            errors.append("slot_duration must be > 0")
        if self.sinr_gap < 1:
            errors.append("sinr_gap must be >= 1")
        if self.mean_arrival_rate <= 0:
            errors.append("mean_arrival_rate must be > 0")
        if not 0 <= self.arrival_spread < 1:
            errors.append("arrival_spread must be in [0, 1)")
        if self.packet_size_bits < 1:
            errors.append("packet_size_bits must be >= 1")
        if self.num_topologies < 1:
            errors.append("num_topologies must be >= 1")
        if not 0 <= self.warmup_fraction < 1:
            errors.append("warmup_fraction must be in [0, 1)")
        if self.max_iters < 1:
            errors.append("max_iters must be >= 1")
        if self.eps_rel <= 0:
            errors.append("eps_rel must be > 0")
        if self.cap_factor < 1:
            errors.append("cap_factor must be >= 1")
        if self.table_slots <= 0:
            errors.append("table_slots must be > 0")
        if not 0 <= self.seed < 2 ** 64:
            errors.append("seed must be a 64-bit unsigned integer")
        k = self.topology.num_pairs
        for name in ("beta", "gamma"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if v.size not in (1, k):
                errors.append(f"{name} must be a scalar or have {k} entries")
            elif np.any(~(v > 0)):
                errors.append(f"{name} must be > 0")
        return errors

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def noise(self) -> float:
        """Noise power over the band, watts."""
        return dbm_to_watts(self.noise_density_dbm_hz) * self.bandwidth

    @property
    def p_max(self) -> float:
        return dbm_to_watts(self.p_max_dbm)

    @property
    def warmup_slots(self) -> int:
        return int(round(self.warmup_fraction * self.horizon))

    @property
    def slot_scale(self) -> float:
        """W * tau: bits served per slot per unit spectral efficiency."""
        return self.bandwidth * self.slot_duration

    def betas(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.beta, dtype=float), (self.topology.num_pairs,)).copy()

    def gammas(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.gamma, dtype=float), (self.topology.num_pairs,)).copy()

    def controller(self, policy) -> ControllerConfig:
        return ControllerConfig(policy=Policy(policy), p_max=self.p_max,
                                eps_converge=self.eps_rel * self.p_max, max_iters=self.max_iters,
                                p_cap=self.cap_factor * self.p_max, w_csi=self.w_csi,
                                queue_weight_scale=self.queue_weight_scale)


def queue_step(Q, sigma, C, A, bandwidth: float, slot_duration: float) -> np.ndarray:
    """Q' = max(Q - sigma C W tau, 0) + A, arrivals landing after service."""
    served = np.asarray(sigma) * np.asarray(C) * bandwidth * slot_duration
    return np.maximum(np.asarray(Q, dtype=float) - served, 0.0) + np.asarray(A)


def stage_cost(Q, P, beta, gamma, lam) -> float:
    Q, P, beta, gamma, lam = (np.asarray(v, dtype=float) for v in (Q, P, beta, gamma, lam))
    return float(np.sum(beta * Q / lam + gamma * P))


@dataclass
class Metrics:
    policy: str
    seed: int
    lam: np.ndarray  # configured arrival rates, bits/s
    avg_delay: np.ndarray  # seconds, per flow
    avg_power: np.ndarray  # watts, per flow
    objective: float
    queue_mean: np.ndarray
    queue_p95: np.ndarray
    queue_max: np.ndarray
    mean_iters: float
    nonconverged: int
    cap_hits: int
    arrived_bits: np.ndarray
    served_bits: np.ndarray
    initial_queue: np.ndarray
    final_queue: np.ndarray
    queue_series: np.ndarray  # total queue (bits) at the start of each measured slot
    cost_series: np.ndarray | None = None
    trace: dict | None = None

    @property
    def mean_delay(self) -> float:
        return float(np.mean(self.avg_delay))

    @property
    def sum_delay(self) -> float:
        return float(np.sum(self.avg_delay))

    @property
    def mean_power(self) -> float:
        return float(np.mean(self.avg_power))


@dataclass(frozen=True)
class EpisodeSeeds:
    topology: int
    episode: int


def topology_seeds(base_seed: int, count: int) -> list:
    children = np.random.SeedSequence(base_seed).spawn(count)
    out = []
    for child in children:
        t, e = child.generate_state(2, dtype=np.uint64)
        out.append(EpisodeSeeds(int(t), int(e)))
    return out


class _Streams:
    # block-wise generation keeps memory bounded while every stream stays
    # independent of how many slots are drawn at once
    def __init__(self, cfg: SimConfig, topology: Topology, traffic: TrafficParams,
                 bs_gain: np.ndarray, children):
        self.cfg, self.topology, self.traffic, self.bs_gain = cfg, topology, traffic, bs_gain
        self.rng_mac, self.rng_csi, self.rng_arr, self.rng_bs = (
            np.random.default_rng(c) for c in children)
        self.start = 0
        self.stop = 0

    def block(self, t: int):
        if t >= self.stop:
            n = BLOCK_SLOTS
            self.sigma = sample_mac_sequence(self.topology, self.rng_mac, n)
            self.H = sample_csi_sequence(self.topology.gain, self.rng_csi, n)
            self.A = sample_arrival_sequence(self.traffic, self.rng_arr, n)
            self.H_bs = self.bs_gain * self.rng_bs.standard_exponential((n,) + self.bs_gain.shape)
            self.start, self.stop = t, t + n
        return t - self.start


def base_station_gain(topology: Topology, path_loss) -> np.ndarray:
    """(2, K) long-term gains tx->BS (uplink) and BS->rx (downlink), BS at the origin."""
    up = np.linalg.norm(topology.tx_positions, axis=1)
    down = np.linalg.norm(topology.rx_positions, axis=1)
    return path_gain(np.maximum(np.stack([up, down]), MIN_DISTANCE), path_loss)


def episode_rates(cfg: SimConfig, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(5)[4])
    return draw_arrival_rates(cfg.mean_arrival_rate, cfg.topology.num_pairs, rng, cfg.arrival_spread)


def run_episode(cfg: SimConfig, topology: Topology, policy, seed: int, trace: bool = False,
                lam: np.ndarray | None = None) -> Metrics:
    """Simulate warm-up plus ``cfg.horizon`` measured slots of one policy.

    Queues start empty. A transmitter with an empty queue stays silent.
    ``lam`` (bits/s) overrides the per-flow rates drawn from ``seed``.
    """
    policy = Policy(policy)
    k = topology.num_pairs
    children = np.random.SeedSequence(seed).spawn(5)
    if lam is None:
        lam = episode_rates(cfg, seed)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (k,)).copy()
    traffic = TrafficParams(lam, cfg.packet_size_bits, cfg.slot_duration)
    bs_gain = base_station_gain(topology, cfg.topology.path_loss)
    streams = _Streams(cfg, topology, traffic, bs_gain, children[:4])

    betas, gammas = cfg.betas(), cfg.gammas()
    ctl = cfg.controller(policy)
    ctx = LinkContext(gammas, topology.coupled_mask, cfg.noise, cfg.sinr_gap,
                      cfg.bandwidth, cfg.slot_duration)
    lam_norm = lam / cfg.bandwidth
    if policy is Policy.PROPOSED:
        flows, coupling = build_priorities(
            topology, betas, gammas, lam_norm, cfg.noise, cfg.sinr_gap,
            q_max_table=cfg.table_slots * lam * cfg.slot_duration, q_clamp=cfg.q_clamp)
        if not cfg.coupling:
            coupling = CouplingModel(np.zeros_like(coupling.D), coupling.L_cross, coupling.q_clamp)

    warm, T = cfg.warmup_slots, cfg.horizon
    scale = cfg.slot_scale
    Q = np.zeros(k)
    q_log = np.empty((T, k))
    p_log = np.empty((T, k))
    if trace:
        tr = {name: np.empty((T, k)) for name in ("sigma", "w", "C", "served", "arrivals")}
    arrived = np.zeros(k)
    served_total = np.zeros(k)
    iters = 0
    decisions = 0
    nonconv = 0
    caps = 0
    q_start = None
    zeros = np.zeros(k)

    for t in range(warm + T):
        i = streams.block(t)
        if t == warm:
            q_start = Q.copy()
        sigma = streams.sigma[i] * (Q > 0)
        H = streams.H[i]
        w = zeros
        if policy is Policy.CELLULAR_TDMA:
            rate = cellular_round_robin(t, streams.H_bs[i, 0], streams.H_bs[i, 1],
                                        ctl.p_max, cfg.noise, cfg.sinr_gap)
            P = np.zeros(k)
            j = scheduled_pair(t, k)
            if Q[j] > 0:
                P[j] = ctl.p_max
            else:
                rate[j] = 0.0
            sigma = (rate > 0).astype(np.int8)
            C = rate
        else:
            if not sigma.any():
                P = zeros
            elif policy is Policy.PROPOSED:
                w = priority_gradient(flows, coupling, Q)
                d = solve_power_proposed(H, sigma, w, ctx, ctl, trace=False)
                P = d.P
            else:
                d = solve_power_baseline(H, sigma, Q, ctx, ctl)
                P = d.P
            if sigma.any() and policy is not Policy.FIXED_MAX_POWER:
                decisions += 1
                iters += d.iters_used
                nonconv += not d.converged
                caps += d.cap_hits
            C = capacities(H, sigma, P, cfg.noise, cfg.sinr_gap) if sigma.any() else zeros
        served = np.minimum(Q, sigma * C * scale)
        A = streams.A[i]
        if t >= warm:
            m = t - warm
            q_log[m] = Q
            p_log[m] = P
            arrived += A
            served_total += served
            if trace:
                tr["sigma"][m] = sigma
                tr["w"][m] = w
                tr["C"][m] = C
                tr["served"][m] = served
                tr["arrivals"][m] = A
        Q = Q - served + A

    avg_q = q_log.mean(axis=0)
    avg_delay = avg_q / lam
    avg_power = p_log.mean(axis=0)
    objective = float(np.sum(betas * avg_q / lam_norm + gammas * avg_power))
    cost_series = (q_log / lam_norm) @ betas + p_log @ gammas
    metrics = Metrics(
        policy=policy.value, seed=int(seed), lam=lam, avg_delay=avg_delay, avg_power=avg_power,
        objective=objective, queue_mean=avg_q, queue_p95=np.percentile(q_log, 95, axis=0),
        queue_max=q_log.max(axis=0), mean_iters=iters / decisions if decisions else 0.0,
        nonconverged=nonconv, cap_hits=caps, arrived_bits=arrived, served_bits=served_total,
        initial_queue=q_start, final_queue=Q, queue_series=q_log.sum(axis=1),
        cost_series=cost_series)
    if trace:
        tr["Q"] = q_log
        tr["P"] = p_log
        metrics.trace = tr
    return metrics


def write_trace_csv(metrics: Metrics, path) -> None:
    """One row per (slot, flow): t, k, sigma, P, w, C, Q."""
    tr = metrics.trace
    if tr is None:
        raise ValueError("metrics carry no trace; rerun with trace=True")
    T, k = tr["Q"].shape
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["t", "k", "sigma", "P", "w", "C", "Q"])
        for t in range(T):
            for j in range(k):
                out.writerow([t, j, int(tr["sigma"][t, j]), repr(float(tr["P"][t, j])),
                              repr(float(tr["w"][t, j])), repr(float(tr["C"][t, j])),
                              repr(float(tr["Q"][t, j]))])


@dataclass
class PolicySummary:
    policy: str
    episodes: list  # Metrics per topology, in topology order

    def _stat(self, values):
        v = np.asarray(values, dtype=float)
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
        return float(v.mean()), se

    @property
    def delay(self):
        """(mean, standard error) across topologies of the per-flow mean delay, seconds."""
        return self._stat([m.mean_delay for m in self.episodes])

    @property
    def power(self):
        return self._stat([m.mean_power for m in self.episodes])

    @property
    def objective(self):
        return self._stat([m.objective for m in self.episodes])


def _episode_job(args):
    cfg, seeds, policy = args
    topo = generate_topology(cfg.topology, seeds.topology)
    return run_episode(cfg, topo, policy, seeds.episode)


def monte_carlo(cfg: SimConfig, policies=ALL_POLICIES, base_seed: int | None = None,
                workers: int = 1) -> dict:
    """Run every policy on ``cfg.num_topologies`` topologies with common random numbers."""
    base = cfg.seed if base_seed is None else base_seed
    seeds = topology_seeds(base, cfg.num_topologies)
    policies = [Policy(p) for p in policies]
    jobs = [(cfg, s, p) for s in seeds for p in policies]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_episode_job, jobs))
    else:
        results = []
        for s in seeds:
            topo = generate_topology(cfg.topology, s.topology)
            results.extend(run_episode(cfg, topo, p, s.episode) for p in policies)
    out = {}
    for (_, _, p), m in zip(jobs, results):
        out.setdefault(p.value, PolicySummary(p.value, [])).episodes.append(m)
    return out


def with_overrides(cfg: SimConfig, **changes) -> SimConfig:
    """Replace fields, routing topology fields into the nested TopologyParams."""
    topo_fields = {"num_pairs", "cell_radius", "d2d_range", "sensing_distance"}
    topo_changes = {k: changes.pop(k) for k in list(changes) if k in topo_fields}
    if topo_changes:
        changes["topology"] = replace(cfg.topology, **topo_changes)
    return replace(cfg, **changes)
