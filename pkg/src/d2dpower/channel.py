"""Block-fading CSI and Poisson packet arrivals."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .topology import Topology

MAX_MEAN_PACKETS = 1e9


@dataclass(frozen=True, eq=False)
class TrafficParams:
    lam: np.ndarray  # mean arrival rate per flow, bits/s
    packet_size_bits: int = 1000
    slot_duration: float = 1e-3

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        object.__setattr__(self, "lam", lam)
        if np.any(lam <= 0):
            raise ValueError("arrival rates must be > 0")
        if self.packet_size_bits < 1:
            raise ValueError("packet_size_bits must be >= 1")
        if self.slot_duration <= 0:
            raise ValueError("slot_duration must be > 0")
        if np.any(self.mean_packets > MAX_MEAN_PACKETS):
            raise ValueError(
                f"mean packets per slot exceeds {MAX_MEAN_PACKETS:g}; check units of lam")

    @property
    def mean_packets(self) -> np.ndarray:
        return self.lam * self.slot_duration / self.packet_size_bits


def sample_csi(topology: Topology, rng: np.random.Generator) -> np.ndarray:
    """H[k, j] = L[k, j] * Exp(1): Rayleigh power gain with mean L[k, j]."""
    return topology.gain * rng.standard_exponential(topology.gain.shape)


def sample_csi_sequence(gain: np.ndarray, rng: np.random.Generator, num_slots: int) -> np.ndarray:
    return gain * rng.standard_exponential((num_slots,) + gain.shape)


def sample_arrivals(params: TrafficParams, rng: np.random.Generator) -> np.ndarray:
    """Bits arriving at the end of one slot, whole packets only."""
    return params.packet_size_bits * rng.poisson(params.mean_packets).astype(float)


def sample_arrival_sequence(params: TrafficParams, rng: np.random.Generator,
                            num_slots: int) -> np.ndarray:
    counts = rng.poisson(params.mean_packets, size=(num_slots, params.lam.size))
    return params.packet_size_bits * counts.astype(float)


def draw_arrival_rates(mean_rate: float, num_pairs: int, rng: np.random.Generator,
                       spread: float = 0.5) -> np.ndarray:
    """Per-flow rates uniform on [(1 - spread), (1 + spread)] * mean_rate."""
    if not 0 <= spread < 1:
        raise ValueError("spread must be in [0, 1)")
    return mean_rate * rng.uniform(1.0 - spread, 1.0 + spread, size=num_pairs)
