"""Random D2D placements, long-term gains and carrier-sensing neighborhoods."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

MIN_DISTANCE = 1.0  # meters; log-distance gain diverges as d -> 0


@dataclass(frozen=True)
class Friis:
    rx_gain: float = 1.0
    tx_gain: float = 1.0
    wavelength: float = 0.125  # ~2.4 GHz


@dataclass(frozen=True)
class LogDistanceDb:
    intercept_db: float = 15.3
    slope_db: float = 37.6


PathLossModel = Union[Friis, LogDistanceDb]


@dataclass(frozen=True)
class TopologyParams:
    num_pairs: int = 10
    cell_radius: float = 500.0
    d2d_range: float = 50.0
    sensing_distance: float = 100.0
    path_loss: PathLossModel = field(default_factory=LogDistanceDb)

    def __post_init__(self):
        errors = []
        if self.num_pairs < 1:
            errors.append("num_pairs must be >= 1")
        if self.cell_radius <= 0:
            errors.append("cell_radius must be > 0")
        if self.d2d_range <= 0:
            errors.append("d2d_range must be > 0")
        if self.sensing_distance <= 0:
            errors.append("sensing_distance must be > 0")
        if errors:
            raise ValueError("; ".join(errors))


def path_gain(d, model: PathLossModel):
    """Linear long-term power gain at distance ``d`` meters."""
    d = np.asarray(d, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError("path_gain requires d > 0")
    if isinstance(model, Friis):
        g = model.rx_gain * model.tx_gain * model.wavelength ** 2 / (4.0 * math.pi * d) ** 2
    elif isinstance(model, LogDistanceDb):
        g = 10.0 ** (-(model.intercept_db + model.slope_db * np.log10(d)) / 10.0)
    else:
        raise TypeError(f"unknown path loss model {model!r}")
    return float(g) if g.ndim == 0 else g


@dataclass(frozen=True, eq=False)
class Topology:
    """Immutable placement with derived gains and sensing sets.

    ``gain[k, j]`` is the long-term gain from transmitter j to receiver k.
    """
    tx_positions: np.ndarray
    rx_positions: np.ndarray
    gain: np.ndarray
    neighbors: tuple
    access_prob: np.ndarray
    worst_cross_gain: float
    sensing_distance: float

    @property
    def num_pairs(self) -> int:
        return self.tx_positions.shape[0]

    @property
    def reuse_count(self) -> np.ndarray:
        """|N_k| + 1 for every pair."""
        return np.array([len(n) + 1 for n in self.neighbors], dtype=int)

    @property
    def neighbor_mask(self) -> np.ndarray:
        k = self.num_pairs
        mask = np.zeros((k, k), dtype=bool)
        for i, nb in enumerate(self.neighbors):
            mask[i, list(nb)] = True
        return mask

    @property
    def coupled_mask(self) -> np.ndarray:
        """Pairs (k, j), k != j, that can be active together (j not in N_k)."""
        return ~self.neighbor_mask & ~np.eye(self.num_pairs, dtype=bool)

    def to_dict(self) -> dict:
        return {
            "format": "d2dpower.topology/1",
            "sensing_distance": self.sensing_distance,
            "tx_positions": self.tx_positions.tolist(),
            "rx_positions": self.rx_positions.tolist(),
            "gain": self.gain.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "Topology":
        tx = np.asarray(data["tx_positions"], dtype=float)
        rx = np.asarray(data["rx_positions"], dtype=float)
        gain = np.asarray(data["gain"], dtype=float)
        return build_topology(tx, rx, float(data["sensing_distance"]), gain=gain)

    @classmethod
    def from_json(cls, text: str) -> "Topology":
        return cls.from_dict(json.loads(text))


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # dist[k, j] = |a_k - b_j|
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def sensing_neighbors(tx_positions: np.ndarray, delta: float, gain: np.ndarray | None = None):
    """Neighbor sets, access probabilities and worst-case cross gain.

    Sensing uses tx-tx distance with a closed ball. The worst-case cross gain
    is the largest gain[k, j] over pairs outside each other's sensing range,
    0 when there is no such pair.
    """
    tx = np.asarray(tx_positions, dtype=float).reshape(-1, 2)
    k = tx.shape[0]
    dist = _pairwise(tx, tx)
    within = (dist <= delta) & ~np.eye(k, dtype=bool)
    neighbors = tuple(tuple(int(j) for j in np.flatnonzero(within[i])) for i in range(k))
    access = 1.0 / (within.sum(axis=1) + 1.0)
    worst = 0.0
    if gain is not None:
        outside = ~within & ~np.eye(k, dtype=bool)
        if outside.any():
            worst = float(gain[outside].max())
    return neighbors, access, worst


def build_topology(tx_positions, rx_positions, sensing_distance: float,
                   path_loss: PathLossModel | None = None,
                   gain: np.ndarray | None = None) -> Topology:
    """Topology from explicit positions; gains come from ``path_loss`` unless given."""
    tx = np.asarray(tx_positions, dtype=float).reshape(-1, 2)
    rx = np.asarray(rx_positions, dtype=float).reshape(-1, 2)
    if gain is None:
        model = path_loss if path_loss is not None else LogDistanceDb()
        gain = path_gain(np.maximum(_pairwise(rx, tx), MIN_DISTANCE), model)
    gain = np.asarray(gain, dtype=float).reshape(tx.shape[0], tx.shape[0])
    neighbors, access, worst = sensing_neighbors(tx, sensing_distance, gain)
    for arr in (tx, rx, gain, access):
        arr.setflags(write=False)
    return Topology(tx, rx, gain, neighbors, access, worst, float(sensing_distance))


def _uniform_disk(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.random(n))
    theta = 2.0 * math.pi * rng.random(n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def generate_topology(params: TopologyParams, seed: int) -> Topology:
    """Transmitters uniform in the cell, each receiver uniform within d2d_range."""
    rng = np.random.default_rng(seed)
    tx = _uniform_disk(rng, params.num_pairs, params.cell_radius)
    rx = tx + _uniform_disk(rng, params.num_pairs, params.d2d_range)
    return build_topology(tx, rx, params.sensing_distance, params.path_loss)
