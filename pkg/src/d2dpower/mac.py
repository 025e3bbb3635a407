"""Per-slot MAC output under the idealized carrier-sensing model.

A node transmits iff its uniform mark is the smallest in its closed sensing
neighborhood (Matern type-II thinning). This gives P[sigma_k = 1] =
1 / (|N_k| + 1) exactly, independently across slots. The active set is
independent in the sensing graph but not necessarily maximal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .topology import Topology


@dataclass(frozen=True, eq=False)
class MacOutput:
    sigma: np.ndarray  # K-vector of 0/1

    @property
    def active_set(self) -> tuple:
        return tuple(int(k) for k in np.flatnonzero(self.sigma))


def _thin(marks: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # marks: (..., K); node k wins against j iff (m_k, k) < (m_j, j)
    k = marks.shape[-1]
    idx = np.arange(k)
    mk = marks[..., :, None]
    mj = marks[..., None, :]
    beats = (mk < mj) | ((mk == mj) & (idx[:, None] < idx[None, :]))
    return np.all(beats | ~mask, axis=-1).astype(np.int8)


def sample_mac_output(topology: Topology, rng: np.random.Generator) -> MacOutput:
    marks = rng.random(topology.num_pairs)
    return MacOutput(_thin(marks, topology.neighbor_mask))


def sample_mac_sequence(topology: Topology, rng: np.random.Generator, num_slots: int) -> np.ndarray:
    """(num_slots, K) array of MAC outputs, one fresh mark vector per slot."""
    marks = rng.random((num_slots, topology.num_pairs))
    return _thin(marks, topology.neighbor_mask)


def is_feasible(sigma: np.ndarray, topology: Topology) -> bool:
    s = np.asarray(sigma, dtype=bool)
    both = s[..., :, None] & s[..., None, :] & topology.neighbor_mask
    return not bool(both.any())
