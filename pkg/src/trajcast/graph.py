"""Per-frame social graphs over agents and their random-walk encodings.

Edges connect every pair of agents with weight ``1 / max(distance, eps)``.
The walk uses the row-normalized weight matrix ``D^-1 W``; the encoding of
node ``i`` is its return probability after 1..k steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError

DEFAULT_EPS_DIST = 0.01
DEFAULT_RW_STEPS = 8
MAX_RW_STEPS = 32


@dataclass(frozen=True)
class SocialGraph:
    weights: np.ndarray
    agent_ids: tuple = ()

    @property
    def n_agents(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class RwpeMatrix:
    values: np.ndarray

    @property
    def k(self) -> int:
        return self.values.shape[1]


def pairwise_weights(positions: np.ndarray, eps_dist: float = DEFAULT_EPS_DIST) -> np.ndarray:
    """Reciprocal-distance weights for ``positions`` of shape [..., n, 2]."""
    diff = positions[..., :, None, :] - positions[..., None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    w = 1.0 / np.maximum(dist, eps_dist)
    n = positions.shape[-2]
    w[..., np.arange(n), np.arange(n)] = 0.0
    return w


def build_social_graph(positions: Sequence, eps_dist: float = DEFAULT_EPS_DIST,
                       agent_ids: Sequence | None = None) -> SocialGraph:
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    if pos.shape[0] < 1:
        raise DataError("social graph needs at least one agent")
    if not np.all(np.isfinite(pos)):
        raise DataError("social graph positions must be finite")
    if eps_dist <= 0:
        raise ValueError("eps_dist must be positive")
    ids = tuple(agent_ids) if agent_ids is not None else tuple(range(pos.shape[0]))
    return SocialGraph(pairwise_weights(pos, eps_dist), ids)


def _row_normalize(w: np.ndarray) -> np.ndarray:
    deg = w.sum(axis=-1, keepdims=True)
    safe = np.where(deg > 0, deg, 1.0)
    return np.where(deg > 0, w / safe, 0.0)


def random_walk_matrix(g: SocialGraph) -> np.ndarray:
    return _row_normalize(g.weights)


def _return_probabilities(m: np.ndarray, k: int) -> np.ndarray:
    if not 1 <= k <= MAX_RW_STEPS:
        raise ValueError(f"random-walk steps k={k} outside [1, {MAX_RW_STEPS}]")
    out = np.empty(m.shape[:-1] + (k,))
    power = m
    for s in range(k):
        if s:
            power = power @ m
        out[..., s] = np.diagonal(power, axis1=-2, axis2=-1)
    return out


def rwpe(g: SocialGraph, k: int = DEFAULT_RW_STEPS) -> RwpeMatrix:
    return RwpeMatrix(_return_probabilities(random_walk_matrix(g), k))


def frame_rwpe(positions: np.ndarray, k: int = DEFAULT_RW_STEPS,
               eps_dist: float = DEFAULT_EPS_DIST) -> np.ndarray:
    """RWPE for every frame at once: [T, A, 2] positions -> [T, A, k]."""
    w = pairwise_weights(np.asarray(positions, dtype=np.float64), eps_dist)
    return _return_probabilities(_row_normalize(w), k)
