"""Seeded synthetic trajectory corpora for desk-scale training and tests.

Each window is a separate block of ``t_obs + t_pred`` consecutive frames
with its own agent ids, so ``build_windows`` with stride 1 recovers exactly
one window per block.
"""

from __future__ import annotations

import math

import numpy as np

from .data import TrajectoryRecord

KINDS = ("constant_velocity", "bimodal_turn", "circular")


def constant_velocity_track(start, velocity, n_frames: int) -> np.ndarray:
    start = np.asarray(start, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    return start + np.arange(n_frames)[:, None] * velocity


def turn_track(start, velocity, t_obs: int, t_pred: int, direction: int) -> np.ndarray:
    """Straight for ``t_obs`` frames, then a 90 degree turn (+1 left, -1 right)."""
    start = np.asarray(start, dtype=np.float64)
    v = np.asarray(velocity, dtype=np.float64)
    obs = start + np.arange(t_obs)[:, None] * v
    turned = direction * np.array([-v[1], v[0]])
    fut = obs[-1] + np.arange(1, t_pred + 1)[:, None] * turned
    return np.concatenate([obs, fut])


def bimodal_modes(obs: np.ndarray, t_pred: int) -> np.ndarray:
    """Both turn futures for a straight observed track [T_obs, 2] -> [2, T_pred, 2]."""
    v = obs[-1] - obs[-2]
    steps = np.arange(1, t_pred + 1)[:, None]
    return np.stack([obs[-1] + steps * d * np.array([-v[1], v[0]]) for d in (1, -1)])


def circular_track(center, radius: float, phase: float, omega: float, n_frames: int) -> np.ndarray:
    ang = phase + omega * np.arange(n_frames)
    return np.asarray(center) + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def synth_generate(kind: str, n_windows: int, a_agents: int = 2, seed: int = 0,
                   t_obs: int = 8, t_pred: int = 12, speed=(0.2, 0.6),
                   extent: float = 5.0, random_heading: bool = True,
                   paired: bool = False) -> list[TrajectoryRecord]:
    """Records for ``n_windows`` blocks of ``a_agents`` agents each.

    With ``paired`` (bimodal_turn only) windows come in consecutive pairs
    that share every observed track and differ only in turn direction, so
    each observation prefix appears once with each of its two futures.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}; expected {KINDS}")
    if n_windows < 1 or a_agents < 1:
        raise ValueError("n_windows and a_agents must be >= 1")
    if paired and kind != "bimodal_turn":
        raise ValueError("paired generation only applies to bimodal_turn")
    rng = np.random.default_rng(seed)
    span = t_obs + t_pred
    records = []
    drawn: list[tuple] = []
    for w in range(n_windows):
        mirror = paired and w % 2 == 1
        if mirror:
            drawn = [(start, s, heading, -turn, radius) for start, s, heading, turn, radius in drawn]
        else:
            drawn = []
            for _ in range(a_agents):
                start = rng.uniform(-extent, extent, size=2)
                s = rng.uniform(*speed)
                heading = rng.uniform(0, 2 * math.pi) if random_heading else 0.0
                radius = rng.uniform(1.0, 3.0) if kind == "circular" else 0.0
                turn = 1 if kind == "constant_velocity" or rng.random() < 0.5 else -1
                drawn.append((start, s, heading, turn, radius))
        for a, (start, s, heading, turn, radius) in enumerate(drawn):
            agent_id = w * a_agents + a
            v = s * np.array([math.cos(heading), math.sin(heading)])
            if kind == "constant_velocity":
                track = constant_velocity_track(start, v, span)
            elif kind == "bimodal_turn":
                track = turn_track(start, v, t_obs, t_pred, turn)
            else:
                track = circular_track(start, radius, heading, turn * s / radius, span)
            for t in range(span):
                records.append(TrajectoryRecord(w * span + t, agent_id, tuple(map(float, track[t]))))
    records.sort(key=lambda r: (r.frame_id, r.agent_id))
    return records
