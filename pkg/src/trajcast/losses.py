"""Per-timestep base losses, weighted penalty schedules, and the objectives."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import Tensor, as_tensor, ops
from .errors import ConfigError, ContractError, DimensionError

SCHEDULES = ("uniform", "linear", "quadratic", "parabolic")
BASE_LOSSES = ("mse", "smooth_l1")


@dataclass(frozen=True)
class PenaltySchedule:
    kind: str = "parabolic"
    alpha: float = 2.0
    beta: float = 1.0
    t_pred: int = 12

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise ConfigError(f"unknown penalty schedule {self.kind!r}; expected {SCHEDULES}")
        if self.t_pred < 1:
            raise ConfigError("t_pred must be >= 1")
        if self.kind != "uniform" and not (self.alpha > 0 and self.beta > 0):
            raise ConfigError("penalty alpha and beta must be positive")
        if self.kind == "parabolic" and not self.alpha > self.beta:
            raise ConfigError(
                f"parabolic schedule needs beta < alpha (alpha={self.alpha}, beta={self.beta})")

    def weights(self) -> np.ndarray:
        return _weights(self).copy()


def penalty_weight(s: PenaltySchedule, t: float) -> float:
    """Weight at horizon step ``t``; steps run 1..t_pred, t=0 gives the limit."""
    if not 0 <= t <= s.t_pred:
        raise ContractError(f"step {t} outside [0, {s.t_pred}]")
    frac = t / s.t_pred
    if s.kind == "uniform":
        return 1.0
    if s.kind == "linear":
        return s.alpha + frac * (s.beta - s.alpha)
    if s.kind == "quadratic":
        return (s.alpha + frac * (s.beta - s.alpha)) ** 2
    return (s.alpha - s.beta) * (2 * frac - 1) ** 2 + s.beta


@lru_cache(maxsize=64)
def _weights(s: PenaltySchedule) -> np.ndarray:
    return np.array([penalty_weight(s, t) for t in range(1, s.t_pred + 1)])


def base_loss(pred, gt, kind: str = "smooth_l1") -> Tensor:
    """Per-timestep loss, averaged over the coordinate axis (last axis)."""
    pred, gt = as_tensor(pred), as_tensor(gt)
    if pred.shape[-1] != gt.shape[-1]:
        raise DimensionError(f"coordinate widths differ: {pred.shape} vs {gt.shape}")
    d = pred - gt
    if kind == "mse":
        per = d * d
    elif kind == "smooth_l1":
        per = ops.smooth_l1(d)
    else:
        raise ConfigError(f"unknown base loss {kind!r}; expected {BASE_LOSSES}")
    return per.mean(axis=-1)


def weighted_loss(pred, gt, s: PenaltySchedule, kind: str = "smooth_l1") -> Tensor:
    """Sum over steps of w(t) * base_loss; leading axes are kept."""
    pred, gt = as_tensor(pred), as_tensor(gt)
    if pred.shape[-2:] != gt.shape[-2:] or pred.shape[-2] != s.t_pred:
        raise DimensionError(
            f"weighted_loss: pred {pred.shape}, gt {gt.shape}, t_pred {s.t_pred}")
    return (base_loss(pred, gt, kind) * _weights(s)).sum(axis=-1)


def best_of_k_loss(samples, gt, s: PenaltySchedule, kind: str = "smooth_l1") -> Tensor:
    """Min over the sample axis (third from last) of the weighted loss.

    ``samples`` is [..., K, T, C] and ``gt`` is [..., T, C].
    """
    samples, gt = as_tensor(samples), as_tensor(gt)
    if samples.ndim < 3 or samples.shape[-3] < 1:
        raise DimensionError(f"best_of_k_loss needs [..., K, T, C] samples, got {samples.shape}")
    per = weighted_loss(samples, ops.reshape(gt, gt.shape[:-2] + (1,) + gt.shape[-2:]), s, kind)
    return ops.min_along(per, axis=-1)


def final_loss(traj_term, kl=0.0, kl_coeff: float = 1.0) -> Tensor:
    traj_term, kl = as_tensor(traj_term), as_tensor(kl)
    if np.any(kl.data < 0):
        raise ContractError(f"KL term must be non-negative, got {kl.data}")
    return traj_term + kl * kl_coeff
