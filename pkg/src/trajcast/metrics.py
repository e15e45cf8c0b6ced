"""Displacement and bounding-box error metrics, with dataset aggregation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError

ARB_VARIANTS = ("mean-of-rmse", "joint-rmse")


def _pair(pred, gt, width=None):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if pred.ndim < 2 or pred.shape[-2] == 0:
        raise DimensionError("trajectories must be non-empty [T, C] arrays")
    if width is not None and pred.shape[-1] != width:
        raise DimensionError(f"expected {width} coordinates per step, got {pred.shape[-1]}")
    return pred, gt


def displacement(pred, gt) -> np.ndarray:
    pred, gt = _pair(pred, gt)
    return np.sqrt(((pred - gt) ** 2).sum(axis=-1))


def ade(pred, gt) -> float:
    return float(displacement(pred, gt).mean(axis=-1))


def fde(pred, gt) -> float:
    return float(displacement(pred, gt)[..., -1])


def min_ade_k(samples, gt) -> tuple[float, int]:
    """Best ADE over the K samples in ``samples`` [K, T, C], and its index."""
    samples = np.asarray(samples, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if samples.ndim != 3 or samples.shape[0] < 1:
        raise DimensionError(f"samples must be [K, T, C] with K >= 1, got {samples.shape}")
    per = displacement(samples, np.broadcast_to(gt, samples.shape)).mean(axis=-1)
    i = int(np.argmin(per))
    return float(per[i]), i


def min_fde_k(samples, gt) -> tuple[float, int]:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3 or samples.shape[0] < 1:
        raise DimensionError(f"samples must be [K, T, C] with K >= 1, got {samples.shape}")
    per = displacement(samples, np.broadcast_to(gt, samples.shape))[:, -1]
    i = int(np.argmin(per))
    return float(per[i]), i


def bbox_centroid(bbox) -> np.ndarray:
    b = np.asarray(bbox, dtype=np.float64)
    return np.stack([(b[..., 0] + b[..., 2]) / 2, (b[..., 1] + b[..., 3]) / 2], axis=-1)


def cade_cfde(pred_boxes, gt_boxes) -> tuple[float, float]:
    pred, gt = _pair(pred_boxes, gt_boxes, width=4)
    d = displacement(bbox_centroid(pred), bbox_centroid(gt))
    return float(d.mean()), float(d[-1])


def arb_frb(pred_boxes, gt_boxes, variant: str = "mean-of-rmse") -> tuple[float, float]:
    """Average and final RMSE over the four box coordinates."""
    pred, gt = _pair(pred_boxes, gt_boxes, width=4)
    sq = (pred - gt) ** 2
    per_step = np.sqrt(sq.mean(axis=-1))
    if variant == "mean-of-rmse":
        arb = float(per_step.mean())
    elif variant == "joint-rmse":
        arb = float(np.sqrt(sq.mean()))
    else:
        raise ValueError(f"unknown ARB variant {variant!r}; expected {ARB_VARIANTS}")
    return arb, float(per_step[-1])


@dataclass
class MetricsReport:
    ade: float | None = None
    fde: float | None = None
    min_ade_k: float | None = None
    min_fde_k: float | None = None
    cade: float | None = None
    cfde: float | None = None
    arb: float | None = None
    frb: float | None = None
    k_used: int = 1
    n_samples_evaluated: int = 0
    scene_averaged: dict = field(default_factory=dict)
    per_scene: dict = field(default_factory=dict)

    METRICS = ("ade", "fde", "min_ade_k", "min_fde_k", "cade", "cfde", "arb", "frb")

    def values(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in self.METRICS if getattr(self, m) is not None}

    def to_text(self) -> str:
        lines = [f"{k} = {v!r}" for k, v in self.values().items()]
        lines += [f"k_used = {self.k_used}", f"n_samples_evaluated = {self.n_samples_evaluated}"]
        for k, v in self.scene_averaged.items():
            lines.append(f"scene_avg.{k} = {v!r}")
        for scene, vals in self.per_scene.items():
            for k, v in vals.items():
                lines.append(f"scene.{scene}.{k} = {v!r}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        """One metric per line: ``name value count``."""
        n = self.n_samples_evaluated
        lines = [f"{k} {v!r} {n}" for k, v in self.values().items()]
        for k, v in self.scene_averaged.items():
            lines.append(f"scene_avg.{k} {v!r} {len(self.per_scene)}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_table())

    def as_dict(self) -> dict:
        return asdict(self)


def per_agent_metrics(pred_samples: np.ndarray, gt: np.ndarray, *, point_pred=None,
                      arb_variant: str = "mean-of-rmse") -> dict[str, float]:
    """Metrics for one agent.

    ``pred_samples`` is [K, T, C]; ``point_pred`` [T, C] is the single
    trajectory scored by the non-min metrics (defaults to sample 0).
    """
    pred_samples = np.asarray(pred_samples, dtype=np.float64)
    point = pred_samples[0] if point_pred is None else np.asarray(point_pred, dtype=np.float64)
    coord_dim = gt.shape[-1]
    out: dict[str, float] = {}
    if coord_dim == 2:
        out["ade"] = ade(point, gt)
        out["fde"] = fde(point, gt)
        out["min_ade_k"] = min_ade_k(pred_samples, gt)[0]
        out["min_fde_k"] = min_fde_k(pred_samples, gt)[0]
    elif coord_dim == 4:
        out["cade"], out["cfde"] = cade_cfde(point, gt)
        out["arb"], out["frb"] = arb_frb(point, gt, arb_variant)
        cs, cg = bbox_centroid(pred_samples), bbox_centroid(gt)
        out["min_ade_k"] = min_ade_k(cs, cg)[0]
        out["min_fde_k"] = min_fde_k(cs, cg)[0]
    else:
        raise DimensionError(f"unsupported coordinate width {coord_dim}")
    return out


def aggregate(rows: list[tuple[str, dict[str, float]]], k_used: int) -> MetricsReport:
    """Unweighted mean over (window, agent) rows, plus per-scene and scene-averaged."""
    report = MetricsReport(k_used=k_used, n_samples_evaluated=len(rows))
    if not rows:
        return report
    names = list(rows[0][1])
    for m in names:
        setattr(report, m, float(np.mean([r[m] for _, r in rows])))
    scenes: dict[str, list[dict]] = {}
    for scene, r in rows:
        scenes.setdefault(scene, []).append(r)
    for scene, rs in scenes.items():
        report.per_scene[scene] = {m: float(np.mean([r[m] for r in rs])) for m in names}
    for m in names:
        report.scene_averaged[m] = float(np.mean([v[m] for v in report.per_scene.values()]))
    return report
