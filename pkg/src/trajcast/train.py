"""Dataset preparation, the training loop, evaluation, and checkpoint plumbing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape
from .checkpoint import Checkpoint, load_checkpoint, quantize, save_checkpoint
from .config import STORAGE_DTYPES, TrainConfig, format_value, from_mapping
from .data import (
    TrajectoryWindow,
    augment,
    build_windows,
    frame_points,
    leave_one_out_split,
    load_scene_manifest,
    load_trajectory_table,
)
from .errors import ConfigError, ContractError, DataError, DimensionError, NumericError
from .metrics import MetricsReport, aggregate, per_agent_metrics
from .model import TrajectoryModel, init_params
from .optim import OptimizerState, adamw_step, cosine_lr
from .scene import SceneLatentTable, constant_scene_latents, grid_scene_latents, load_scene_latents
from .synth import synth_generate

LOG_TAIL = 50


# --- datasets ------------------------------------------------------------------

@dataclass
class Dataset:
    train: list[TrajectoryWindow]
    val: list[TrajectoryWindow] = field(default_factory=list)
    test: list[TrajectoryWindow] = field(default_factory=list)

    @property
    def coord_dim(self) -> int:
        for part in (self.train, self.val, self.test):
            if part:
                return part[0].coord_dim
        raise DataError("dataset has no windows")


def attach_latents(windows: Sequence[TrajectoryWindow], table: SceneLatentTable,
                   scene: str = "") -> list[TrajectoryWindow]:
    """Give each window its per-observed-frame latents; every frame must resolve."""
    out = []
    for w in windows:
        obs_frames = w.frame_ids[:w.t_obs]
        missing = table.missing(obs_frames)
        if missing:
            raise DataError(f"scene {scene or w.scene!r}: no latent for frame(s) {missing[:5]}")
        out.append(replace(w, scene_latents=table.lookup(obs_frames)))
    return out


def latent_table(cfg: TrainConfig, records, latents_path=None) -> SceneLatentTable:
    d = cfg.model.d_latent
    if cfg.scene_source == "file":
        if latents_path is None:
            raise DataError("scene_source = file but the manifest gives no latents path")
        return load_scene_latents(latents_path, expected_dim=d)
    if cfg.scene_source == "constant":
        return constant_scene_latents(sorted({r.frame_id for r in records}), d)
    if cfg.grid * cfg.grid != d:
        raise ConfigError(f"grid {cfg.grid} gives {cfg.grid ** 2} latent values, d_latent is {d}")
    return grid_scene_latents(frame_points(records), cfg.grid)


def windows_from_records(cfg: TrainConfig, records, scene: str = "",
                         latents_path=None) -> list[TrajectoryWindow]:
    wins = build_windows(records, cfg.model.t_obs, cfg.model.t_pred, cfg.stride,
                         cfg.resample, scene)
    return attach_latents(wins, latent_table(cfg, records, latents_path), scene)


def load_manifest_windows(cfg: TrainConfig, manifest) -> dict[str, list[TrajectoryWindow]]:
    out = {}
    for entry in load_scene_manifest(manifest):
        records = load_trajectory_table(entry.path, cfg.layout, cfg.column_order)
        out[entry.name] = windows_from_records(cfg, records, entry.name, entry.latents)
    return out


def split_validation(windows: list, fraction: float) -> tuple[list, list]:
    """Hold out the trailing ``ceil(fraction * n)`` windows for validation."""
    n_val = math.ceil(fraction * len(windows)) if fraction > 0 and len(windows) > 1 else 0
    n_val = min(n_val, len(windows) - 1)
    if n_val <= 0:
        return list(windows), []
    return list(windows[:-n_val]), list(windows[-n_val:])


def synth_windows(cfg: TrainConfig, seed: int) -> list[TrajectoryWindow]:
    records = synth_generate(cfg.synth_kind, cfg.synth_n, cfg.synth_agents, seed,
                             cfg.model.t_obs, cfg.model.t_pred)
    return windows_from_records(cfg, records, f"synth-{cfg.synth_kind}")


def prepare_dataset(cfg: TrainConfig) -> Dataset:
    """Windows for training, validation and test, with latents validated.

    Synthetic corpora use ``synth_seed`` for training and ``synth_seed + 1``
    for the test split. Manifest corpora hold out ``held_out`` as the test
    scene when it is set.
    """
    if cfg.synth_kind:
        train, val = split_validation(synth_windows(cfg, cfg.synth_seed), cfg.val_fraction)
        return Dataset(train, val, synth_windows(cfg, cfg.synth_seed + 1))
    if not cfg.data:
        raise ConfigError("no data: set 'data' to a scene manifest or 'synth_kind'")
    scenes = load_manifest_windows(cfg, cfg.data)
    if cfg.held_out:
        plan = leave_one_out_split(list(scenes), cfg.held_out)
        pool = [w for s in plan.train for w in scenes[s]]
        test = list(scenes[cfg.held_out])
    else:
        pool = [w for ws in scenes.values() for w in ws]
        test = []
    if not pool:
        raise DataError("no complete windows in the training scenes")
    train, val = split_validation(pool, cfg.val_fraction)
    return Dataset(train, val, test)


# --- evaluation ----------------------------------------------------------------

def window_seed(seed: int, window: TrajectoryWindow) -> int:
    """Sampling seed for one window; independent of agent order."""
    return (int(seed) * 1_000_003 + int(window.frame_ids[0])) & 0xFFFFFFFF


def evaluate_model(model: TrajectoryModel, windows: Sequence[TrajectoryWindow], k: int,
                   seed: int = 0, arb_variant: str = "mean-of-rmse") -> MetricsReport:
    """Metrics over every (window, agent) pair.

    Deterministic models score their single forecast. Stochastic models score
    the prior-mean forecast for the single-trajectory metrics and K seeded
    prior samples for the best-of-K metrics.
    """
    if model.cfg.mode == "deterministic" and k != 1:
        raise ContractError(f"deterministic model evaluated with K={k}; it produces one sample")
    if k < 1:
        raise ContractError("K must be >= 1")
    rows = []
    for w in windows:
        if w.coord_dim != model.cfg.coord_dim:
            raise DimensionError(
                f"data has {w.coord_dim} coordinates per step, model expects {model.cfg.coord_dim}")
        point = model.point_forecast(w)
        if model.cfg.mode == "stochastic":
            samples = model.sample(w, k, window_seed(seed, w)).trajectories
        else:
            samples = point[:, None]
        for a in range(w.n_agents):
            rows.append((w.scene, per_agent_metrics(samples[a], w.future[a], point_pred=point[a],
                                                    arb_variant=arb_variant)))
    return aggregate(rows, k)


def selection_metric(report: MetricsReport, mode: str) -> float:
    if report.n_samples_evaluated == 0:
        return math.inf
    if report.ade is None:  # box layouts
        return report.cade if mode == "deterministic" else report.min_ade_k
    return report.ade if mode == "deterministic" else report.min_ade_k


# --- training --------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: TrajectoryModel
    log: list[dict]
    best_epoch: int
    val_report: MetricsReport


def make_checkpoint(cfg: TrainConfig, arrays: dict, *, state=None, metrics=None,
                    log=None) -> Checkpoint:
    snapshot = {k: format_value(v) for k, v in cfg.items() if k != "out"}
    return Checkpoint(snapshot, dict(arrays), dict(state or {}), dict(metrics or {}),
                      list(log or [])[-LOG_TAIL:], STORAGE_DTYPES[cfg.storage_dtype])


def _log_line(row: dict) -> str:
    return " ".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items())


def train(cfg: TrainConfig, dataset: Dataset,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Seeded AdamW training, one window per step.

    Returns the best-validation weights (rounded to the storage dtype) with
    their validation metrics. A non-finite loss or gradient raises
    ``NumericError`` carrying the checkpoint of the last completed epoch.
    """
    if not dataset.train:
        raise DataError("training split is empty")
    if dataset.coord_dim != cfg.model.coord_dim:
        raise ConfigError(
            f"data has {dataset.coord_dim} coordinates per step, config says {cfg.model.coord_dim}")
    for w in dataset.train + dataset.val:
        if w.scene_latents is None:
            raise DataError("every window needs scene latents before training")
    init_ss, shuffle_ss, aug_ss, noise_ss = np.random.SeedSequence(cfg.seed).spawn(4)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    aug_rng = np.random.default_rng(aug_ss)
    noise_rng = np.random.default_rng(noise_ss)
    model = TrajectoryModel(cfg.model, init_params(cfg.model, np.random.default_rng(init_ss)))
    names = list(model.params)
    tensors = [model.params[n] for n in names]
    arrays = {n: model.params[n].data for n in names}
    opt = OptimizerState.for_params(arrays, lr=cfg.lr_max, beta1=cfg.beta1, beta2=cfg.beta2,
                                    eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
    schedule = cfg.schedule()
    stochastic = cfg.mode == "stochastic"
    val = dataset.val or dataset.train
    k_val = cfg.k_effective
    log: list[dict] = []

    best_arrays = model.params.arrays()
    best_epoch, best_score = 0, math.inf
    last_good = best_arrays

    def abort(msg):
        ckpt = make_checkpoint(cfg, {n: quantize(a, STORAGE_DTYPES[cfg.storage_dtype])
                                     for n, a in last_good.items()},
                               state={"step": opt.step, "aborted": "true"},
                               log=[_log_line(r) for r in log])
        if cfg.out:
            save_checkpoint(ckpt, Path(cfg.out) / "last_good.ckpt")
        raise NumericError(msg, checkpoint=ckpt)

    def step(grads, count, lr):
        if count > 1:
            grads = {n: g / count for n, g in grads.items()}
        try:
            adamw_step(arrays, grads, opt, lr)
        except NumericError as exc:
            abort(str(exc))

    n = len(dataset.train)
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min)
        acc: dict[str, np.ndarray] = {}
        count, total = 0, 0.0
        for i in shuffle_rng.permutation(n):
            w = dataset.train[i]
            if cfg.augment:
                w = augment(w, aug_rng, cfg.augment_rotate, cfg.augment_sigma,
                            cfg.augment_probability)
            noise = model.training_noise(w, cfg.k_train, noise_rng) if stochastic else None
            with Tape() as tape:
                loss = model.objective(w, schedule, cfg.base_loss, noise=noise,
                                       kl_coeff=cfg.kl_coeff, sample_from=cfg.train_sample_from)
            value = loss.item()
            if not math.isfinite(value):
                abort(f"non-finite loss at epoch {epoch}")
            tape.backward(loss, wrt=tensors)
            total += value
            if cfg.accumulate == 1:
                step({nm: t.grad for nm, t in zip(names, tensors)}, 1, lr)
                continue
            for nm, t in zip(names, tensors):
                if nm in acc:
                    acc[nm] += t.grad
                else:
                    acc[nm] = t.grad.copy()
            count += 1
            if count == cfg.accumulate:
                step(acc, count, lr)
                acc, count = {}, 0
        if count:
            step(acc, count, lr)
        row = {"epoch": epoch + 1, "lr": lr, "loss": total / n}
        if (epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs:
            score = selection_metric(evaluate_model(model, val, k_val, cfg.seed), cfg.mode)
            row["val"] = score
            if score < best_score:
                best_score, best_epoch = score, epoch + 1
                best_arrays = model.params.arrays()
        last_good = model.params.arrays()
        log.append(row)
        if progress is not None:
            progress(row)

    dtype = STORAGE_DTYPES[cfg.storage_dtype]
    stored = {nm: quantize(a, dtype) for nm, a in best_arrays.items()}
    final = TrajectoryModel(cfg.model, model.params.copy())
    final.params.load_arrays(stored)
    report = evaluate_model(final, val, k_val, cfg.seed)
    metrics = {f"val.{k}": v for k, v in report.values().items()}
    state = {"step": opt.step, "best_epoch": best_epoch, "epochs_run": cfg.epochs,
             "n_train": n, "n_val": len(val), "k_eval": k_val, "eval_seed": cfg.seed}
    ckpt = make_checkpoint(cfg, stored, state=state, metrics=metrics,
                           log=[_log_line(r) for r in log])
    if cfg.out:
        out = Path(cfg.out)
        save_checkpoint(ckpt, out / "model.ckpt")
        (out / "train_log.txt").write_text("".join(_log_line(r) + "\n" for r in log))
        report.write(out / "val_metrics.txt")
    return TrainResult(ckpt, final, log, best_epoch, report)


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[TrainConfig, TrajectoryModel]:
    try:
        cfg = from_mapping(ckpt.config)
    except ConfigError as exc:
        raise DataError(f"checkpoint config is invalid: {exc}") from None
    params = init_params(cfg.model, np.random.default_rng(0))
    stored = ckpt.params()
    missing = sorted(set(params) - set(stored))
    if missing:
        raise DataError(f"checkpoint lacks parameters {missing[:5]}")
    params.load_arrays(stored)
    return cfg, TrajectoryModel(cfg.model, params)


def evaluate(checkpoint, windows: Sequence[TrajectoryWindow], k: int | None = None,
             seed: int | None = None, arb_variant: str = "mean-of-rmse") -> MetricsReport:
    """Evaluate a checkpoint (object or manifest path) on ``windows``."""
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    cfg, model = model_from_checkpoint(ckpt)
    if k is None:
        k = cfg.k_effective
    if seed is None:
        seed = int(ckpt.state.get("eval_seed", cfg.seed))
    return evaluate_model(model, windows, k, seed, arb_variant)
