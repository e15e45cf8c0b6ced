"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data or
validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint
from .config import load_config
from .data import (
    TrajectoryWindow,
    build_windows,
    center_window,
    load_trajectory_table,
    uncenter,
    write_trajectory_table,
)
from .errors import ConfigError, ContractError, DataError, DimensionError, NumericError
from .gradsuite import MODULES, TOLERANCE, run_gradcheck
from .synth import KINDS, synth_generate
from .train import (
    attach_latents,
    evaluate_model,
    latent_table,
    load_manifest_windows,
    model_from_checkpoint,
    prepare_dataset,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _say(msg: str) -> None:
    print(msg, flush=True)


# --- commands ------------------------------------------------------------------

def cmd_train(args) -> int:
    overrides = {"seed": args.seed, "mode": args.mode, "epochs": args.epochs, "out": args.out}
    cfg = load_config(args.config, **overrides)
    if not cfg.out:
        cfg = cfg.updated(out="run")
    ds = prepare_dataset(cfg)
    _say(f"training {cfg.mode} model on {len(ds.train)} windows "
         f"({len(ds.val)} validation, {len(ds.test)} test) for {cfg.epochs} epochs")
    quiet = args.quiet

    def progress(row):
        if not quiet and ("val" in row or row["epoch"] == cfg.epochs):
            _say(" ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                          for k, v in row.items()))

    res = train(cfg, ds, progress)
    _say(f"best epoch {res.best_epoch}; checkpoint written to {Path(cfg.out) / 'model.ckpt'}")
    _say(res.val_report.to_table().rstrip())
    if ds.test:
        test = evaluate_model(res.model, ds.test, cfg.k_effective, cfg.seed)
        test.write(Path(cfg.out) / "test_metrics.txt")
        _say("test:")
        _say(test.to_table().rstrip())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg, model = model_from_checkpoint(ckpt)
    k = cfg.k_effective if args.k is None else args.k
    if cfg.mode == "deterministic" and k != 1:
        raise ContractError(f"checkpoint is deterministic; --k {k} needs a stochastic model")
    scenes = load_manifest_windows(cfg, args.data)
    windows = [w for name, ws in scenes.items()
               if not args.scene or name == args.scene for w in ws]
    if not windows:
        raise DataError("no complete windows to evaluate")
    seed = int(ckpt.state.get("eval_seed", cfg.seed)) if args.seed is None else args.seed
    report = evaluate_model(model, windows, k, seed, args.arb_variant)
    text = report.to_table()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        report.write(args.out)
    sys.stdout.write(text)
    return EXIT_OK


def observation_window(records, t_obs: int, t_pred: int) -> TrajectoryWindow:
    """Window over the last ``t_obs`` frames of ``records``; the future is unknown."""
    frames = sorted({r.frame_id for r in records})
    if len(frames) < t_obs:
        raise DataError(f"window file covers {len(frames)} frames, need {t_obs}")
    frames = frames[-t_obs:]
    step = int(np.gcd.reduce(np.diff(frames))) if len(frames) > 1 else 1
    tail = [r for r in records if r.frame_id >= frames[0]]
    future = [frames[-1] + step * (i + 1) for i in range(t_pred)]
    width = len(tail[0].coords)
    padded = list(tail) + [type(r)(f, r.agent_id, (0.0,) * width)
                           for r in tail if r.frame_id == frames[-1] for f in future]
    wins = build_windows(padded, t_obs, t_pred, 1, resample=step > 1)
    if len(wins) != 1:
        raise DataError("window file has no agent observed in every frame")
    w = wins[0]
    raw = replace(w, obs=uncenter(w)[0], future=np.zeros_like(w.future),
                  centering_offset=np.zeros(width), residual=None)
    return center_window(raw)


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg, model = model_from_checkpoint(ckpt)
    records = load_trajectory_table(args.window, cfg.layout, cfg.column_order)
    if not records:
        raise DataError("window file is empty", args.window)
    window = observation_window(records, cfg.model.t_obs, cfg.model.t_pred)
    obs_records = [r for r in records if r.frame_id in window.frame_ids]
    if cfg.scene_source == "file" and not args.latents:
        raise ConfigError("checkpoint uses file latents; pass --latents")
    table = latent_table(cfg, obs_records, args.latents)
    window = attach_latents([window], table)[0]
    k = 1 if cfg.mode == "deterministic" else (args.k or cfg.k_eval)
    if cfg.mode == "deterministic":
        traj = model.predict(window).trajectories
    else:
        traj = model.sample(window, k, args.seed).trajectories
    traj = traj + window.centering_offset
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    future_frames = window.frame_ids[window.t_obs:]
    with out.open("w") as fh:
        fh.write("# agent_id sample frame_id " + " ".join(
            f"c{i}" for i in range(window.coord_dim)) + "\n")
        for a, agent in enumerate(window.agent_ids):
            for s in range(traj.shape[1]):
                for t, frame in enumerate(future_frames):
                    vals = " ".join(repr(float(v)) for v in traj[a, s, t])
                    fh.write(f"{agent} {s} {frame} {vals}\n")
    _say(f"wrote {window.n_agents} agents x {k} samples x {window.t_pred} steps to {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.n < 1 or args.agents < 1:
        raise UsageError("--n and --agents must be >= 1")
    if args.paired and args.kind != "bimodal_turn":
        raise UsageError("--paired only applies to --kind bimodal_turn")
    records = synth_generate(args.kind, args.n, args.agents, args.seed, paired=args.paired)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = out / f"{args.kind}.txt"
    write_trajectory_table(records, table)
    (out / "manifest.txt").write_text(f"{args.kind} {table.name}\n")
    _say(f"wrote {len(records)} records ({args.n} windows x {args.agents} agents) to {table}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(args.module, args.seed)
    failed = 0
    for name, r in results.items():
        ok = r.passed(TOLERANCE)
        failed += not ok
        _say(f"{'PASS' if ok else 'FAIL'} {name} max_rel_error={r.max_rel_error:.3e} "
             f"checked={r.n_checked} skipped={len(r.skipped)}")
    _say(f"{len(results) - failed}/{len(results)} checks below {TOLERANCE:g}")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


def _read_series(path: Path) -> dict[str, list[tuple[str, str]]]:
    """Series from a training log (``k=v`` per epoch) or a metrics table."""
    series: dict[str, list[tuple[str, str]]] = {}
    lines = [l for l in path.read_text().splitlines() if l.strip() and not l.startswith("#")]
    if not lines:
        raise DataError("report is empty", path)
    if "=" in lines[0].split()[0]:
        for lineno, line in enumerate(lines, start=1):
            row = dict(p.split("=", 1) for p in line.split() if "=" in p)
            if "epoch" not in row:
                raise DataError("log line without epoch", path, lineno)
            for k, v in row.items():
                if k != "epoch":
                    series.setdefault(k, []).append((row["epoch"], v))
    else:
        for lineno, line in enumerate(lines, start=1):
            parts = line.split()
            if len(parts) != 3:
                raise DataError("expected 'name value count'", path, lineno)
            series.setdefault("metrics", []).append((parts[0], parts[1]))
    return series


def cmd_plot_data(args) -> int:
    src = Path(args.report)
    if not src.is_file():
        raise DataError("no such report", src)
    series = _read_series(src)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in series.items():
        (out / f"{name}.dat").write_text("".join(f"{x} {y}\n" for x, y in rows))
    _say(f"wrote {len(series)} series to {out}: {', '.join(sorted(series))}")
    return EXIT_OK


# --- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trajcast", description="Scene-aware transformer trajectory forecaster.")
    p.add_argument("--version", action="version", version=f"trajcast {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--mode", choices=["det", "stoch", "deterministic", "stochastic"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--out", help="output directory (default: config value, else ./run)")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on a scene manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="scene manifest")
    e.add_argument("--k", type=int)
    e.add_argument("--arb-variant", choices=["mean-of-rmse", "joint-rmse"], default="mean-of-rmse")
    e.add_argument("--scene", help="only evaluate this manifest scene")
    e.add_argument("--seed", type=int)
    e.add_argument("--out", help="also write the report here")
    e.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("predict", help="forecast one observation window")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--window", required=True, help="trajectory table with the observed frames")
    pr.add_argument("--out", required=True)
    pr.add_argument("--latents", help="scene latent table for the observed frames")
    pr.add_argument("--k", type=int)
    pr.add_argument("--seed", type=int, default=0)
    pr.set_defaults(func=cmd_predict)

    s = sub.add_parser("synth", help="write a synthetic corpus")
    s.add_argument("--kind", required=True, choices=KINDS)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--agents", type=int, default=2)
    s.add_argument("--paired", action="store_true",
                   help="bimodal_turn: emit each observation once per turn direction")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g.add_argument("--module", default="all", choices=["all", *MODULES])
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    pd = sub.add_parser("plot-data", help="turn a log or report into plain-text series")
    pd.add_argument("--report", required=True)
    pd.add_argument("--out", required=True)
    pd.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
