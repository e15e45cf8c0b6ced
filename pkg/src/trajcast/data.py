"""Trajectory tables, observation/prediction windows, splits and augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DataError

LAYOUTS = {"frame_agent_xy": 2, "frame_agent_bbox": 4}
ETH_UCY_DT = 0.4


class TrajectoryRecord(NamedTuple):
    frame_id: int
    agent_id: int
    coords: tuple[float, ...]


@dataclass
class TrajectoryWindow:
    """One sample: centered observations and futures for A complete tracks.

    ``obs`` is [A, T_obs, C], ``future`` [A, T_pred, C]. Raw coordinates are
    ``obs + centering_offset`` (per point for C=2, per corner pair for C=4).
    ``residual`` holds the rounding error of the centering subtraction so the
    raw values can be rebuilt bit for bit; it is dropped by augmentation.
    """

    obs: np.ndarray
    future: np.ndarray
    frame_ids: tuple[int, ...]
    agent_ids: tuple[int, ...]
    centering_offset: np.ndarray
    scene: str = ""
    scene_latents: np.ndarray | None = None
    residual: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def n_agents(self) -> int:
        return self.obs.shape[0]

    @property
    def t_obs(self) -> int:
        return self.obs.shape[1]

    @property
    def t_pred(self) -> int:
        return self.future.shape[1]

    @property
    def coord_dim(self) -> int:
        return self.obs.shape[2]

    def validate(self) -> None:
        a, t_obs, c = self.obs.shape
        if self.future.shape[0] != a or self.future.shape[2] != c:
            raise DataError(f"future {self.future.shape} does not match obs {self.obs.shape}")
        if len(self.frame_ids) != t_obs + self.t_pred:
            raise DataError("window frame ids do not cover obs + pred")
        if len(self.agent_ids) != a:
            raise DataError("window agent ids do not match agent axis")
        if not (np.all(np.isfinite(self.obs)) and np.all(np.isfinite(self.future))):
            raise DataError("window coordinates must be finite")
        if self.scene_latents is not None and self.scene_latents.shape[0] != t_obs:
            raise DataError("scene latents must cover every observed frame")

    def permuted(self, order: Sequence[int]) -> "TrajectoryWindow":
        order = list(order)
        res = None
        if self.residual is not None:
            res = (self.residual[0][order], self.residual[1][order])
        return replace(self, obs=self.obs[order], future=self.future[order],
                       agent_ids=tuple(self.agent_ids[i] for i in order), residual=res)


# --- tables ------------------------------------------------------------------

def load_trajectory_table(path, layout: str = "frame_agent_xy",
                          column_order: str = "xy") -> list[TrajectoryRecord]:
    """Parse whitespace- or comma-separated rows ``frame agent coords...``."""
    if layout not in LAYOUTS:
        raise DataError(f"unknown layout {layout!r}; expected {sorted(LAYOUTS)}")
    if column_order not in ("xy", "yx"):
        raise DataError(f"column order must be 'xy' or 'yx', got {column_order!r}")
    width = LAYOUTS[layout]
    records: dict[tuple[int, int], TrajectoryRecord] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2 + width:
            raise DataError(f"expected {2 + width} columns for {layout}, got {len(parts)}",
                            path, lineno)
        try:
            frame = int(float(parts[0]))
            agent = int(float(parts[1]))
            coords = [float(v) for v in parts[2:]]
        except ValueError as exc:
            raise DataError(f"unparseable row ({exc})", path, lineno) from None
        if float(parts[0]) != frame or float(parts[1]) != agent:
            raise DataError("frame and agent ids must be integers", path, lineno)
        if not all(math.isfinite(v) for v in coords):
            raise DataError("coordinates must be finite", path, lineno)
        if column_order == "yx":
            for i in range(0, width, 2):
                coords[i], coords[i + 1] = coords[i + 1], coords[i]
        key = (frame, agent)
        if key in records:
            raise DataError(f"duplicate record for frame {frame}, agent {agent}", path, lineno)
        records[key] = TrajectoryRecord(frame, agent, tuple(coords))
    return [records[k] for k in sorted(records)]


def write_trajectory_table(records: Iterable[TrajectoryRecord], path) -> None:
    lines = [f"{r.frame_id} {r.agent_id} " + " ".join(repr(float(c)) for c in r.coords)
             for r in sorted(records, key=lambda r: (r.frame_id, r.agent_id))]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# --- windows ------------------------------------------------------------------

def _positions(coords: np.ndarray) -> np.ndarray:
    """Points used for centering/graphs: the point itself, or the box centroid."""
    if coords.shape[-1] == 2:
        return coords
    return np.stack([(coords[..., 0] + coords[..., 2]) / 2,
                     (coords[..., 1] + coords[..., 3]) / 2], axis=-1)


def positions(coords: np.ndarray) -> np.ndarray:
    return _positions(np.asarray(coords, dtype=np.float64))


def center_window(raw: TrajectoryWindow) -> TrajectoryWindow:
    """Subtract the mean last-observed position over agents.

    The mean is computed with ``math.fsum`` so it does not depend on agent
    order. Box layouts subtract the centroid offset from both corners.
    """
    last = _positions(raw.obs[:, -1, :])
    offset2 = np.array([math.fsum(last[:, 0]) / len(last), math.fsum(last[:, 1]) / len(last)])
    c = raw.obs.shape[-1]
    offset = np.tile(offset2, c // 2)
    obs = raw.obs - offset
    fut = raw.future - offset
    residual = (raw.obs - (obs + offset), raw.future - (fut + offset))
    return replace(raw, obs=obs, future=fut, centering_offset=offset, residual=residual)


def uncenter(window: TrajectoryWindow) -> tuple[np.ndarray, np.ndarray]:
    """Raw (obs, future) coordinates of a centered window."""
    o = window.centering_offset
    obs, fut = window.obs + o, window.future + o
    if window.residual is not None:
        obs, fut = obs + window.residual[0], fut + window.residual[1]
    return obs, fut


def _frame_index(frames: list[int], resample: bool) -> dict[int, int]:
    if len(frames) < 2:
        return {f: i for i, f in enumerate(frames)}
    diffs = np.diff(frames)
    if np.all(diffs == 1):
        return {f: i for i, f in enumerate(frames)}
    if not resample:
        gaps = [(frames[i], frames[i + 1]) for i in np.flatnonzero(diffs != 1)[:5]]
        raise DataError(f"non-consecutive frame ids, first gaps {gaps}; set resample to renumber")
    step = int(np.gcd.reduce(diffs))
    idx = {f: (f - frames[0]) // step for f in frames}
    return idx


def build_windows(records: Sequence[TrajectoryRecord], t_obs: int = 8, t_pred: int = 12,
                  stride: int = 1, resample: bool = False, scene: str = "") -> list[TrajectoryWindow]:
    """Slide a (t_obs + t_pred)-frame window over the scene's frames.

    Agents missing any frame of a window are dropped from it; windows with
    no complete agent are skipped. With ``resample`` the frame ids may step
    by a common stride (e.g. every 10th video frame); missing steps count
    as gaps that break tracks.
    """
    if t_obs < 1 or t_pred < 1 or stride < 1:
        raise DataError("t_obs, t_pred and stride must all be >= 1")
    if not records:
        return []
    frames = sorted({r.frame_id for r in records})
    index = _frame_index(frames, resample)
    n_steps = max(index.values()) + 1
    step_to_frame = {v: k for k, v in index.items()}
    width = len(records[0].coords)
    tracks: dict[int, dict[int, tuple]] = {}
    for r in records:
        if len(r.coords) != width:
            raise DataError("mixed coordinate widths in one scene")
        tracks.setdefault(r.agent_id, {})[index[r.frame_id]] = r.coords
    span = t_obs + t_pred
    windows = []
    for start in range(0, n_steps - span + 1, stride):
        steps = range(start, start + span)
        if any(s not in step_to_frame for s in steps):
            continue
        agents = sorted(a for a, tr in tracks.items() if all(s in tr for s in steps))
        if not agents:
            continue
        arr = np.array([[tracks[a][s] for s in steps] for a in agents], dtype=np.float64)
        raw = TrajectoryWindow(
            obs=arr[:, :t_obs], future=arr[:, t_obs:],
            frame_ids=tuple(step_to_frame[s] for s in steps), agent_ids=tuple(agents),
            centering_offset=np.zeros(width), scene=scene)
        w = center_window(raw)
        w.validate()
        windows.append(w)
    return windows


def frame_points(records: Sequence[TrajectoryRecord]) -> dict[int, np.ndarray]:
    """All agent positions per frame (box centroids for box layouts)."""
    out: dict[int, list] = {}
    for r in records:
        out.setdefault(r.frame_id, []).append(r.coords)
    return {f: _positions(np.asarray(v, dtype=np.float64)) for f, v in out.items()}


# --- splits -------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    scenes: tuple[str, ...]
    held_out: str
    train: tuple[str, ...]

    @property
    def test(self) -> tuple[str, ...]:
        return (self.held_out,)


def leave_one_out_split(scenes: Sequence[str], held_out: str) -> SplitPlan:
    scenes = tuple(scenes)
    if len(scenes) < 2:
        raise DataError("leave-one-out needs at least two scenes")
    if held_out not in scenes:
        raise DataError(f"unknown scene {held_out!r}; valid scenes: {', '.join(scenes)}")
    return SplitPlan(scenes, held_out, tuple(s for s in scenes if s != held_out))


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    path: Path
    latents: Path | None = None


def load_scene_manifest(path) -> list[ManifestEntry]:
    """Lines of ``scene_name table_path [latents_path]``; paths relative to the manifest."""
    base = Path(path).parent
    entries, seen = [], set()
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise DataError("expected 'scene_name path [latents_path]'", path, lineno)
        if parts[0] in seen:
            raise DataError(f"duplicate scene {parts[0]!r}", path, lineno)
        seen.add(parts[0])
        lat = base / parts[2] if len(parts) == 3 else None
        entries.append(ManifestEntry(parts[0], base / parts[1], lat))
    if not entries:
        raise DataError("manifest lists no scenes", path)
    return entries


def pie_horizons(fps: float, obs_seconds: float = 0.5, pred_seconds: float = 1.0) -> tuple[int, int]:
    """Observation/prediction frame counts for ego-view windows at ``fps``."""
    return max(1, round(obs_seconds * fps)), max(1, round(pred_seconds * fps))


# --- augmentation --------------------------------------------------------------

def _rotate(coords: np.ndarray, cos: float, sin: float) -> np.ndarray:
    out = coords.copy()
    for i in range(0, coords.shape[-1], 2):
        x, y = coords[..., i], coords[..., i + 1]
        out[..., i] = cos * x - sin * y
        out[..., i + 1] = sin * x + cos * y
    return out


def rigid_transform(window: TrajectoryWindow, theta: float, shift) -> TrajectoryWindow:
    """Rotate about the centering origin by ``theta``, then translate by ``shift``."""
    c, s = math.cos(theta), math.sin(theta)
    shift = np.tile(np.asarray(shift, dtype=np.float64), window.coord_dim // 2)
    obs = _rotate(window.obs, c, s) + shift
    fut = _rotate(window.future, c, s) + shift
    return replace(window, obs=obs, future=fut, residual=None)


def augment(window: TrajectoryWindow, rng: np.random.Generator, rotate: bool = True,
            trans_sigma: float = 1.0, probability: float = 0.5) -> TrajectoryWindow:
    """Random rigid motion applied identically to every agent's obs and future.

    Box layouts are translation-only regardless of ``rotate``.
    """
    if rng.random() >= probability:
        return window
    theta = rng.uniform(0.0, 2 * math.pi) if rotate and window.coord_dim == 2 else 0.0
    shift = rng.uniform(-trans_sigma, trans_sigma, size=2)
    return rigid_transform(window, theta, shift)
