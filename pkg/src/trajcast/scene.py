"""Per-frame scene latent vectors.

Three providers: a latent table read from disk (drop-in for features from
an external image encoder), a coarse occupancy-grid encoder computed from
agent positions, and an all-zero table for the no-scene ablation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

DEFAULT_LATENT_DIM = 64


@dataclass
class SceneLatentTable:
    dim: int
    entries: dict[int, np.ndarray] = field(default_factory=dict)

    def __contains__(self, frame_id) -> bool:
        return int(frame_id) in self.entries

    def __len__(self):
        return len(self.entries)

    def add(self, frame_id: int, vec) -> None:
        v = np.asarray(vec, dtype=np.float64)
        if v.shape != (self.dim,):
            raise DataError(f"latent for frame {frame_id} has shape {v.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(v)):
            raise DataError(f"latent for frame {frame_id} is not finite")
        if int(frame_id) in self.entries:
            raise DataError(f"duplicate latent for frame {frame_id}")
        self.entries[int(frame_id)] = v

    def lookup(self, frame_ids: Iterable[int]) -> np.ndarray:
        ids = list(frame_ids)
        missing = [f for f in ids if int(f) not in self.entries]
        if missing:
            raise DataError(f"no scene latent for frame(s) {missing[:5]}")
        return np.stack([self.entries[int(f)] for f in ids]) if ids else np.zeros((0, self.dim))

    def missing(self, frame_ids: Iterable[int]) -> list[int]:
        return sorted({int(f) for f in frame_ids} - self.entries.keys())


def load_scene_latents(path, expected_dim: int | None = None) -> SceneLatentTable:
    """Read a ``dim D`` header followed by ``frame v1 .. vD`` rows."""
    table = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if table is None:
            if len(parts) != 2 or parts[0] != "dim":
                raise DataError("expected header 'dim <D>'", path, lineno)
            try:
                dim = int(parts[1])
            except ValueError:
                raise DataError(f"bad latent dim {parts[1]!r}", path, lineno) from None
            if dim < 1:
                raise DataError("latent dim must be >= 1", path, lineno)
            if expected_dim is not None and dim != expected_dim:
                raise DataError(f"latent dim {dim} != expected {expected_dim}", path, lineno)
            table = SceneLatentTable(dim)
            continue
        if len(parts) != table.dim + 1:
            raise DataError(
                f"expected frame id plus {table.dim} values, got {len(parts)} fields",
                path, lineno)
        try:
            frame = int(parts[0])
            vec = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise DataError(f"unparseable latent row ({exc})", path, lineno) from None
        try:
            table.add(frame, vec)
        except DataError as exc:
            raise DataError(str(exc), path, lineno) from None
    if table is None:
        raise DataError("missing 'dim <D>' header", path)
    return table


def save_scene_latents(table: SceneLatentTable, path) -> None:
    lines = [f"dim {table.dim}"]
    for frame in sorted(table.entries):
        lines.append(f"{frame} " + " ".join(repr(float(v)) for v in table.entries[frame]))
    Path(path).write_text("\n".join(lines) + "\n")


def constant_scene_latents(frames: Iterable[int], dim: int = DEFAULT_LATENT_DIM) -> SceneLatentTable:
    if dim < 1:
        raise ValueError("latent dim must be >= 1")
    table = SceneLatentTable(dim)
    for f in sorted({int(f) for f in frames}):
        table.add(f, np.zeros(dim))
    return table


def grid_occupancy_encoder(points: Sequence, grid: int, bounds: Sequence[float]) -> np.ndarray:
    """Occupancy counts on a ``grid x grid`` lattice, divided by the max count.

    ``bounds`` is ``(xmin, ymin, xmax, ymax)``. Points outside are clipped
    into the border cells. Cells are flattened row-major with rows along y.
    """
    if grid < 1:
        raise ValueError("grid size must be >= 1")
    xmin, ymin, xmax, ymax = map(float, bounds)
    if not xmax > xmin or not ymax > ymin:
        raise DataError(f"degenerate scene bounds {tuple(bounds)}")
    counts = np.zeros((grid, grid))
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts):
        ix = np.clip(np.floor((pts[:, 0] - xmin) / (xmax - xmin) * grid), 0, grid - 1).astype(int)
        iy = np.clip(np.floor((pts[:, 1] - ymin) / (ymax - ymin) * grid), 0, grid - 1).astype(int)
        np.add.at(counts, (iy, ix), 1.0)
    peak = counts.max()
    return (counts / peak if peak > 0 else counts).reshape(-1)


def scene_bounds(points: np.ndarray, margin: float = 0.05) -> tuple[float, float, float, float]:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = np.maximum((hi - lo) * margin, 1e-6)
    return (lo[0] - pad[0], lo[1] - pad[1], hi[0] + pad[0], hi[1] + pad[1])


def grid_scene_latents(frame_points: dict[int, np.ndarray], grid: int = 8,
                       bounds: Sequence[float] | None = None) -> SceneLatentTable:
    """Occupancy-grid latents for every frame in ``frame_points``."""
    if bounds is None:
        allpts = [p for p in frame_points.values() if len(p)]
        if not allpts:
            raise DataError("cannot derive scene bounds from an empty scene")
        bounds = scene_bounds(np.concatenate([np.asarray(p).reshape(-1, 2) for p in allpts]))
    table = SceneLatentTable(grid * grid)
    for frame in sorted(frame_points):
        table.add(frame, grid_occupancy_encoder(frame_points[frame], grid, bounds))
    return table
