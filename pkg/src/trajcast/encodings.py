"""The four embedding streams fed to the two transformer encoders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, mlp_forward
from .errors import DimensionError


@dataclass(frozen=True)
class EmbeddingConfig:
    d_temporal: int = 16
    d_spatial: int = 32
    d_social: int = 16
    d_scene: int = 48
    coord_dim: int = 2

    def __post_init__(self):
        dims = (self.d_temporal, self.d_spatial, self.d_social, self.d_scene)
        if min(dims) < 2:
            raise ValueError(f"embedding widths must be >= 2, got {dims}")
        if self.d_temporal % 2:
            raise ValueError("d_temporal must be even")
        if self.coord_dim not in (2, 4):
            raise ValueError("coord_dim must be 2 (points) or 4 (boxes)")

    @property
    def agent_token_dim(self) -> int:
        return self.d_spatial + self.d_temporal + self.d_social

    @property
    def scene_token_dim(self) -> int:
        return self.d_scene + self.d_temporal


def temporal_encoding(t: int, d: int, index: str = "literal") -> np.ndarray:
    """Sinusoidal time encoding of length ``d``.

    With ``index="literal"`` the exponent uses the raw dimension index i,
    i.e. ``10000 ** (2 i / d)``. ``index="pair"`` uses ``2 * (i // 2)`` as in
    the usual transformer positional encoding.
    """
    if t < 0 or d < 1:
        raise ValueError(f"temporal_encoding needs t >= 0 and d >= 1 (t={t}, d={d})")
    i = np.arange(d)
    if index == "literal":
        expo = 2.0 * i / d
    elif index == "pair":
        expo = 2.0 * (i // 2) / d
    else:
        raise ValueError(f"unknown temporal index convention {index!r}")
    angle = t / np.power(10000.0, expo)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def temporal_table(n_steps: int, d: int, index: str = "literal") -> np.ndarray:
    return np.stack([temporal_encoding(t, d, index) for t in range(n_steps)])


def _check_width(x: Tensor, layers, what: str) -> None:
    w = layers[0][0]
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"{what}: input width {x.shape[-1]} != MLP input {w.shape[0]}")


def embed_spatial(coords, layers) -> Tensor:
    """[A, T, C] coordinates -> [A, T, d_spatial], one token at a time."""
    coords = coords if isinstance(coords, Tensor) else Tensor(coords)
    _check_width(coords, layers, "embed_spatial")
    return mlp_forward(coords, layers)


def embed_social(rwpe_rows, layers) -> Tensor:
    """[..., k] random-walk encodings -> [..., d_social]."""
    rwpe_rows = rwpe_rows if isinstance(rwpe_rows, Tensor) else Tensor(rwpe_rows)
    _check_width(rwpe_rows, layers, "embed_social")
    return mlp_forward(rwpe_rows, layers)


def project_scene(latent, layers, n_frames: int | None = None) -> Tensor:
    """[T_obs, d_latent] per-frame scene latents -> [T_obs, d_scene]."""
    latent = latent if isinstance(latent, Tensor) else Tensor(latent)
    if n_frames is not None and latent.shape[0] != n_frames:
        raise DimensionError(
            f"project_scene: {latent.shape[0]} latent frames for a {n_frames}-frame window")
    _check_width(latent, layers, "project_scene")
    return mlp_forward(latent, layers)
