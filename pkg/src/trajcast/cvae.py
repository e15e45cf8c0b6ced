"""Condition vectors, the CVAE networks, and displacement decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, mlp_forward, ops
from .errors import ContractError, DimensionError

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


@dataclass
class GaussianParams:
    mu: Tensor
    logvar: Tensor

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.logvar.data)


@dataclass
class PredictionSet:
    """K trajectories per agent: ``trajectories`` is [A, K, T_pred, C]."""

    trajectories: np.ndarray
    mode: str
    latents_used: np.ndarray | None = None
    agent_ids: tuple = ()

    @property
    def k(self) -> int:
        return self.trajectories.shape[1]

    def __post_init__(self):
        if self.mode == "deterministic" and self.trajectories.shape[1] != 1:
            raise ContractError("deterministic predictions carry exactly one sample")
        if not np.all(np.isfinite(self.trajectories)):
            raise ContractError("predicted coordinates must be finite")


def condition_vector(scene_emb, agent_emb, n_agents: int, n_frames: int) -> Tensor:
    """Per-agent condition: [mean_t scene embedding ; mean_t agent embedding].

    ``agent_emb`` holds frame-major tokens, [T * A, d].
    """
    scene_emb, agent_emb = as_tensor(scene_emb), as_tensor(agent_emb)
    if scene_emb.ndim != 2 or scene_emb.shape[0] != n_frames:
        raise DimensionError(f"scene embeddings {scene_emb.shape} for {n_frames} frames")
    if agent_emb.ndim != 2 or agent_emb.shape[0] != n_agents * n_frames:
        raise DimensionError(
            f"agent embeddings {agent_emb.shape} for {n_agents} agents x {n_frames} frames")
    scene = scene_emb.mean(axis=0, keepdims=True)
    agents = agent_emb.reshape(n_frames, n_agents, agent_emb.shape[-1]).mean(axis=0)
    scene = ops.broadcast_to(scene, (n_agents, scene.shape[-1]))
    return ops.concat([scene, agents], axis=-1)


def _gaussian_head(out: Tensor, d_z: int) -> GaussianParams:
    if out.shape[-1] != 2 * d_z:
        raise DimensionError(f"Gaussian head width {out.shape[-1]} != 2 * d_z ({2 * d_z})")
    mu = out[..., :d_z]
    logvar = ops.clamp(out[..., d_z:], LOGVAR_MIN, LOGVAR_MAX)
    return GaussianParams(mu, logvar)


def prior_params(c, layers, d_z: int) -> GaussianParams:
    return _gaussian_head(mlp_forward(c, layers), d_z)


def posterior_params(c, future_flat, future_layers, layers, d_z: int) -> GaussianParams:
    c, future_flat = as_tensor(c), as_tensor(future_flat)
    enc = mlp_forward(future_flat, future_layers)
    return _gaussian_head(mlp_forward(ops.concat([c, enc], axis=-1), layers), d_z)


def reparameterize(g: GaussianParams, noise) -> Tensor:
    """``mu + exp(logvar / 2) * noise``; noise broadcasts against mu."""
    noise = as_tensor(noise)
    return g.mu + ops.exp(g.logvar * 0.5) * noise


def kl_divergence(q: GaussianParams, p: GaussianParams) -> Tensor:
    """KL(q || p) for diagonal Gaussians, summed over the last axis.

    Written as ``0.5 (expm1(r) - r) + 0.5 dmu^2 / var_p`` with
    ``r = logvar_q - logvar_p`` so every term stays non-negative in floating
    point.
    """
    if q.mu.shape != p.mu.shape:
        raise DimensionError(f"KL needs matching latent shapes: {q.mu.shape} vs {p.mu.shape}")
    r = q.logvar - p.logvar
    dmu = q.mu - p.mu
    per = (ops.expm1(r) - r) * 0.5 + dmu * dmu * ops.exp(-p.logvar) * 0.5
    return per.sum(axis=-1)


def generate(c, z, layers, use_condition: bool = True) -> Tensor:
    """Future latent from the sample ``z`` (and the condition ``c``)."""
    z = as_tensor(z)
    inp = ops.concat([as_tensor(c), z], axis=-1) if use_condition else z
    return mlp_forward(inp, layers)


def decode(inp, layers, last_obs, t_pred: int, coord_dim: int) -> Tensor:
    """MLP output read as per-step displacements, integrated from ``last_obs``.

    ``inp`` is [..., d]; ``last_obs`` is [..., C] broadcastable against the
    leading axes. Returns [..., T_pred, C].
    """
    out = mlp_forward(inp, layers)
    if out.shape[-1] != t_pred * coord_dim:
        raise DimensionError(
            f"decoder emits {out.shape[-1]} values, expected {t_pred} x {coord_dim}")
    steps = out.reshape(out.shape[:-1] + (t_pred, coord_dim))
    last = as_tensor(last_obs)
    last = last.reshape(last.shape[:-1] + (1, coord_dim))
    return ops.cumsum(steps, axis=-2) + last


def agent_noise(seed: int, agent_keys, k: int, d_z: int) -> np.ndarray:
    """Standard-normal noise [A, K, d_z]; each agent's stream depends only on its key."""
    return np.stack([
        np.random.default_rng([int(seed) & 0xFFFFFFFF, int(key) & 0xFFFFFFFF]).standard_normal((k, d_z))
        for key in agent_keys
    ]) if len(agent_keys) else np.zeros((0, k, d_z))


def sample_trajectories(c, k: int, seed: int, prior_layers, gen_layers, dec_layers,
                        last_obs, t_pred: int, coord_dim: int, d_z: int,
                        use_condition: bool = True, agent_keys=None,
                        noise: np.ndarray | None = None) -> PredictionSet:
    """Draw K latents per agent from the prior and decode each one."""
    if k < 1:
        raise ContractError("K must be >= 1")
    c = as_tensor(c)
    n = c.shape[0]
    keys = list(range(n)) if agent_keys is None else list(agent_keys)
    if noise is None:
        noise = agent_noise(seed, keys, k, d_z)
    prior = prior_params(c, prior_layers, d_z)
    z = reparameterize(
        GaussianParams(prior.mu.reshape(n, 1, d_z), prior.logvar.reshape(n, 1, d_z)), noise)
    cond = ops.broadcast_to(c.reshape(n, 1, c.shape[-1]), (n, k, c.shape[-1]))
    ytilde = generate(cond, z, gen_layers, use_condition)
    last = as_tensor(last_obs).reshape(n, 1, coord_dim)
    traj = decode(ytilde, dec_layers, last, t_pred, coord_dim)
    return PredictionSet(np.array(traj.data), "stochastic", np.array(z.data), tuple(keys))
