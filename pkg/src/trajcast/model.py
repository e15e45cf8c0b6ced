"""Full forecaster: embeddings -> two encoders -> condition -> decoder(s).

Agents are processed in a canonical order (lexicographic on observed
coordinates, ties broken by agent id) and outputs are mapped back to the
caller's order. Floating-point reductions across agents then run in the
same order for any input permutation, so predictions permute exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .autodiff import MlpSpec, ModelParams, Tensor, ops
from .cvae import (
    GaussianParams,
    PredictionSet,
    agent_noise,
    condition_vector,
    decode,
    generate,
    kl_divergence,
    posterior_params,
    prior_params,
    reparameterize,
    sample_trajectories,
)
from .data import TrajectoryWindow, positions
from .encoder import (
    EncoderConfig,
    assemble_agent_tokens,
    assemble_scene_tokens,
    encoder_forward,
    init_encoder,
    same_agent_mask,
)
from .encodings import EmbeddingConfig, embed_social, embed_spatial, project_scene, temporal_table
from .errors import ConfigError, DimensionError
from .graph import frame_rwpe
from .losses import PenaltySchedule, best_of_k_loss, final_loss, weighted_loss

MODES = ("deterministic", "stochastic")


@dataclass
class ModelConfig:
    mode: str = "deterministic"
    coord_dim: int = 2
    t_obs: int = 8
    t_pred: int = 12
    d_spatial: int = 32
    d_temporal: int = 16
    d_social: int = 16
    d_scene: int = 48
    d_latent: int = 64
    mlp_hidden: int = 64
    rw_steps: int = 8
    eps_dist: float = 0.01
    n_heads: int = 4
    d_ffn: int = 128
    d_z: int = 32
    d_future: int = 64
    d_ytilde: int = 64
    activation: str = "relu"
    ffn_activation: str = "gelu"
    temporal_index: str = "literal"
    agent_attention: str = "joint"
    generator_condition: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.agent_attention not in ("joint", "time"):
            raise ConfigError("agent_attention must be 'joint' or 'time'")
        try:
            self.embedding
            self.agent_encoder
            self.scene_encoder
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def embedding(self) -> EmbeddingConfig:
        return EmbeddingConfig(self.d_temporal, self.d_spatial, self.d_social,
                               self.d_scene, self.coord_dim)

    @property
    def agent_encoder(self) -> EncoderConfig:
        return EncoderConfig(self.embedding.agent_token_dim, self.n_heads, self.d_ffn,
                             self.ffn_activation)

    @property
    def scene_encoder(self) -> EncoderConfig:
        return EncoderConfig(self.embedding.scene_token_dim, self.n_heads, self.d_ffn,
                             self.ffn_activation)

    @property
    def d_condition(self) -> int:
        return self.embedding.agent_token_dim + self.embedding.scene_token_dim

    def mlps(self) -> dict[str, MlpSpec]:
        h, act = self.mlp_hidden, self.activation
        out_dim = self.t_pred * self.coord_dim
        specs = {
            "spatial": MlpSpec.hidden(self.coord_dim, h, self.d_spatial, act),
            "social": MlpSpec.hidden(self.rw_steps, h, self.d_social, act),
            "scene": MlpSpec.hidden(self.d_latent, h, self.d_scene, act),
        }
        if self.mode == "deterministic":
            specs["decoder"] = MlpSpec.hidden(self.d_condition, h, out_dim, act)
        else:
            gen_in = self.d_z + (self.d_condition if self.generator_condition else 0)
            specs["prior"] = MlpSpec.hidden(self.d_condition, h, 2 * self.d_z, act)
            specs["future"] = MlpSpec.hidden(out_dim, h, self.d_future, act)
            specs["posterior"] = MlpSpec.hidden(self.d_condition + self.d_future, h,
                                                2 * self.d_z, act)
            specs["generator"] = MlpSpec.hidden(gen_in, h, self.d_ytilde, act)
            specs["decoder"] = MlpSpec.hidden(self.d_ytilde, h, out_dim, act)
        return specs

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases, unit layer-norm gains."""
    p = ModelParams()
    for name, spec in cfg.mlps().items():
        p.init_mlp(name, spec, rng)
    init_encoder(p, "scene_enc", cfg.scene_encoder, rng)
    init_encoder(p, "agent_enc", cfg.agent_encoder, rng)
    return p


def canonical_order(obs: np.ndarray, agent_ids) -> np.ndarray:
    flat = obs.reshape(obs.shape[0], -1)
    keys = [np.asarray(agent_ids, dtype=np.float64)] + [flat[:, j] for j in range(flat.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


class TrajectoryModel:
    """Parameters plus the forward passes for one configuration."""

    def __init__(self, cfg: ModelConfig, params: ModelParams | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, np.random.default_rng(seed))
        self._specs = cfg.mlps()
        self._temporal = temporal_table(cfg.t_obs, cfg.d_temporal, cfg.temporal_index)
        self._mask_cache: dict[int, np.ndarray] = {}

    def layers(self, name: str):
        return self.params.mlp(name, self._specs[name])

    # -- encoding ---------------------------------------------------------------

    def _check(self, obs: np.ndarray, scene: np.ndarray) -> None:
        c = self.cfg
        if obs.ndim != 3 or obs.shape[1:] != (c.t_obs, c.coord_dim):
            raise DimensionError(
                f"observations {obs.shape} do not match t_obs={c.t_obs}, coord_dim={c.coord_dim}")
        if scene.shape != (c.t_obs, c.d_latent):
            raise DimensionError(f"scene latents {scene.shape}, expected ({c.t_obs}, {c.d_latent})")

    def condition(self, obs: np.ndarray, scene: np.ndarray) -> Tensor:
        """Per-agent condition vectors [A, d_condition] for agents in the given order."""
        cfg = self.cfg
        self._check(obs, scene)
        a = obs.shape[0]
        spatial = embed_spatial(Tensor(obs), self.layers("spatial"))
        rw = frame_rwpe(positions(obs).transpose(1, 0, 2), cfg.rw_steps, cfg.eps_dist)
        social = embed_social(Tensor(rw), self.layers("social"))
        agent_seq = assemble_agent_tokens(spatial, self._temporal, social)
        mask = None
        if cfg.agent_attention == "time":
            mask = self._mask_cache.get(a)
            if mask is None:
                mask = self._mask_cache[a] = same_agent_mask(a, cfg.t_obs)
        agent_emb = encoder_forward(agent_seq, cfg.agent_encoder, self.params, "agent_enc", mask)
        scene_proj = project_scene(Tensor(scene), self.layers("scene"), cfg.t_obs)
        scene_emb = encoder_forward(assemble_scene_tokens(scene_proj, self._temporal),
                                    cfg.scene_encoder, self.params, "scene_enc")
        return condition_vector(scene_emb, agent_emb, a, cfg.t_obs)

    @staticmethod
    def _inputs(window: TrajectoryWindow):
        if window.scene_latents is None:
            raise DimensionError("window has no scene latents attached")
        order = canonical_order(window.obs, window.agent_ids)
        inverse = np.argsort(order)
        return order, inverse

    # -- inference -----------------------------------------------------------------

    def predict(self, window: TrajectoryWindow) -> PredictionSet:
        """Deterministic forecast, one trajectory per agent."""
        if self.cfg.mode != "deterministic":
            raise ConfigError("predict() is the deterministic path; use sample()")
        order, inverse = self._inputs(window)
        obs = window.obs[order]
        c = self.condition(obs, window.scene_latents)
        traj = decode(c, self.layers("decoder"), obs[:, -1, :], self.cfg.t_pred, self.cfg.coord_dim)
        return PredictionSet(traj.data[inverse][:, None], "deterministic",
                             agent_ids=tuple(window.agent_ids))

    def sample(self, window: TrajectoryWindow, k: int, seed: int = 0) -> PredictionSet:
        """K prior samples per agent; each agent's noise is keyed by its agent id."""
        cfg = self.cfg
        if cfg.mode != "stochastic":
            raise ConfigError("sample() needs a stochastic model")
        order, inverse = self._inputs(window)
        obs = window.obs[order]
        ids = [window.agent_ids[i] for i in order]
        c = self.condition(obs, window.scene_latents)
        ps = sample_trajectories(c, k, seed, self.layers("prior"), self.layers("generator"),
                                 self.layers("decoder"), obs[:, -1, :], cfg.t_pred,
                                 cfg.coord_dim, cfg.d_z, cfg.generator_condition, agent_keys=ids)
        return PredictionSet(ps.trajectories[inverse], "stochastic", ps.latents_used[inverse],
                             tuple(window.agent_ids))

    def prior_mean_forecast(self, window: TrajectoryWindow) -> np.ndarray:
        """Trajectory decoded from z = prior mean, [A, T_pred, C]."""
        cfg = self.cfg
        order, inverse = self._inputs(window)
        obs = window.obs[order]
        c = self.condition(obs, window.scene_latents)
        prior = prior_params(c, self.layers("prior"), cfg.d_z)
        y = generate(c, prior.mu, self.layers("generator"), cfg.generator_condition)
        traj = decode(y, self.layers("decoder"), obs[:, -1, :], cfg.t_pred, cfg.coord_dim)
        return traj.data[inverse]

    def point_forecast(self, window: TrajectoryWindow) -> np.ndarray:
        if self.cfg.mode == "deterministic":
            return self.predict(window).trajectories[:, 0]
        return self.prior_mean_forecast(window)

    # -- training objectives -------------------------------------------------------

    def objective(self, window: TrajectoryWindow, schedule: PenaltySchedule,
                  kind: str = "smooth_l1", *, noise: np.ndarray | None = None,
                  k_train: int = 1, kl_coeff: float = 1.0,
                  sample_from: str = "posterior", trace: dict | None = None) -> Tensor:
        """Scalar training loss for one window, averaged over agents.

        Deterministic: weighted loss of the single forecast. Stochastic:
        best-of-K weighted loss over reparameterized samples plus the KL
        between posterior and prior. ``noise`` is [A, K, d_z] in window
        agent order. If ``trace`` is given it receives the decoded residuals
        and the per-sample weighted losses.
        """
        cfg = self.cfg
        order, _ = self._inputs(window)
        obs, fut = window.obs[order], window.future[order]
        c = self.condition(obs, window.scene_latents)
        gt = Tensor(fut)
        if cfg.mode == "deterministic":
            traj = decode(c, self.layers("decoder"), obs[:, -1, :], cfg.t_pred, cfg.coord_dim)
            if trace is not None:
                trace["residual"] = traj.data - fut
            return final_loss(weighted_loss(traj, gt, schedule, kind).mean())
        a = obs.shape[0]
        if noise is None:
            noise = np.zeros((a, k_train, cfg.d_z))
        noise = np.asarray(noise)[order]
        k = noise.shape[1]
        prior = prior_params(c, self.layers("prior"), cfg.d_z)
        post = posterior_params(c, Tensor(fut.reshape(a, -1)), self.layers("future"),
                                self.layers("posterior"), cfg.d_z)
        src = post if sample_from == "posterior" else prior
        z = reparameterize(GaussianParams(src.mu.reshape(a, 1, cfg.d_z),
                                          src.logvar.reshape(a, 1, cfg.d_z)), noise)
        cond = ops.broadcast_to(c.reshape(a, 1, c.shape[-1]), (a, k, c.shape[-1]))
        y = generate(cond, z, self.layers("generator"), cfg.generator_condition)
        traj = decode(y, self.layers("decoder"), obs[:, -1, :].reshape(a, 1, cfg.coord_dim),
                      cfg.t_pred, cfg.coord_dim)
        if trace is not None:
            trace["residual"] = traj.data - fut[:, None]
            trace["per_sample"] = weighted_loss(traj.data, fut[:, None], schedule, kind).data
        traj_term = best_of_k_loss(traj, gt, schedule, kind).mean()
        kl = kl_divergence(post, prior).mean()
        return final_loss(traj_term, kl, kl_coeff)

    def training_noise(self, window: TrajectoryWindow, k: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((window.n_agents, k, self.cfg.d_z))


__all__ = ["ModelConfig", "TrajectoryModel", "init_params", "canonical_order", "agent_noise"]
