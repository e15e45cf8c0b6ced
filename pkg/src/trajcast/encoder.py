"""Token assembly and the single-layer pre-norm transformer encoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ModelParams, Tensor, layer_norm, ops, softmax_last_dim
from .autodiff.nn import activation, glorot_uniform
from .errors import DimensionError

MASKED = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int
    n_heads: int = 4
    d_ffn: int = 128
    ffn_activation: str = "gelu"
    ln_eps: float = 1e-5
    n_layers: int = field(default=1, init=False)

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")

    @property
    def n_params(self) -> int:
        d, f = self.d_model, self.d_ffn
        return 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d


@dataclass
class TokenSequence:
    tokens: Tensor
    provenance: list

    def __len__(self):
        return self.tokens.shape[0]


def assemble_agent_tokens(spatial, temporal, social) -> TokenSequence:
    """Concatenate [spatial; temporal; social] per (frame, agent) token.

    ``spatial`` is [A, T, ds], ``temporal`` [T, dt], ``social`` [T, A, dso].
    Tokens are ordered frame-major, then agent.
    """
    spatial = spatial if isinstance(spatial, Tensor) else Tensor(spatial)
    social = social if isinstance(social, Tensor) else Tensor(social)
    temporal = np.asarray(temporal.data if isinstance(temporal, Tensor) else temporal)
    if spatial.ndim != 3:
        raise DimensionError(f"spatial stream must be [A, T, d], got {spatial.shape}")
    a, t, _ = spatial.shape
    if temporal.ndim != 2 or temporal.shape[0] != t:
        raise DimensionError(f"temporal stream shape {temporal.shape} does not cover T={t}")
    if social.ndim != 3 or social.shape[:2] != (t, a):
        raise DimensionError(f"social stream shape {social.shape}, expected ({t}, {a}, d)")
    frame_major = spatial.transpose(1, 0, 2)
    temp = Tensor(np.broadcast_to(temporal[:, None, :], (t, a, temporal.shape[1])))
    tokens = ops.concat([frame_major, temp, social], axis=-1)
    prov = [(agent, frame) for frame in range(t) for agent in range(a)]
    return TokenSequence(tokens.reshape(t * a, tokens.shape[-1]), prov)


def assemble_scene_tokens(scene_proj, temporal) -> TokenSequence:
    scene_proj = scene_proj if isinstance(scene_proj, Tensor) else Tensor(scene_proj)
    temporal = np.asarray(temporal.data if isinstance(temporal, Tensor) else temporal)
    if scene_proj.shape[0] != temporal.shape[0]:
        raise DimensionError(
            f"scene tokens: {scene_proj.shape[0]} scene frames vs "
            f"{temporal.shape[0]} temporal frames")
    tokens = ops.concat([scene_proj, Tensor(temporal)], axis=-1)
    return TokenSequence(tokens, list(range(temporal.shape[0])))


def init_encoder(params: ModelParams, prefix: str, cfg: EncoderConfig,
                 rng: np.random.Generator) -> None:
    d, f = cfg.d_model, cfg.d_ffn
    for name in ("q", "k", "v", "o"):
        params[f"{prefix}.attn.{name}.w"] = glorot_uniform(rng, d, d)
        params[f"{prefix}.attn.{name}.b"] = np.zeros(d)
    params[f"{prefix}.ffn.0.w"] = glorot_uniform(rng, d, f)
    params[f"{prefix}.ffn.0.b"] = np.zeros(f)
    params[f"{prefix}.ffn.1.w"] = glorot_uniform(rng, f, d)
    params[f"{prefix}.ffn.1.b"] = np.zeros(d)
    for ln in ("ln1", "ln2"):
        params[f"{prefix}.{ln}.g"] = np.ones(d)
        params[f"{prefix}.{ln}.b"] = np.zeros(d)


def self_attention(x: Tensor, params, prefix: str, n_heads: int,
                   mask: np.ndarray | None = None, weights_out: list | None = None) -> Tensor:
    n, d = x.shape
    dh = d // n_heads

    def heads(name):
        proj = x @ params[f"{prefix}.attn.{name}.w"] + params[f"{prefix}.attn.{name}.b"]
        return proj.reshape(n, n_heads, dh).transpose(1, 0, 2)

    q, k, v = heads("q"), heads("k"), heads("v")
    scores = (q @ k.transpose(0, 2, 1)) * (1.0 / np.sqrt(dh))
    if mask is not None:
        scores = scores + mask
    att = softmax_last_dim(scores)
    if weights_out is not None:
        weights_out.append(att.data)
    ctx = (att @ v).transpose(1, 0, 2).reshape(n, d)
    return ctx @ params[f"{prefix}.attn.o.w"] + params[f"{prefix}.attn.o.b"]


def encoder_forward(seq, cfg: EncoderConfig, params, prefix: str,
                    mask: np.ndarray | None = None,
                    weights_out: list | None = None) -> Tensor:
    """One pre-norm block: x + MHA(LN(x)), then h + FFN(LN(h)).

    Attention is over all tokens unless an additive ``mask`` is given.
    """
    x = seq.tokens if isinstance(seq, TokenSequence) else seq
    if x.ndim != 2 or x.shape[-1] != cfg.d_model:
        raise DimensionError(f"encoder expects [N, {cfg.d_model}] tokens, got {x.shape}")
    p = params
    h = x + self_attention(
        layer_norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"], cfg.ln_eps),
        p, prefix, cfg.n_heads, mask, weights_out)
    z = layer_norm(h, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"], cfg.ln_eps)
    z = activation(cfg.ffn_activation)(z @ p[f"{prefix}.ffn.0.w"] + p[f"{prefix}.ffn.0.b"])
    return h + (z @ p[f"{prefix}.ffn.1.w"] + p[f"{prefix}.ffn.1.b"])


def same_agent_mask(n_agents: int, n_frames: int) -> np.ndarray:
    """Additive mask restricting frame-major agent tokens to their own track."""
    agent = np.tile(np.arange(n_agents), n_frames)
    return np.where(agent[:, None] == agent[None, :], 0.0, MASKED)
