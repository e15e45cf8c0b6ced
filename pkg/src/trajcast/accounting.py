"""Parameter counts and forward-pass FLOP estimates.

FLOP convention: a linear map from ``n_in`` to ``n_out`` features costs
``2 * n_in * n_out`` per row (multiplies and adds counted separately).
Self-attention over ``N`` tokens of width ``d`` adds ``2 * N^2 * d`` for the
scores and ``2 * N^2 * d`` for applying them to the values. Biases,
activations, softmax, layer norm and the cumulative sum are not counted.
"""

from __future__ import annotations

from typing import Mapping, Sequence

from .autodiff import MlpSpec, ModelParams
from .encoder import EncoderConfig
from .model import ModelConfig, TrajectoryModel

FLOP_CONVENTION = (
    "2*in*out per linear map per row; attention 2*N^2*d (scores) + 2*N^2*d (apply); "
    "biases, activations, softmax, layer norm not counted"
)


def count_parameters(model) -> int:
    """Exact number of trainable scalars in a model or parameter mapping."""
    params = model.params if isinstance(model, TrajectoryModel) else model
    if isinstance(params, ModelParams):
        return params.count()
    if isinstance(params, Mapping):
        return int(sum(getattr(v, "size", 0) for v in params.values()))
    raise TypeError(f"cannot count parameters of {type(model).__name__}")


def mlp_param_count(dims: Sequence[int]) -> int:
    """Weights plus biases of a fully connected stack with widths ``dims``."""
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


def encoder_param_count(cfg: EncoderConfig) -> int:
    d, f = cfg.d_model, cfg.d_ffn
    return 4 * (d * d + d) + (d * f + f) + (f * d + d) + 2 * 2 * d


def model_param_count(cfg: ModelConfig) -> int:
    """Analytic count for a model configuration (matches ``count_parameters``)."""
    return (sum(mlp_param_count(s.dims) for s in cfg.mlps().values())
            + encoder_param_count(cfg.agent_encoder) + encoder_param_count(cfg.scene_encoder))


def mlp_flops(spec: MlpSpec, rows: int) -> int:
    return rows * sum(2 * a * b for a, b in zip(spec.dims[:-1], spec.dims[1:]))


def encoder_flops(cfg: EncoderConfig, n_tokens: int) -> int:
    d, f, n = cfg.d_model, cfg.d_ffn, n_tokens
    linear = n * (4 * 2 * d * d + 2 * d * f + 2 * f * d)
    return linear + 2 * 2 * n * n * d


def estimate_flops(model, window_shape: tuple[int, int], k: int = 1) -> int:
    """Forward-pass FLOPs for one window of ``(n_agents, t_obs)``.

    Stochastic models are counted for inference with ``k`` prior samples.
    """
    cfg = model.cfg if isinstance(model, TrajectoryModel) else model
    a, t = window_shape
    specs = cfg.mlps()
    total = mlp_flops(specs["spatial"], a * t) + mlp_flops(specs["social"], a * t)
    total += mlp_flops(specs["scene"], t)
    total += encoder_flops(cfg.agent_encoder, a * t) + encoder_flops(cfg.scene_encoder, t)
    if cfg.mode == "deterministic":
        total += mlp_flops(specs["decoder"], a)
    else:
        total += mlp_flops(specs["prior"], a)
        total += mlp_flops(specs["generator"], a * k) + mlp_flops(specs["decoder"], a * k)
    return int(total)
