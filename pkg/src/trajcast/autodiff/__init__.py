"""Minimal float64 tensor library with reverse-mode differentiation."""

from . import tensor as ops
from .gradcheck import GradCheckResult, check_parameters, gradient_check
from .nn import MlpSpec, ModelParams, activation, glorot_uniform, mlp_forward
from .tensor import (
    Tape,
    Tensor,
    active_tape,
    as_tensor,
    backward,
    layer_norm,
    matmul,
    softmax_last_dim,
)

__all__ = [
    "GradCheckResult", "MlpSpec", "ModelParams", "Tape", "Tensor", "activation",
    "active_tape", "as_tensor", "backward", "check_parameters", "glorot_uniform",
    "gradient_check", "layer_norm", "matmul", "mlp_forward", "ops",
    "softmax_last_dim",
]
