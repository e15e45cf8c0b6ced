"""Finite-difference gradient checks for every differentiable building block.

Each check runs in float64 with central differences (h = 1e-5) and reports
the maximum relative error ``|analytic - numeric| / max(1, |analytic|)``.
Coordinates within ``h`` of a non-smooth point (Smooth-L1 knee, ReLU and
absolute-value corners, clamp bounds, min ties) are skipped.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Callable

import numpy as np

from .autodiff import ModelParams, Tensor, check_parameters, gradient_check, ops
from .autodiff.gradcheck import GradCheckResult
from .cvae import GaussianParams, condition_vector, decode, kl_divergence, reparameterize
from .data import TrajectoryWindow, center_window
from .encoder import EncoderConfig, TokenSequence, encoder_forward, init_encoder, same_agent_mask
from .losses import PenaltySchedule, best_of_k_loss, weighted_loss
from .model import ModelConfig, TrajectoryModel

H = 1e-5
TOLERANCE = 1e-5


def _near(x, points, h):
    x = np.asarray(x)
    return np.any([np.abs(np.abs(x) - p) <= 4 * h for p in points], axis=0)


def _op_checks(rng) -> dict[str, GradCheckResult]:
    x = rng.normal(size=(3, 4))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    b = rng.normal(size=(4, 5))
    w = rng.normal(size=(3, 4))
    kinks0 = lambda x, h: _near(x, [0.0], h)
    checks: dict[str, tuple[Callable, np.ndarray, Callable | None]] = {
        "add": (lambda t: (t + Tensor(w)).sum(), x, None),
        "sub": (lambda t: ((Tensor(w) - t) * Tensor(w)).sum(), x, None),
        "mul": (lambda t: (t * t * Tensor(w)).sum(), x, None),
        "div": (lambda t: (Tensor(w) / t).sum(), pos, None),
        "neg": (lambda t: (-t * Tensor(w)).sum(), x, None),
        "matmul": (lambda t: ops.tanh(t @ Tensor(b)).sum(), x, None),
        "matmul_batched": (lambda t: (t.reshape(3, 2, 2) @ t.reshape(3, 2, 2)).sum(), x, None),
        "power": (lambda t: ops.power(t, 3.0).sum(), x, None),
        "exp": (lambda t: (ops.exp(t) * Tensor(w)).sum(), x, None),
        "expm1": (lambda t: ops.expm1(t).sum(), x, None),
        "log": (lambda t: ops.log(t).sum(), pos, None),
        "sqrt": (lambda t: ops.sqrt(t).sum(), pos, None),
        "tanh": (lambda t: (ops.tanh(t) * Tensor(w)).sum(), x, None),
        "absolute": (lambda t: (ops.absolute(t) * Tensor(w)).sum(), x, kinks0),
        "relu": (lambda t: (ops.relu(t) * Tensor(w)).sum(), x, kinks0),
        "gelu": (lambda t: (ops.gelu(t) * Tensor(w)).sum(), x, None),
        "clamp": (lambda t: (ops.clamp(t, -0.5, 0.5) * Tensor(w)).sum(), x,
                  lambda x, h: _near(x, [0.5], h)),
        "smooth_l1": (lambda t: (ops.smooth_l1(t * 2.0) * Tensor(w)).sum(), x,
                      lambda x, h: _near(2 * x, [1.0], 2 * h)),
        "sum": (lambda t: (t.sum(axis=0) * Tensor(w[0])).sum(), x, None),
        "mean": (lambda t: (t.mean(axis=1, keepdims=True) * Tensor(w)).sum(), x, None),
        "min_along": (lambda t: (ops.min_along(t, axis=-1) * Tensor(w[:, 0])).sum(), x,
                      lambda x, h: _min_ties(x, h)),
        "softmax": (lambda t: (ops.softmax_last_dim(t) * Tensor(w)).sum(), x, None),
        "layer_norm": (lambda t: (ops.layer_norm(t, Tensor(w[0]), Tensor(w[1])) * Tensor(w)).sum(),
                       x, None),
        "cumsum": (lambda t: (ops.cumsum(t, axis=1) * Tensor(w)).sum(), x, None),
        "reshape": (lambda t: (t.reshape(4, 3) * Tensor(w.reshape(4, 3))).sum(), x, None),
        "transpose": (lambda t: (t.T @ Tensor(w)).sum(), x, None),
        "broadcast_to": (lambda t: (ops.broadcast_to(t[0], (3, 4)) * Tensor(w)).sum(), x, None),
        "getitem": (lambda t: (t[1:, ::2] * t[:2, 1::2]).sum(), x, None),
        "concat": (lambda t: (ops.concat([t, t * 2.0], axis=-1) ** 2).sum(), x, None),
        "stack": (lambda t: (ops.stack([t, ops.tanh(t)], axis=0) * Tensor(w)).sum(), x, None),
    }
    return {f"ops.{name}": gradient_check(f, v.copy(), H, skip)
            for name, (f, v, skip) in checks.items()}


def _min_ties(x, h):
    srt = np.sort(x, axis=-1)
    gap = srt[..., 1] - srt[..., 0] if x.shape[-1] > 1 else np.full(x.shape[:-1], np.inf)
    return np.broadcast_to((gap <= 4 * h)[..., None], x.shape)


def _encoder_checks(rng) -> dict[str, GradCheckResult]:
    cfg = EncoderConfig(8, n_heads=2, d_ffn=12)
    params = ModelParams()
    init_encoder(params, "enc", cfg, rng)
    for t in params.values():
        t.data += rng.normal(scale=0.1, size=t.shape)
    tokens = rng.normal(size=(6, 8))
    w = Tensor(rng.normal(size=(6, 8)))
    mask = same_agent_mask(2, 3)

    def loss(t, m=None):
        return (encoder_forward(TokenSequence(t, []), cfg, params, "enc", m) * w).sum()

    out = {
        "encoder.input": gradient_check(loss, tokens, H),
        "encoder.input_masked": gradient_check(lambda t: loss(t, mask), tokens, H),
    }
    x = Tensor(tokens)
    out["encoder.params"] = check_parameters(lambda: loss(x), params, H)
    return out


def _loss_checks(rng) -> dict[str, GradCheckResult]:
    s = PenaltySchedule("parabolic", 2.0, 1.0, 6)
    gt = rng.normal(size=(2, 6, 2))
    pred = gt + rng.normal(size=(2, 6, 2))
    samples = gt[:, None] + rng.normal(size=(2, 4, 6, 2))
    knee = lambda g: (lambda x, h: _near(x - g, [1.0], h))
    out = {
        "losses.weighted_mse": gradient_check(
            lambda t: weighted_loss(t, gt, s, "mse").sum(), pred, H),
        "losses.weighted_smooth_l1": gradient_check(
            lambda t: weighted_loss(t, gt, s, "smooth_l1").sum(), pred, H, knee(gt)),
    }

    def bok_skip(x, h):
        per = weighted_loss(x, gt[:, None], s, "smooth_l1").data
        return _near(x - gt[:, None], [1.0], h) | _min_ties(per, 1e-3)[..., None, None]

    out["losses.best_of_k"] = gradient_check(
        lambda t: best_of_k_loss(t, gt, s, "smooth_l1").sum(), samples, H, bok_skip)
    return out


def _cvae_checks(rng) -> dict[str, GradCheckResult]:
    mu_p, lv_p = rng.normal(size=(3, 4)), rng.uniform(-2, 2, size=(3, 4))
    mu_q, lv_q = rng.normal(size=(3, 4)), rng.uniform(-2, 2, size=(3, 4))
    noise = rng.normal(size=(3, 4))
    w = Tensor(rng.normal(size=(3, 4)))
    packed = np.concatenate([mu_q, lv_q, mu_p, lv_p], axis=-1)

    def kl(t):
        q = GaussianParams(t[:, 0:4], t[:, 4:8])
        p = GaussianParams(t[:, 8:12], t[:, 12:16])
        return kl_divergence(q, p).sum()

    def rep(t):
        return (reparameterize(GaussianParams(t[:, 0:4], t[:, 4:8]), noise) * w).sum()

    scene = rng.normal(size=(3, 5))
    agents = rng.normal(size=(6, 4))
    lin = Tensor(rng.normal(size=(9, 12)))
    layers = [(Tensor(rng.normal(size=(7, 8)) * 0.5), Tensor(rng.normal(size=8) * 0.1), "tanh"),
              (Tensor(rng.normal(size=(8, 12)) * 0.5), Tensor(np.zeros(12)), "identity")]
    last = rng.normal(size=(2, 2))
    tw = Tensor(rng.normal(size=(2, 6, 2)))
    return {
        "cvae.kl": gradient_check(kl, packed, H),
        "cvae.reparameterize": gradient_check(rep, packed[:, :8].copy(), H),
        "cvae.condition": gradient_check(
            lambda t: ops.tanh(condition_vector(Tensor(scene), t, 2, 3) @ lin).sum(), agents, H),
        "cvae.decode": gradient_check(
            lambda t: (decode(t, layers, last, 6, 2) * tw).sum(), rng.normal(size=(2, 7)), H),
    }


def toy_config(mode: str) -> ModelConfig:
    """A deliberately small model for exhaustive parameter checks."""
    return ModelConfig(mode=mode, t_obs=4, t_pred=6, d_spatial=4, d_temporal=4, d_social=4,
                       d_scene=4, d_latent=5, mlp_hidden=6, rw_steps=3, n_heads=2, d_ffn=8,
                       d_z=3, d_future=5, d_ytilde=6)


def toy_window(rng, t_obs: int = 4, t_pred: int = 6, d_latent: int = 5) -> TrajectoryWindow:
    """Two agents walking roughly side by side."""
    steps = t_obs + t_pred
    start = np.array([[0.0, 0.0], [1.5, 0.8]])
    vel = np.array([[0.4, 0.1], [0.3, -0.2]])
    tracks = start[:, None] + np.arange(steps)[None, :, None] * vel[:, None]
    tracks = tracks + rng.normal(scale=0.05, size=tracks.shape)
    raw = TrajectoryWindow(tracks[:, :t_obs], tracks[:, t_obs:], tuple(range(steps)), (0, 1),
                           np.zeros(2))
    return replace(center_window(raw), scene_latents=rng.normal(size=(t_obs, d_latent)))


def _objective_check(mode: str, rng) -> GradCheckResult:
    cfg = toy_config(mode)
    model = TrajectoryModel(cfg, seed=int(rng.integers(1 << 31)))
    for t in model.params.values():  # move off zero biases and unit gains
        t.data += rng.normal(scale=0.05, size=t.shape)
    window = toy_window(rng, cfg.t_obs, cfg.t_pred, cfg.d_latent)
    s = PenaltySchedule("parabolic", 2.0, 1.0, cfg.t_pred)
    noise = rng.normal(size=(2, 3, cfg.d_z)) if mode == "stochastic" else None
    trace: dict = {}

    def loss():
        return model.objective(window, s, "smooth_l1", noise=noise, trace=trace)

    def regime():
        r = np.abs(trace["residual"]) < 1.0
        if "per_sample" in trace:
            return r, np.argmin(trace["per_sample"], axis=-1)
        return r

    return check_parameters(loss, model.params, H, regime=regime)


MODULES: dict[str, Callable] = {
    "ops": _op_checks,
    "encoder": _encoder_checks,
    "losses": _loss_checks,
    "cvae": _cvae_checks,
    "objective-det": lambda rng: {"objective.deterministic": _objective_check("deterministic", rng)},
    "objective-stoch": lambda rng: {"objective.stochastic": _objective_check("stochastic", rng)},
}


def run_gradcheck(module: str = "all", seed: int = 0) -> dict[str, GradCheckResult]:
    if module != "all" and module not in MODULES:
        raise ValueError(f"unknown module {module!r}; expected 'all' or one of {tuple(MODULES)}")
    names = list(MODULES) if module == "all" else [module]
    out: dict[str, GradCheckResult] = {}
    for i, name in enumerate(names):
        out.update(MODULES[name](np.random.default_rng([seed, i])))
    return out
