import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajcast.autodiff import ModelParams, Tensor
from trajcast.encoder import (
    EncoderConfig,
    TokenSequence,
    assemble_agent_tokens,
    assemble_scene_tokens,
    encoder_forward,
    init_encoder,
    same_agent_mask,
)
from trajcast.errors import DimensionError


def make_encoder(d=16, heads=4, ffn=24, seed=0):
    cfg = EncoderConfig(d, heads, ffn)
    p = ModelParams()
    rng = np.random.default_rng(seed)
    init_encoder(p, "enc", cfg, rng)
    for t in p.values():
        t.data += rng.normal(scale=0.1, size=t.shape)
    return cfg, p


def reference_encoder(x, p, heads, eps=1e-5):
    """Plain numpy pre-norm encoder block with tanh-approximate GELU."""
    a = {k: t.data for k, t in p.items()}

    def ln(v, g, b):
        mu = v.mean(-1, keepdims=True)
        var = ((v - mu) ** 2).mean(-1, keepdims=True)
        return (v - mu) / np.sqrt(var + eps) * g + b

    n, d = x.shape
    dh = d // heads
    y = ln(x, a["enc.ln1.g"], a["enc.ln1.b"])
    q, k, v = (y @ a[f"enc.attn.{m}.w"] + a[f"enc.attn.{m}.b"] for m in "qkv")
    out = np.zeros_like(x)
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        s = q[:, sl] @ k[:, sl].T / np.sqrt(dh)
        w = np.exp(s - s.max(-1, keepdims=True))
        w /= w.sum(-1, keepdims=True)
        out[:, sl] = w @ v[:, sl]
    h1 = x + out @ a["enc.attn.o.w"] + a["enc.attn.o.b"]
    z = ln(h1, a["enc.ln2.g"], a["enc.ln2.b"]) @ a["enc.ffn.0.w"] + a["enc.ffn.0.b"]
    z = 0.5 * z * (1 + np.tanh(np.sqrt(2 / np.pi) * (z + 0.044715 * z ** 3)))
    return h1 + z @ a["enc.ffn.1.w"] + a["enc.ffn.1.b"]


def test_matches_reference_block():
    cfg, p = make_encoder()
    x = np.random.default_rng(1).normal(size=(7, 16))
    np.testing.assert_allclose(encoder_forward(Tensor(x), cfg, p, "enc").data,
                               reference_encoder(x, p, 4), atol=1e-12)


def test_parameter_count_example():
    cfg = EncoderConfig(64, 4, 128)
    p = ModelParams()
    init_encoder(p, "e", cfg, np.random.default_rng(0))
    assert p.count() == cfg.n_params == 33472


def test_heads_must_divide_width():
    with pytest.raises(ValueError):
        EncoderConfig(10, 4)


def test_agent_token_layout():
    a, t = 3, 8
    spatial = np.random.default_rng(0).normal(size=(a, t, 32))
    temporal = np.random.default_rng(1).normal(size=(t, 16))
    social = np.zeros((t, a, 16))
    seq = assemble_agent_tokens(spatial, temporal, social)
    assert seq.tokens.shape == (24, 64) and len(seq) == 24
    tok = seq.tokens.data
    for frame in range(t):
        for agent in range(a):
            row = tok[frame * a + agent]
            np.testing.assert_array_equal(row[:32], spatial[agent, frame])
            np.testing.assert_array_equal(row[32:48], temporal[frame])
            np.testing.assert_array_equal(row[48:], 0.0)
            assert seq.provenance[frame * a + agent] == (agent, frame)


def test_agent_token_mismatch_names_stream():
    with pytest.raises(DimensionError, match="social"):
        assemble_agent_tokens(np.zeros((2, 4, 3)), np.zeros((4, 2)), np.zeros((4, 3, 2)))
    with pytest.raises(DimensionError, match="temporal"):
        assemble_agent_tokens(np.zeros((2, 4, 3)), np.zeros((5, 2)), np.zeros((4, 2, 2)))


def test_scene_tokens():
    same = np.tile(np.arange(48.0), (8, 1))
    temporal = np.random.default_rng(0).normal(size=(8, 16))
    seq = assemble_scene_tokens(same, temporal)
    assert seq.tokens.shape == (8, 64)
    np.testing.assert_array_equal(seq.tokens.data[:, :48], same)
    with pytest.raises(DimensionError):
        assemble_scene_tokens(np.zeros((7, 4)), temporal)


def test_single_token_and_duplicates():
    cfg, p = make_encoder()
    out = encoder_forward(Tensor(np.ones((1, 16))), cfg, p, "enc")
    assert out.shape == (1, 16) and np.all(np.isfinite(out.data))
    x = np.random.default_rng(2).normal(size=(4, 16))
    x[3] = x[1]
    out = encoder_forward(Tensor(x), cfg, p, "enc").data
    np.testing.assert_allclose(out[3], out[1], atol=1e-14)


def test_width_mismatch():
    cfg, p = make_encoder()
    with pytest.raises(DimensionError):
        encoder_forward(Tensor(np.ones((3, 8))), cfg, p, "enc")


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9).flatmap(lambda n: st.permutations(range(n))))
def test_permutation_equivariance(perm):
    cfg, p = make_encoder(seed=3)
    perm = list(perm)
    x = np.random.default_rng(len(perm)).normal(size=(len(perm), 16))
    out = encoder_forward(TokenSequence(Tensor(x), []), cfg, p, "enc").data
    out_p = encoder_forward(TokenSequence(Tensor(x[perm]), []), cfg, p, "enc").data
    np.testing.assert_allclose(out_p, out[perm], atol=1e-10)


def test_attention_rows_sum_to_one_and_outputs_finite():
    cfg, p = make_encoder()
    x = np.random.default_rng(5).uniform(-10, 10, size=(12, 16))
    weights = []
    out = encoder_forward(Tensor(x), cfg, p, "enc", weights_out=weights)
    assert np.all(np.isfinite(out.data))
    np.testing.assert_allclose(weights[0].sum(-1), 1.0, atol=1e-12)


def test_same_agent_mask_blocks_cross_agent_attention():
    cfg, p = make_encoder()
    a, t = 3, 4
    weights = []
    x = np.random.default_rng(6).normal(size=(a * t, 16))
    encoder_forward(Tensor(x), cfg, p, "enc", same_agent_mask(a, t), weights)
    agent = np.tile(np.arange(a), t)
    cross = agent[:, None] != agent[None, :]
    assert np.all(weights[0][:, cross] < 1e-12)
