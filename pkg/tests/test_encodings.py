import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajcast.autodiff import Tensor
from trajcast.encodings import (
    EmbeddingConfig,
    embed_social,
    embed_spatial,
    project_scene,
    temporal_encoding,
    temporal_table,
)
from trajcast.errors import DimensionError


def layer(w, b, act="identity"):
    return [(Tensor(np.asarray(w, float)), Tensor(np.asarray(b, float)), act)]


def test_temporal_encoding_examples():
    np.testing.assert_array_equal(temporal_encoding(0, 2), [0.0, 1.0])
    np.testing.assert_allclose(temporal_encoding(1, 2), [math.sin(1), math.cos(1e-4)], atol=1e-15)
    np.testing.assert_allclose(temporal_encoding(10, 4),
                               [math.sin(10), math.cos(0.1), math.sin(1e-3), math.cos(1e-5)],
                               atol=1e-15)
    np.testing.assert_allclose(temporal_encoding(10, 4)[:3], [-0.544021, 0.995004, 0.001000],
                               atol=1e-6)


def test_temporal_encoding_literal_index_per_component():
    d, t = 6, 7
    got = temporal_encoding(t, d)
    for i in range(d):
        angle = t / 10000 ** (2 * i / d)
        assert got[i] == pytest.approx(math.sin(angle) if i % 2 == 0 else math.cos(angle), abs=1e-15)


def test_pair_index_option():
    d, t = 6, 3
    got = temporal_encoding(t, d, index="pair")
    for i in range(d):
        angle = t / 10000 ** (2 * (i // 2) / d)
        assert got[i] == pytest.approx(math.sin(angle) if i % 2 == 0 else math.cos(angle), abs=1e-15)
    with pytest.raises(ValueError):
        temporal_encoding(1, 4, index="other")


@pytest.mark.parametrize("d", [4, 8, 16, 32])
def test_temporal_encoding_range_origin_and_injectivity(d):
    tab = temporal_table(21, d)
    assert np.all(np.abs(tab) <= 1)
    np.testing.assert_array_equal(tab[0], np.tile([0.0, 1.0], d // 2))
    gaps = [np.max(np.abs(tab[i] - tab[j])) for i in range(21) for j in range(i)]
    assert min(gaps) > 1e-6


def test_embedding_config():
    cfg = EmbeddingConfig()
    assert cfg.agent_token_dim == 64 and cfg.scene_token_dim == 64
    with pytest.raises(ValueError):
        EmbeddingConfig(d_temporal=5)
    with pytest.raises(ValueError):
        EmbeddingConfig(d_spatial=1)


def test_embed_spatial_examples():
    b = np.array([0.5, -1.0, 2.0])
    out = embed_spatial(np.random.default_rng(0).normal(size=(2, 4, 2)), layer(np.zeros((2, 3)), b))
    np.testing.assert_array_equal(out.data, np.broadcast_to(b, (2, 4, 3)))
    pad = np.hstack([np.eye(2), np.zeros((2, 2))])
    coords = np.random.default_rng(1).normal(size=(3, 5, 2))
    out = embed_spatial(coords, layer(pad, np.zeros(4)))
    np.testing.assert_array_equal(out.data[..., :2], coords)
    np.testing.assert_array_equal(out.data[..., 2:], 0.0)
    same = np.array([[[1.0, 2.0], [0.0, 0.0]], [[0.0, 0.0], [1.0, 2.0]]])
    rng = np.random.default_rng(2)
    out = embed_spatial(same, layer(rng.normal(size=(2, 3)), rng.normal(size=3), "relu"))
    np.testing.assert_array_equal(out.data[0, 0], out.data[1, 1])


def test_embed_spatial_width_mismatch():
    with pytest.raises(DimensionError):
        embed_spatial(np.zeros((1, 2, 4)), layer(np.zeros((2, 3)), np.zeros(3)))


def test_embed_social_examples():
    rng = np.random.default_rng(0)
    rw = rng.uniform(size=(4, 8))
    b = rng.normal(size=5)
    np.testing.assert_array_equal(embed_social(rw, layer(np.zeros((8, 5)), b)).data,
                                  np.broadcast_to(b, (4, 5)))
    net = layer(rng.normal(size=(8, 5)), rng.normal(size=5), "relu")
    perm = [2, 0, 3, 1]
    np.testing.assert_array_equal(embed_social(rw[perm], net).data, embed_social(rw, net).data[perm])
    zero_bias = layer(rng.normal(size=(8, 5)), np.zeros(5), "relu")
    np.testing.assert_array_equal(embed_social(np.zeros((1, 8)), zero_bias).data, 0.0)


def test_project_scene_examples():
    rng = np.random.default_rng(0)
    net = layer(rng.normal(size=(6, 4)), rng.normal(size=4), "relu")
    same = np.tile(rng.normal(size=6), (8, 1))
    out = project_scene(same, net, 8).data
    assert np.all(out == out[0])
    zero = layer(rng.normal(size=(6, 4)), np.zeros(4))
    np.testing.assert_array_equal(project_scene(np.zeros((8, 6)), zero, 8).data, 0.0)
    with pytest.raises(DimensionError):
        project_scene(np.zeros((7, 6)), net, 8)


@settings(max_examples=30, deadline=None)
@given(st.permutations(range(5)))
def test_embeddings_are_tokenwise(perm):
    rng = np.random.default_rng(7)
    coords = rng.normal(size=(5, 3, 2))
    net = layer(rng.normal(size=(2, 4)), rng.normal(size=4), "gelu")
    np.testing.assert_array_equal(embed_spatial(coords[list(perm)], net).data,
                                  embed_spatial(coords, net).data[list(perm)])
